"""Evaluation metrics, prediction files and end-to-end experiment drivers."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .data import AccuracyVector, DataError, MetaSet
from .metaset import CorpusConfig, generate_corpus
from .regressor import ModelConfig, TrainConfig, predict_many, train
from .representation import GROUP_NAMES, GroupConfig, extract_representation

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    overall_rmse_pct: float
    category_rmse_pct: float
    num_sets: int
    num_category_pairs: int
    per_category_rmse_pct: list
    residuals: list
    baselines: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    category_pooling: str = "all (set, category) pairs with both values defined"

    def to_dict(self) -> dict:
        return {
            "overall_rmse_pct": self.overall_rmse_pct,
            "category_rmse_pct": self.category_rmse_pct,
            "num_sets": self.num_sets,
            "num_category_pairs": self.num_category_pairs,
            "category_pooling": self.category_pooling,
            "per_category_rmse_pct": self.per_category_rmse_pct,
            "baselines": self.baselines,
            "config": self.config,
            "residuals": self.residuals,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        rows = [("model", self.overall_rmse_pct, self.category_rmse_pct)]
        rows += [(b["method"], b["overall_rmse_pct"], b["category_rmse_pct"]) for b in self.baselines]
        width = max(len(r[0]) for r in rows)
        lines = [f"{'method':<{width}}  {'overall RMSE %':>14}  {'category RMSE %':>15}"]
        lines += [f"{name:<{width}}  {o:>14.2f}  {c:>15.2f}" for name, o, c in rows]
        return "\n".join(lines)


def _rmse_pct(sq: np.ndarray) -> float:
    return float(100.0 * np.sqrt(sq.mean())) if sq.size else float("nan")


def evaluate(predictions: Sequence[AccuracyVector], truths: Sequence[AccuracyVector],
             ids: Optional[Sequence[str]] = None) -> EvalReport:
    """Overall RMSE over sets and category RMSE pooled over every defined
    (set, category) pair, both in percentage points."""
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} ground-truth sets")
    if not truths:
        raise ValueError("nothing to evaluate")
    if ids is None:
        ids = [str(i) for i in range(len(truths))]
    po = np.array([p.overall for p in predictions])
    to = np.array([t.overall for t in truths])
    pc = np.stack([p.per_category for p in predictions])
    tc = np.stack([t.per_category for t in truths])
    if pc.shape != tc.shape:
        raise ValueError(f"category count mismatch: {pc.shape[1]} predicted vs {tc.shape[1]} true")
    mask = ~np.isnan(pc) & ~np.isnan(tc)
    sq_c = (pc - tc) ** 2
    per_cat = [_rmse_pct(sq_c[mask[:, c], c]) for c in range(tc.shape[1])]
    residuals = [
        {"id": i, "overall_pred": float(a), "overall_true": float(b), "residual": float(a - b)}
        for i, a, b in zip(ids, po, to)
    ]
    return EvalReport(
        overall_rmse_pct=_rmse_pct((po - to) ** 2),
        category_rmse_pct=_rmse_pct(sq_c[mask]),
        num_sets=len(truths),
        num_category_pairs=int(mask.sum()),
        per_category_rmse_pct=[None if np.isnan(v) else v for v in per_cat],
        residuals=residuals,
    )


# ----------------------------------------------------------- predictions CSV


def write_predictions(path, ids: Sequence[str], preds: Sequence[AccuracyVector]) -> None:
    C = preds[0].num_categories
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["id", "overall"] + [f"a{c}" for c in range(C)]) + "\n")
        for i, p in zip(ids, preds):
            cells = [i, repr(float(p.overall))] + ["" if np.isnan(a) else repr(float(a)) for a in p.per_category]
            fh.write(",".join(cells) + "\n")


def read_predictions(path) -> tuple:
    """Returns (ids, AccuracyVectors); empty category cells are undefined."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"{path}: empty predictions file")
    header = lines[0].split(",")
    C = len(header) - 2
    if header[:2] != ["id", "overall"] or header[2:] != [f"a{c}" for c in range(C)]:
        raise DataError(f"{path}:1: bad predictions header")
    ids, preds = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        f = line.split(",")
        if len(f) != C + 2:
            raise DataError(f"{path}:{lineno}: expected {C + 2} fields, got {len(f)}")
        try:
            preds.append(AccuracyVector.from_lists([float(x) if x else None for x in f[2:]], float(f[1])))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        ids.append(f[0])
    return ids, preds


# ------------------------------------------------------------------- drivers


def extract_all(corpus: Sequence[MetaSet], gcfg: GroupConfig) -> list:
    return [extract_representation(m.matrix, gcfg) for m in corpus]


def baseline_predictions(corpus: Sequence[MetaSet], bcfg: BaselineConfig) -> list:
    return [run_baseline(m.matrix, bcfg) for m in corpus]


BENCHMARK_BASELINES = (
    BaselineConfig("ps", tau1=0.8), BaselineConfig("ps", tau1=0.9),
    BaselineConfig("es", tau2=0.2), BaselineConfig("es", tau2=0.3),
    BaselineConfig("ac"),
)


@dataclass
class BenchmarkResult:
    report: EvalReport
    baselines: dict  # label -> EvalReport
    loss_trace: list
    model: object


def benchmark_corpora(num_train: int = 300, num_test: int = 100, num_instances: int = 1000,
                      num_categories: int = 10, seed: int = 42) -> tuple:
    """Train corpus from ``seed``, held-out test corpus from ``seed + 1``."""
    train_c = generate_corpus(CorpusConfig(num_train, num_instances, num_categories, seed, id_prefix="train"))
    test_c = generate_corpus(CorpusConfig(num_test, num_instances, num_categories, seed + 1, id_prefix="test"))
    return train_c, test_c


def run_benchmark(train_corpus: Sequence[MetaSet], test_corpus: Sequence[MetaSet],
                  gcfg: GroupConfig = GroupConfig(), tcfg: TrainConfig = TrainConfig(seed=42),
                  ablate: Sequence[str] = (), lam: float = 1.0,
                  baselines: Sequence[BaselineConfig] = BENCHMARK_BASELINES) -> BenchmarkResult:
    C = train_corpus[0].num_categories
    mcfg = ModelConfig(C, gcfg.groups, use_mean="mean" not in ablate, use_cov="cov" not in ablate,
                       use_var="var" not in ablate, category_weight=lam)
    train_reps = extract_all(train_corpus, gcfg)
    test_reps = extract_all(test_corpus, gcfg)
    model, trace = train(list(zip(train_reps, [m.accuracy for m in train_corpus])), tcfg, mcfg)
    truths = [m.accuracy for m in test_corpus]
    ids = [m.id for m in test_corpus]
    report = evaluate(predict_many(model, test_reps), truths, ids)
    report.config = {"model": mcfg.to_dict(), "groups": gcfg.to_dict(), "train": vars(tcfg).copy()}
    base = {}
    for b in baselines:
        r = evaluate(baseline_predictions(test_corpus, b), truths, ids)
        base[b.label] = r
        report.baselines.append({"method": b.label, "overall_rmse_pct": r.overall_rmse_pct,
                                 "category_rmse_pct": r.category_rmse_pct})
    return BenchmarkResult(report, base, trace, model)


def group_subsets() -> list:
    """All 7 nonempty subsets of the confidence groups, high -> low order."""
    out = []
    for mask in range(7, 0, -1):
        out.append(tuple(g for i, g in enumerate(GROUP_NAMES) if mask & (4 >> i)))
    return out


def group_ablation(train_corpus, test_corpus, tcfg: TrainConfig = TrainConfig(seed=42), mode: str = "quantile") -> list:
    """One RMSE row per nonempty group subset."""
    rows = []
    for groups in group_subsets():
        res = run_benchmark(train_corpus, test_corpus, GroupConfig(mode, groups=groups), tcfg, baselines=())
        rows.append({"groups": list(groups), "overall_rmse_pct": res.report.overall_rmse_pct,
                     "category_rmse_pct": res.report.category_rmse_pct})
        log.info("groups=%s overall=%.2f category=%.2f", ",".join(groups),
                 rows[-1]["overall_rmse_pct"], rows[-1]["category_rmse_pct"])
    return rows
