"""Synthetic meta-sets: simulated classifier softmax outputs under shift.

Logits for an instance of class y are ``s * onehot(y) + beta * B[y] + noise``
with i.i.d. normal noise of scale ``sigma``; confidences are
``softmax(logits / T)``. Sampling each meta-set's parameters from ranges
gives a corpus whose true accuracies run from near chance to near one.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ConfidenceMatrix, MetaSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_RANGES = {
    "signal": (0.5, 4.0),
    "noise": (0.2, 3.0),
    "temperature": (0.5, 3.0),
    "confusion": (0.0, 2.0),
}


def ring_confusion(num_categories: int) -> np.ndarray:
    """B[y, (y + 1) mod C] = 1, zero elsewhere."""
    b = np.zeros((num_categories, num_categories))
    b[np.arange(num_categories), (np.arange(num_categories) + 1) % num_categories] = 1.0
    return b


@dataclass(frozen=True)
class ShiftParams:
    signal: float
    noise: float
    temperature: float
    confusion: float
    confusion_matrix: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.confusion_matrix, dtype=float)
        p = np.asarray(self.prior, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 2:
            raise ValueError("confusion matrix must be square with C >= 2")
        if np.any(np.diag(b) != 0):
            raise ValueError("confusion matrix must have a zero diagonal")
        if p.shape != (b.shape[0],) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a probability vector of length C")
        if self.signal < 0 or self.noise < 0 or self.confusion < 0 or self.temperature <= 0:
            raise ValueError("signal, noise, confusion must be >= 0 and temperature > 0")
        object.__setattr__(self, "confusion_matrix", b)
        object.__setattr__(self, "prior", p)

    @property
    def num_categories(self) -> int:
        return self.prior.shape[0]

    @classmethod
    def default(cls, num_categories: int, **kw) -> "ShiftParams":
        base = dict(signal=2.0, noise=1.0, temperature=1.0, confusion=0.0,
                    confusion_matrix=ring_confusion(num_categories),
                    prior=np.full(num_categories, 1.0 / num_categories))
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class CorpusConfig:
    num_sets: int = 300
    num_instances: int = 1000
    num_categories: int = 10
    seed: int = 42
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    confusion_matrix: Optional[np.ndarray] = None
    prior: Optional[np.ndarray] = None
    id_prefix: str = "set"

    def __post_init__(self):
        if self.num_sets < 1 or self.num_instances < 3 or self.num_categories < 2:
            raise ValueError("need num_sets >= 1, num_instances >= 3, num_categories >= 2")
        if self.num_instances < self.num_categories:
            raise ValueError("num_instances must be >= num_categories so every category is present")
        ranges = dict(DEFAULT_RANGES)
        for k, v in self.ranges.items():
            if k not in DEFAULT_RANGES:
                raise ValueError(f"unknown range {k!r}")
            lo, hi = float(v[0]), float(v[1])
            if not lo <= hi or lo < 0 or (k == "temperature" and lo <= 0):
                raise ValueError(f"invalid range for {k}: [{lo}, {hi}]")
            ranges[k] = (lo, hi)
        object.__setattr__(self, "ranges", ranges)

    def to_dict(self) -> dict:
        return {
            "num_sets": self.num_sets, "num_instances": self.num_instances,
            "num_categories": self.num_categories, "seed": self.seed,
            "ranges": {k: list(v) for k, v in self.ranges.items()},
            "confusion_matrix": None if self.confusion_matrix is None else np.asarray(self.confusion_matrix).tolist(),
            "prior": None if self.prior is None else np.asarray(self.prior).tolist(),
            "id_prefix": self.id_prefix,
        }


def load_corpus_config(path, **overrides) -> CorpusConfig:
    """Read a TOML config; see ``configs/benchmark.toml`` for the keys."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    kw = {k: doc[k] for k in ("num_sets", "num_instances", "num_categories", "seed", "id_prefix") if k in doc}
    if "ranges" in doc:
        kw["ranges"] = doc["ranges"]
    if "confusion_matrix" in doc:
        kw["confusion_matrix"] = np.array(doc["confusion_matrix"], dtype=float)
    if "prior" in doc:
        kw["prior"] = np.array(doc["prior"], dtype=float)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return CorpusConfig(**kw)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def generate_metaset(params: ShiftParams, num_instances: int, seed, id: str = "",
                     ensure_all_present: bool = True) -> MetaSet:
    """``seed`` may be an int or a ``numpy.random.SeedSequence``."""
    C = params.num_categories
    if ensure_all_present and num_instances < C:
        raise ValueError(f"cannot place all {C} categories in {num_instances} instances")
    rng = np.random.default_rng(seed)
    while True:
        y = rng.choice(C, size=num_instances, p=params.prior)
        if not ensure_all_present or np.unique(y).size == C:
            break
    logits = params.signal * np.eye(C)[y] + params.confusion * params.confusion_matrix[y]
    logits = logits + params.noise * rng.standard_normal((num_instances, C))
    z = _softmax(logits / params.temperature)
    return MetaSet(ConfidenceMatrix(z), y, id=id)


def sample_params(cfg: CorpusConfig, rng: np.random.Generator) -> ShiftParams:
    C = cfg.num_categories
    draw = {k: float(rng.uniform(*cfg.ranges[k])) for k in ("signal", "noise", "temperature", "confusion")}
    b = ring_confusion(C) if cfg.confusion_matrix is None else cfg.confusion_matrix
    p = np.full(C, 1.0 / C) if cfg.prior is None else cfg.prior
    return ShiftParams(confusion_matrix=b, prior=p, **draw)


def generate_one(cfg: CorpusConfig, index: int) -> MetaSet:
    """Meta-set ``index`` of the corpus; depends only on (cfg, index)."""
    child = np.random.SeedSequence(cfg.seed, spawn_key=(index,))
    param_ss, data_ss = child.spawn(2)
    params = sample_params(cfg, np.random.default_rng(param_ss))
    width = len(str(cfg.num_sets - 1))
    return generate_metaset(params, cfg.num_instances, data_ss, id=f"{cfg.id_prefix}{index:0{width}d}")


def generate_corpus(cfg: CorpusConfig, workers: int = 1) -> list:
    """Independent meta-sets, each from its own child seed of ``cfg.seed``, so
    parallel generation reproduces the serial corpus exactly."""
    if workers <= 1:
        return [generate_one(cfg, i) for i in range(cfg.num_sets)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda i: generate_one(cfg, i), range(cfg.num_sets)))
