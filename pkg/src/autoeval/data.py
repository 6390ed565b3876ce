"""Datasets of softmax confidences, labels, accuracy targets and their file formats.

Categories and labels are 0-based. An undefined per-category accuracy (no
instance carries that label) is stored as NaN in memory and as ``null`` in
JSON; it is excluded from losses and RMSE.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ROW_SUM_TOL = 1e-6
# rows closer to 1 than this are kept verbatim so that save/load is an identity
_RENORM_TOL = 1e-12
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Raised for malformed confidence data or corpus files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConfidenceMatrix:
    """N x C row-stochastic matrix of softmax outputs."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"confidence matrix must be 2-D, got shape {v.shape}")
        n, c = v.shape
        if n < 3:
            raise DataError(f"need at least 3 instances, got {n}")
        if c < 2:
            raise DataError(f"need at least 2 categories, got {c}")
        if not np.all(np.isfinite(v)):
            raise DataError("confidence matrix contains non-finite entries")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DataError("confidence entries must lie in [0, 1]")
        sums = v.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            i = int(bad[0])
            raise DataError(f"row-sum violation at row {i}: sum={sums[i]!r}")
        off = np.abs(sums - 1.0) > _RENORM_TOL
        if off.any():
            v[off] /= sums[off, None]
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_instances(self) -> int:
        return self.values.shape[0]

    @property
    def num_categories(self) -> int:
        return self.values.shape[1]

    @property
    def predictions(self) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest index
        return np.argmax(self.values, axis=1)


def validate_labels(labels, num_instances: int, num_categories: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != num_instances:
        raise DataError(f"expected {num_instances} labels, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_categories):
        raise DataError(f"label out of range for {num_categories} categories")
    return _frozen(y)


@dataclass(frozen=True)
class AccuracyVector:
    """Per-category accuracies (NaN = undefined) plus the overall accuracy."""

    per_category: np.ndarray
    overall: float

    def __post_init__(self):
        pc = np.array(self.per_category, dtype=np.float64).reshape(-1)
        ov = float(self.overall)
        if not (0.0 <= ov <= 1.0):
            raise DataError(f"overall accuracy {ov} outside [0, 1]")
        d = pc[~np.isnan(pc)]
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise DataError("per-category accuracy outside [0, 1]")
        object.__setattr__(self, "per_category", _frozen(pc))
        object.__setattr__(self, "overall", ov)

    @property
    def num_categories(self) -> int:
        return self.per_category.shape[0]

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.per_category)

    def category_list(self) -> list:
        """Per-category values with None for undefined entries (JSON-ready)."""
        return [None if np.isnan(a) else float(a) for a in self.per_category]

    @classmethod
    def from_lists(cls, per_category: Sequence, overall: float) -> "AccuracyVector":
        return cls(np.array([np.nan if a is None else a for a in per_category], dtype=float), overall)

    def equals(self, other: "AccuracyVector") -> bool:
        return self.overall == other.overall and np.array_equal(
            self.per_category, other.per_category, equal_nan=True
        )


def compute_accuracy(matrix: ConfidenceMatrix, labels) -> AccuracyVector:
    """Ground-truth accuracy of argmax predictions against ``labels``."""
    y = validate_labels(labels, matrix.num_instances, matrix.num_categories)
    correct = matrix.predictions == y
    counts = np.bincount(y, minlength=matrix.num_categories)
    hits = np.bincount(y, weights=correct, minlength=matrix.num_categories)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return AccuracyVector(per, int(correct.sum()) / matrix.num_instances)


@dataclass(frozen=True)
class MetaSet:
    matrix: ConfidenceMatrix
    labels: Optional[np.ndarray] = None
    accuracy: Optional[AccuracyVector] = None
    id: str = ""

    def __post_init__(self):
        if not isinstance(self.matrix, ConfidenceMatrix):
            object.__setattr__(self, "matrix", ConfidenceMatrix(self.matrix))
        if self.labels is None:
            return
        m = self.matrix
        y = validate_labels(self.labels, m.num_instances, m.num_categories)
        object.__setattr__(self, "labels", y)
        truth = compute_accuracy(m, y)
        if self.accuracy is None:
            object.__setattr__(self, "accuracy", truth)
        elif not self.accuracy.equals(truth):
            raise DataError(f"meta-set {self.id!r}: stored accuracy disagrees with labels")

    @property
    def num_categories(self) -> int:
        return self.matrix.num_categories


# ---------------------------------------------------------------- CSV format


def _fmt(x: float) -> str:
    # shortest repr that round-trips the double exactly (17 significant digits max)
    return repr(float(x))


def write_confidence_csv(meta: MetaSet, path) -> None:
    c = meta.num_categories
    header = [f"c{j}" for j in range(c)]
    has_labels = meta.labels is not None
    if has_labels:
        header = ["label"] + header
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(meta.matrix.values):
            cells = [_fmt(v) for v in row]
            if has_labels:
                cells.insert(0, str(int(meta.labels[i])))
            fh.write(",".join(cells) + "\n")


def load_confidence_csv(path, id: Optional[str] = None) -> MetaSet:
    """Parse a confidence CSV; labels are present iff the header starts with ``label``."""
    path = Path(path)
    if id is None:
        id = path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_labels = bool(header) and header[0] == "label"
        cols = header[1:] if has_labels else header
        if len(cols) < 2 or cols != [f"c{j}" for j in range(len(cols))]:
            raise DataError(f"{path}:1: bad header {','.join(header)!r}")
        c = len(cols)
        width = len(header)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width:
                raise DataError(f"{path}:{lineno}: malformed row, expected {width} fields got {len(rec)}")
            try:
                vals = [float(f) for f in rec[1:]] if has_labels else [float(f) for f in rec]
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row, non-numeric field") from None
            if not all(np.isfinite(vals)) or min(vals) < 0.0 or max(vals) > 1.0:
                raise DataError(f"{path}:{lineno}: malformed row, entries must lie in [0, 1]")
            s = sum(vals)
            if abs(s - 1.0) > ROW_SUM_TOL:
                raise DataError(f"{path}:{lineno}: row-sum violation (sum={s!r})")
            if has_labels:
                try:
                    lab = int(rec[0])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed row, bad label {rec[0]!r}") from None
                if not 0 <= lab < c:
                    raise DataError(f"{path}:{lineno}: label {lab} out of range for {c} categories")
                labels.append(lab)
            rows.append(vals)
    if len(rows) < 3:
        raise DataError(f"{path}: need at least 3 instances, got {len(rows)}")
    matrix = ConfidenceMatrix(np.array(rows, dtype=np.float64))
    return MetaSet(matrix, np.array(labels, dtype=np.int64) if has_labels else None, id=id)


# ----------------------------------------------------------- corpus manifest


def save_corpus(corpus: Sequence[MetaSet], directory) -> Path:
    """Write one CSV per meta-set plus ``manifest.json``; returns the manifest path."""
    corpus = list(corpus)
    if not corpus:
        raise DataError("cannot save an empty corpus")
    cs = {m.num_categories for m in corpus}
    if len(cs) != 1:
        raise DataError(f"mixed category counts in corpus: {sorted(cs)}")
    ids = [m.id for m in corpus]
    if len(set(ids)) != len(ids) or any(not i for i in ids):
        raise DataError("meta-set ids must be unique and nonempty")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in corpus:
        rel = f"{m.id}.csv"
        write_confidence_csv(m, directory / rel)
        entry = {"id": m.id, "path": rel}
        if m.accuracy is not None:
            entry["overall_acc"] = m.accuracy.overall
            entry["category_acc"] = m.accuracy.category_list()
        entries.append(entry)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "num_categories": cs.pop(),
        "meta_sets": entries,
    }
    out = directory / MANIFEST_NAME
    out.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return out


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def read_manifest(path) -> dict:
    path = _manifest_path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest JSON ({exc})") from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest format_version {doc.get('format_version')!r}")
    for key in ("num_categories", "meta_sets"):
        if key not in doc:
            raise DataError(f"{path}: manifest missing {key!r}")
    return doc


def manifest_accuracies(path) -> dict:
    """Map meta-set id -> AccuracyVector for every manifest entry carrying accuracies."""
    doc = read_manifest(path)
    out = {}
    for e in doc["meta_sets"]:
        if "overall_acc" in e:
            out[e["id"]] = AccuracyVector.from_lists(e["category_acc"], e["overall_acc"])
    return out


def load_corpus(path) -> list[MetaSet]:
    """Load every meta-set listed in a manifest (file or containing directory)."""
    mpath = _manifest_path(path)
    doc = read_manifest(mpath)
    c = doc["num_categories"]
    corpus = []
    for e in doc["meta_sets"]:
        m = load_confidence_csv(mpath.parent / e["path"], id=e["id"])
        if m.num_categories != c:
            raise DataError(f"{e['path']}: has {m.num_categories} categories, manifest says {c}")
        if "overall_acc" in e:
            stored = AccuracyVector.from_lists(e["category_acc"], e["overall_acc"])
            if m.labels is not None and not stored.equals(m.accuracy):
                raise DataError(f"{e['path']}: manifest accuracy disagrees with labels")
            if m.labels is None:
                m = MetaSet(m.matrix, None, stored, m.id)
        corpus.append(m)
    return corpus
