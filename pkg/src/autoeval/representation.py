"""Confidence-group set representation of a dataset.

For every category ``d`` all N instances are ranked by their confidence for
``d`` and cut into High / Medium / Low groups. Each group yields three
C-vectors: the mean confidence vector, the covariance of every coordinate with
coordinate ``d``, and the coordinatewise variance. Stacked over categories
these give ``f_mean`` (g, C, C), ``f_cov`` (g, C, C) and ``f_var_all``
(C, g, C), where ``f_var_all[c, g, d]`` is the variance of coordinate ``c``
inside group ``g`` of category ``d``.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ConfidenceMatrix

GROUP_NAMES = ("high", "medium", "low")


@dataclass(frozen=True)
class GroupConfig:
    mode: str = "quantile"
    t_low: float = 1 / 3
    t_high: float = 2 / 3
    groups: tuple = GROUP_NAMES

    def __post_init__(self):
        if self.mode not in ("quantile", "fixed"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        gs = tuple(g.lower() for g in self.groups)
        unknown = set(gs) - set(GROUP_NAMES)
        if unknown:
            raise ValueError(f"unknown confidence groups {sorted(unknown)}")
        if not gs:
            raise ValueError("at least one confidence group must be enabled")
        # canonical high -> low order, duplicates dropped
        object.__setattr__(self, "groups", tuple(g for g in GROUP_NAMES if g in gs))
        if not (0.0 < self.t_low < self.t_high < 1.0):
            raise ValueError("thresholds must satisfy 0 < t_low < t_high < 1")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "t_low": self.t_low, "t_high": self.t_high, "groups": list(self.groups)}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupConfig":
        return cls(d["mode"], d["t_low"], d["t_high"], tuple(d["groups"]))


@dataclass(frozen=True)
class GroupSplit:
    """``members[d][k]`` holds instance indices of enabled group k for category d,
    in accumulation order (descending confidence)."""

    groups: tuple
    members: list


def quantile_sizes(n: int) -> tuple:
    h = math.ceil(n / 3)
    m = math.ceil((n - h) / 2)
    return h, m, n - h - m


def _rank(values: np.ndarray, c: int) -> np.ndarray:
    # descending by z[c]; ties resolved by the whole row (descending, lexicographic)
    # so that equal keys never depend on row position, then by index
    keys = tuple(-values[:, j] for j in reversed(range(values.shape[1]))) + (-values[:, c],)
    return np.lexsort(keys)


def split_groups(matrix: ConfidenceMatrix, cfg: GroupConfig = GroupConfig()) -> GroupSplit:
    v = matrix.values
    n, C = v.shape
    if cfg.mode == "quantile" and n < 3:
        raise ValueError("quantile split needs at least 3 instances")
    members = []
    for c in range(C):
        order = _rank(v, c)
        if cfg.mode == "quantile":
            h, m, _ = quantile_sizes(n)
            blocks = {"high": order[:h], "medium": order[h:h + m], "low": order[h + m:]}
        else:
            s = v[order, c]
            blocks = {
                "high": order[s >= cfg.t_high],
                "medium": order[(s >= cfg.t_low) & (s < cfg.t_high)],
                "low": order[s < cfg.t_low],
            }
        members.append([blocks[g] for g in cfg.groups])
    return GroupSplit(cfg.groups, members)


def _check(group) -> np.ndarray:
    z = np.asarray(group, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("group statistics need a nonempty (n, C) group")
    return z


def group_mean(group) -> np.ndarray:
    z = _check(group)
    n = z.shape[0]
    mu = z.sum(axis=0) / n
    # one correction pass: exact for constant groups, tighter in general
    return mu + (z - mu).sum(axis=0) / n


def group_cov(group, c: int) -> np.ndarray:
    """Mean over members of (z - mu) * (z - mu)[c]."""
    z = _check(group)
    dev = z - group_mean(z)
    return (dev * dev[:, c:c + 1]).sum(axis=0) / z.shape[0]


def group_var(group) -> np.ndarray:
    z = _check(group)
    dev = z - group_mean(z)
    return (dev * dev).sum(axis=0) / z.shape[0]


@dataclass(frozen=True)
class SetRepresentation:
    f_mean: np.ndarray  # (g, C, C)
    f_cov: np.ndarray  # (g, C, C)
    f_var_all: np.ndarray  # (C, g, C)
    group_presence: np.ndarray  # (C, g) bool

    @property
    def num_groups(self) -> int:
        return self.f_mean.shape[0]

    @property
    def num_categories(self) -> int:
        return self.f_mean.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "f_mean": self.f_mean.tolist(),
            "f_cov": self.f_cov.tolist(),
            "f_var_all": self.f_var_all.tolist(),
            "group_presence": self.group_presence.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SetRepresentation":
        d = json.loads(text)
        return cls(np.array(d["f_mean"], dtype=float), np.array(d["f_cov"], dtype=float),
                   np.array(d["f_var_all"], dtype=float), np.array(d["group_presence"], dtype=bool))


def extract_representation(matrix: ConfidenceMatrix, cfg: GroupConfig = GroupConfig()) -> SetRepresentation:
    v = matrix.values
    C = v.shape[1]
    g = cfg.num_groups
    split = split_groups(matrix, cfg)
    f_mean = np.zeros((g, C, C))
    f_cov = np.zeros((g, C, C))
    var = np.zeros((g, C, C))
    present = np.zeros((C, g), dtype=bool)
    for d in range(C):
        for k, idx in enumerate(split.members[d]):
            if idx.size == 0:
                continue
            z = v[idx]
            present[d, k] = True
            f_mean[k, d] = group_mean(z)
            f_cov[k, d] = group_cov(z, d)
            var[k, d] = group_var(z)
    f_var_all = np.ascontiguousarray(var.transpose(2, 0, 1))
    return SetRepresentation(f_mean, f_cov, f_var_all, present)


def stack_representations(reps: Sequence[SetRepresentation]) -> dict:
    return {
        "f_mean": np.stack([r.f_mean for r in reps]),
        "f_cov": np.stack([r.f_cov for r in reps]),
        "f_var_all": np.stack([r.f_var_all for r in reps]),
        "group_presence": np.stack([r.group_presence for r in reps]),
    }


def save_representations(path, ids: Sequence[str], reps: Sequence[SetRepresentation], cfg: GroupConfig) -> None:
    """Representation cache: one ``.npz`` holding stacked tensors, ids and the split config."""
    arrays = {"ids": np.array(list(ids), dtype=str), "group_config": np.array(json.dumps(cfg.to_dict()))}
    arrays.update(stack_representations(reps))
    # fixed member timestamps keep the file byte-reproducible
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_representations(path) -> tuple:
    """Returns (ids, reps, GroupConfig)."""
    with np.load(path, allow_pickle=False) as z:
        ids = [str(i) for i in z["ids"]]
        cfg = GroupConfig.from_dict(json.loads(str(z["group_config"].reshape(-1)[0])))
        fm, fc, fv, gp = (z[k] for k in ("f_mean", "f_cov", "f_var_all", "group_presence"))
    reps = [SetRepresentation(fm[i], fc[i], fv[i], gp[i]) for i in range(len(ids))]
    return ids, reps, cfg
