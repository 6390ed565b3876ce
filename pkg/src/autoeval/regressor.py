"""Multi-branch accuracy regressor.

Network1 reads the flattened ``f_mean`` tensor and Network2 the flattened
``f_cov`` tensor; their rectified outputs are concatenated into the global
feature, from which Network3 regresses overall accuracy. A single category
head, shared by all categories, reads the global feature concatenated with
the category's variance slice ``f_var_all[c]``. Gradients of the category
loss stop at the global feature, so Network1/2/3 are trained by the overall
loss only.

Plain numpy, float64, hand-written backprop and Adam.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import AccuracyVector
from .representation import GROUP_NAMES, SetRepresentation, stack_representations

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
STD_FLOOR = 1e-8
MAIN_BRANCH = ("net1", "net2", "net3")
CATEGORY_BRANCH = ("cat",)


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_categories: int
    groups: tuple = GROUP_NAMES
    use_mean: bool = True
    use_cov: bool = True
    use_var: bool = True
    branch_hidden: tuple = (256, 64)
    global_hidden: tuple = (64,)
    category_hidden: tuple = (64,)
    category_weight: float = 1.0
    output: str = "logistic"

    def __post_init__(self):
        for name in ("groups", "branch_hidden", "global_hidden", "category_hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.num_categories < 2:
            raise ValueError("num_categories must be >= 2")
        if not self.groups:
            raise ValueError("at least one confidence group is required")
        if not (self.use_mean or self.use_cov):
            raise ValueError("at least one of use_mean / use_cov must be enabled")
        if not self.branch_hidden or any(h <= 0 for h in self.branch_hidden + self.global_hidden + self.category_hidden):
            raise ValueError("layer sizes must be positive")
        if self.category_weight < 0:
            raise ValueError("category_weight must be >= 0")
        if self.output != "logistic":
            raise ValueError(f"unsupported output squashing {self.output!r}")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def branch_width(self) -> int:
        return self.branch_hidden[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def layer_sizes(self) -> dict:
        C, g = self.num_categories, self.num_groups
        w = self.branch_width
        sizes = {}
        if self.use_mean:
            sizes["net1"] = [g * C * C, *self.branch_hidden]
        if self.use_cov:
            sizes["net2"] = [g * C * C, *self.branch_hidden]
        sizes["net3"] = [2 * w, *self.global_hidden, 1]
        sizes["cat"] = [2 * w + g * C, *self.category_hidden, 1]
        return sizes


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.batch_size <= 0 or self.eps <= 0:
            raise ValueError("learning rate, epochs, batch size and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decay rates must lie in [0, 1)")


@dataclass
class Model:
    """Configuration, layer parameters (``"<net>.<i>.w"`` / ``".b"``) and input standardization."""

    config: ModelConfig
    params: dict
    standardization: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()},
                     {k: {s: a.copy() for s, a in v.items()} for k, v in self.standardization.items()})


def _n_layers(params: dict, net: str) -> int:
    n = 0
    while f"{net}.{n}.w" in params:
        n += 1
    return n


def init_model(config: ModelConfig, seed: int = 0, standardization: Optional[dict] = None) -> Model:
    """Glorot-uniform weights, zero biases, drawn in fixed layer order."""
    rng = np.random.default_rng(seed)
    params = {}
    for net, sizes in config.layer_sizes().items():
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = np.sqrt(6.0 / (fi + fo))
            params[f"{net}.{i}.w"] = rng.uniform(-lim, lim, size=(fi, fo))
            params[f"{net}.{i}.b"] = np.zeros(fo)
    if standardization is None:
        standardization = identity_standardization(config)
    return Model(config, params, standardization)


def zero_model(config: ModelConfig) -> Model:
    m = init_model(config)
    for a in m.params.values():
        a[...] = 0.0
    return m


def identity_standardization(config: ModelConfig) -> dict:
    C, g = config.num_categories, config.num_groups
    return {
        "mean": {"mean": np.zeros(g * C * C), "std": np.ones(g * C * C)},
        "cov": {"mean": np.zeros(g * C * C), "std": np.ones(g * C * C)},
        "var": {"mean": np.zeros(g * C), "std": np.ones(g * C)},
    }


def fit_standardization(reps: Sequence[SetRepresentation]) -> dict:
    """Per-feature mean/std over the corpus. Variance slices are pooled over
    categories since one head reads every slice."""
    s = stack_representations(reps)
    k = len(reps)
    out = {}
    for key, arr in (("mean", s["f_mean"].reshape(k, -1)), ("cov", s["f_cov"].reshape(k, -1)),
                     ("var", s["f_var_all"].reshape(k * s["f_var_all"].shape[1], -1))):
        out[key] = {"mean": arr.mean(axis=0), "std": np.maximum(arr.std(axis=0), STD_FLOOR)}
    return out


# ------------------------------------------------------------------ forward


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _mlp(params: dict, net: str, x: np.ndarray, relu_last: bool):
    """Returns (output, cache) where cache holds each layer's input and pre-activation."""
    cache = []
    n = _n_layers(params, net)
    h = x
    for i in range(n):
        z = h @ params[f"{net}.{i}.w"] + params[f"{net}.{i}.b"]
        cache.append((h, z))
        h = np.maximum(z, 0.0) if (i < n - 1 or relu_last) else z
    return h, cache


def _mlp_backward(params: dict, net: str, cache, dout: np.ndarray, relu_last: bool, grads: dict, need_input=False):
    n = len(cache)
    d = dout
    for i in reversed(range(n)):
        h, z = cache[i]
        if i < n - 1 or relu_last:
            d = d * (z > 0)
        grads[f"{net}.{i}.w"] = h.T @ d
        grads[f"{net}.{i}.b"] = d.sum(axis=0)
        if i > 0 or need_input:
            d = d @ params[f"{net}.{i}.w"].T
    return d


def prepare_inputs(model: Model, reps: Sequence[SetRepresentation]) -> dict:
    """Stack and standardize a batch; shapes (B, gCC), (B, gCC), (B, C, gC)."""
    cfg = model.config
    C, g = cfg.num_categories, cfg.num_groups
    for r in reps:
        if r.f_mean.shape != (g, C, C) or r.f_cov.shape != (g, C, C) or r.f_var_all.shape != (C, g, C):
            raise ValueError(
                f"representation shape {r.f_mean.shape}/{r.f_var_all.shape} does not match model (g={g}, C={C})")
    s = stack_representations(reps)
    B = len(reps)
    st = model.standardization
    xm = (s["f_mean"].reshape(B, -1) - st["mean"]["mean"]) / st["mean"]["std"]
    xc = (s["f_cov"].reshape(B, -1) - st["cov"]["mean"]) / st["cov"]["std"]
    xv = (s["f_var_all"].reshape(B, C, -1) - st["var"]["mean"]) / st["var"]["std"]
    return {"mean": xm, "cov": xc, "var": xv}


def forward_batch(model: Model, x: dict):
    """Returns (overall (B,), category (B, C), global feature (B, 2w), cache)."""
    cfg, p = model.config, model.params
    B = x["mean"].shape[0]
    C, w = cfg.num_categories, cfg.branch_width
    cache = {}
    parts = []
    for key, net, on in (("mean", "net1", cfg.use_mean), ("cov", "net2", cfg.use_cov)):
        if on:
            h, cache[net] = _mlp(p, net, x[key], relu_last=True)
        else:
            h = np.zeros((B, w))
        parts.append(h)
    gfeat = np.concatenate(parts, axis=1)
    logit, cache["net3"] = _mlp(p, "net3", gfeat, relu_last=False)
    overall = _sigmoid(logit[:, 0])
    xv = x["var"] if cfg.use_var else np.zeros_like(x["var"])
    fusion = np.concatenate([np.broadcast_to(gfeat[:, None, :], (B, C, gfeat.shape[1])), xv], axis=2)
    clogit, cache["cat"] = _mlp(p, "cat", fusion.reshape(B * C, -1), relu_last=False)
    category = _sigmoid(clogit[:, 0]).reshape(B, C)
    return overall, category, gfeat, cache


def forward(model: Model, rep: SetRepresentation):
    """Single representation -> (overall, category predictions (C,), global feature)."""
    o, c, g, _ = forward_batch(model, prepare_inputs(model, [rep]))
    return float(o[0]), c[0], g[0]


def predict(model: Model, rep: SetRepresentation) -> AccuracyVector:
    o, c, _ = forward(model, rep)
    return AccuracyVector(c, o)


def predict_many(model: Model, reps: Sequence[SetRepresentation]) -> list:
    o, c, _, _ = forward_batch(model, prepare_inputs(model, reps))
    return [AccuracyVector(c[i], o[i]) for i in range(len(reps))]


# --------------------------------------------------------------------- loss


def _targets(targets: Sequence[AccuracyVector]):
    a = np.array([t.overall for t in targets], dtype=float)
    ac = np.stack([t.per_category for t in targets])
    return a, ac


def loss_terms(overall, category, a, ac, lam: float):
    """Per-set (overall term, category term); undefined categories (NaN) excluded."""
    mask = ~np.isnan(ac)
    n_def = mask.sum(axis=1)
    sq = np.where(mask, (category - np.where(mask, ac, 0.0)) ** 2, 0.0)
    cat = np.where(n_def > 0, sq.sum(axis=1) / np.maximum(n_def, 1), 0.0)
    return (overall - a) ** 2, lam * cat


def loss(pred: AccuracyVector, target: AccuracyVector, lam: float = 1.0):
    """L2 loss of one prediction; returns (total, {"overall": ..., "category": ...})."""
    o, c = loss_terms(np.array([pred.overall]), pred.per_category[None, :],
                      np.array([target.overall]), target.per_category[None, :], lam)
    return float(o[0] + c[0]), {"overall": float(o[0]), "category": float(c[0])}


# ----------------------------------------------------------------- backward


def gradients_batch(model: Model, x: dict, a: np.ndarray, ac: np.ndarray, lam: float):
    """Gradients of the mean per-set loss with the global feature detached
    from the category term. Returns (grads, mean total loss)."""
    cfg, p = model.config, model.params
    B, C = ac.shape
    overall, category, gfeat, cache = forward_batch(model, x)
    lo, lc = loss_terms(overall, category, a, ac, lam)

    grads = {}
    d_logit = (2.0 * (overall - a) * overall * (1.0 - overall) / B)[:, None]
    d_g = _mlp_backward(p, "net3", cache["net3"], d_logit, False, grads, need_input=True)
    w = cfg.branch_width
    for net, on, sl in (("net1", cfg.use_mean, slice(0, w)), ("net2", cfg.use_cov, slice(w, 2 * w))):
        if on:
            _mlp_backward(p, net, cache[net], d_g[:, sl], True, grads)

    mask = ~np.isnan(ac)
    n_def = np.maximum(mask.sum(axis=1, keepdims=True), 1)
    resid = np.where(mask, category - np.where(mask, ac, 0.0), 0.0)
    d_clogit = lam * 2.0 * resid * category * (1.0 - category) / n_def / B
    # the input gradient of the category head is discarded: that is the detach
    _mlp_backward(p, "cat", cache["cat"], d_clogit.reshape(B * C, 1), False, grads)
    return grads, float(np.mean(lo + lc))


def backward(model: Model, rep: SetRepresentation, target: AccuracyVector, lam: Optional[float] = None) -> dict:
    """Gradient bundle for one meta-set: {"main": {...}, "category": {...}}."""
    if lam is None:
        lam = model.config.category_weight
    a, ac = _targets([target])
    grads, _ = gradients_batch(model, prepare_inputs(model, [rep]), a, ac, lam)
    return split_bundle(grads)


def split_bundle(grads: dict) -> dict:
    return {
        "main": {k: v for k, v in grads.items() if k.split(".")[0] in MAIN_BRANCH},
        "category": {k: v for k, v in grads.items() if k.split(".")[0] in CATEGORY_BRANCH},
    }


# -------------------------------------------------------------------- train


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k in params:  # insertion order: deterministic
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


def _init_output_bias(model: Model, net: str, target: float) -> None:
    # start the head at the mean target; with zero input variation (e.g. a
    # one-set corpus) the rectified branches are inert and only biases can move
    p = min(max(target, 1e-3), 1.0 - 1e-3)
    model.params[f"{net}.{_n_layers(model.params, net) - 1}.b"][:] = np.log(p / (1.0 - p))


def train(corpus: Sequence, cfg: TrainConfig, mcfg: ModelConfig):
    """Fit on ``(SetRepresentation, AccuracyVector)`` pairs.

    Returns (model, loss trace) where the trace holds the full-corpus mean
    loss after each epoch.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    reps = [r for r, _ in corpus]
    std = fit_standardization(reps)
    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = init_model(mcfg, int(init_ss.generate_state(1)[0]), std)
    shuffle = np.random.default_rng(shuffle_ss)
    x = prepare_inputs(model, reps)
    a, ac = _targets([t for _, t in corpus])
    _init_output_bias(model, "net3", float(np.mean(a)))
    if np.any(~np.isnan(ac)):
        _init_output_bias(model, "cat", float(np.nanmean(ac)))
    lam = mcfg.category_weight
    opt = Adam(model.params, cfg)
    k = len(corpus)
    trace = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(k)
        for start in range(0, k, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = {key: val[idx] for key, val in x.items()}
            grads, _ = gradients_batch(model, xb, a[idx], ac[idx], lam)
            opt.step(model.params, grads)
        o, c, _, _ = forward_batch(model, x)
        lo, lc = loss_terms(o, c, a, ac, lam)
        trace.append(float(np.mean(lo + lc)))
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.6g", epoch, trace[-1])
    return model, trace


# ---------------------------------------------------------------- model file


def save_model(model: Model, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "standardization": {k: {s: a.tolist() for s, a in v.items()} for k, v in model.standardization.items()},
        "parameters": {},
    }
    for net, sizes in model.config.layer_sizes().items():
        for i in range(len(sizes) - 1):
            doc["parameters"][f"{net}.{i}"] = {
                "w": model.params[f"{net}.{i}.w"].tolist(),
                "b": model.params[f"{net}.{i}.b"].tolist(),
            }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_model(path) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: cannot parse model file ({exc})") from None
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model format_version {doc.get('format_version')!r}")
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
        std = {k: {s: np.array(a, dtype=float) for s, a in v.items()} for k, v in doc["standardization"].items()}
        raw = doc["parameters"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: incomplete model file ({exc})") from None
    params = {}
    for net, sizes in cfg.layer_sizes().items():
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            layer = raw.get(f"{net}.{i}")
            if layer is None:
                raise ModelFormatError(f"{path}: missing layer {net}.{i}")
            w = np.array(layer["w"], dtype=float)
            b = np.array(layer["b"], dtype=float)
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ModelFormatError(f"{path}: layer {net}.{i} has shape {w.shape}/{b.shape}, expected {(fi, fo)}")
            params[f"{net}.{i}.w"] = w
            params[f"{net}.{i}.b"] = b
    ref = identity_standardization(cfg)
    for k, v in ref.items():
        for s, a in v.items():
            if std.get(k, {}).get(s) is None or std[k][s].shape != a.shape:
                raise ModelFormatError(f"{path}: standardization {k}.{s} has wrong shape")
    return Model(cfg, params, std)
