"""Correlator convolutional network: maps, pooling, BatchNorm and logistic head.

Parameters are stored raw and mapped to their constrained forms on every
pass: filters ``f = |raw|``, spatial weight ``w = D4-average(raw_w)``.

Symmetrization sums over the group with the filter and the map transformed
together, ``C_sym = sum_g g.C[f o g](dn) = sum_g C[f](g.dn)``, so pooled
features and predictions are invariant under point-group moves of the input
for any filter. Since ``w`` is itself symmetric, pooling the symmetrized map
equals pooling the plain maps of the 8 transformed filters, which is how the
batched forward pass evaluates it (bank index ``g * n_filters + alpha``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import d4, kernels
from .core import zero_pad
from .errors import DataError, NumericalError

CHECKPOINT_FORMAT = "hybrid-ccnn-model"
CHECKPOINT_VERSION = 1


# ------------------------------------------------------- map-level ops

def conv_full(dn, f) -> np.ndarray:
    """Cross-correlation over the zero-padded map; output ``(L+F-1)`` square.

    ``out[x] = sum_a f[a] * pad(dn, F-1)[x + a]``.
    """
    dn = np.asarray(dn, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise DataError("filters must be square 2D arrays")
    x = zero_pad(dn, f.shape[0] - 1)
    return kernels.correlate_valid(x[None], f[None])[0, 0]


def correlator_maps(dn, f, m_max: int) -> list:
    """``[C1, ..., C_m_max]`` from power sums of the filter-weighted window."""
    if m_max not in (1, 2, 3):
        raise DataError("m_max must be 1, 2 or 3")
    f = np.asarray(f, dtype=np.float64)
    dn = np.asarray(dn, dtype=np.float64)
    c1 = conv_full(dn, f)
    maps = [c1]
    if m_max >= 2:
        s2 = conv_full(dn ** 2, f ** 2)
        maps.append(c1 * c1 - s2)
    if m_max >= 3:
        s3 = conv_full(dn ** 3, f ** 3)
        maps.append(c1 ** 3 - 3.0 * c1 * s2 + 2.0 * s3)
    return maps


def d4_symmetrized_maps(dn, f, m: int) -> np.ndarray:
    """Sum over the group of the order-``m`` map with filter and map moved together."""
    dn = np.asarray(dn, dtype=np.float64)
    if dn.shape[0] != dn.shape[1]:
        raise DataError("symmetrization needs a square lattice")
    return sum(correlator_maps(d4.apply(dn, g), f, m)[m - 1] for g in d4.ELEMENTS)


def spatial_pool(cmap, w=None) -> float:
    cmap = np.asarray(cmap, dtype=np.float64)
    if w is None:
        return float(cmap.sum())
    w = np.asarray(w, dtype=np.float64)
    if w.shape != cmap.shape:
        raise DataError(f"weight shape {w.shape} does not match map shape {cmap.shape}")
    return float(np.sum(w * cmap))


# ----------------------------------------------------------- BatchNorm

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, n_features: int, momentum=0.1, eps=1e-5):
        return cls(np.zeros(n_features), np.ones(n_features), momentum, eps)

    def copy(self):
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batchnorm_apply(features, state: BatchNormState, mode: str = "eval", update: bool = True):
    """Normalize each feature column; no learned scale or shift.

    Train mode uses the batch mean and biased variance and, if ``update``,
    moves the running statistics by ``momentum`` (running variance tracks the
    unbiased batch estimate). Returns ``(out, mean, inv_std)``.
    """
    c = np.asarray(features, dtype=np.float64)
    if mode == "train":
        B = c.shape[0]
        if B < 2:
            raise DataError("train-mode BatchNorm needs a batch of at least 2")
        mean = c.mean(axis=0)
        var = c.var(axis=0)
        if update:
            mom = state.momentum
            state.running_mean = (1 - mom) * state.running_mean + mom * mean
            state.running_var = (1 - mom) * state.running_var + mom * var * B / (B - 1)
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    return (c - mean) * inv_std, mean, inv_std


# --------------------------------------------------------------- model

@dataclass
class CCNNConfig:
    lattice_size: int = 13
    n_filters: int = 3
    filter_size: int = 3
    order: int = 3
    uniform_w: bool = False
    nonneg_beta: bool = False
    symmetrize: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.order not in (2, 3):
            raise DataError(f"order must be 2 or 3, got {self.order}")
        if self.n_filters < 1 or self.filter_size < 1 or self.lattice_size < 1:
            raise DataError("lattice size, filter count and filter size must be positive")

    @property
    def map_size(self) -> int:
        return self.lattice_size + self.filter_size - 1

    @property
    def n_features(self) -> int:
        return (self.order - 1) * self.n_filters


@dataclass
class CCNNModel:
    config: CCNNConfig
    raw_filters: np.ndarray
    raw_w: np.ndarray
    beta: np.ndarray
    bias: float
    bn: BatchNormState
    metadata: dict = field(default_factory=dict)

    @property
    def filters(self) -> np.ndarray:
        return np.abs(self.raw_filters)

    @property
    def w(self) -> np.ndarray:
        if self.config.uniform_w:
            return np.ones_like(self.raw_w)
        return d4.symmetrize(self.raw_w) if self.config.symmetrize else self.raw_w.copy()

    def filter_bank(self) -> np.ndarray:
        f = self.filters
        if not self.config.symmetrize:
            return f
        return np.concatenate([d4.apply(f, g) for g in d4.ELEMENTS], axis=0)

    def params(self) -> dict:
        return {"raw_filters": self.raw_filters, "raw_w": self.raw_w,
                "beta": self.beta, "bias": np.array(self.bias)}

    def set_params(self, p: dict):
        self.raw_filters = np.array(p["raw_filters"], dtype=np.float64)
        self.raw_w = np.array(p["raw_w"], dtype=np.float64)
        self.beta = np.array(p["beta"], dtype=np.float64)
        self.bias = float(p["bias"])

    def copy(self) -> "CCNNModel":
        return CCNNModel(CCNNConfig(**asdict(self.config)), self.raw_filters.copy(), self.raw_w.copy(),
                         self.beta.copy(), float(self.bias), self.bn.copy(), dict(self.metadata))

    def feature_names(self) -> list:
        nf = self.config.n_filters
        return [f"c{m}_{a}" for m in range(2, self.config.order + 1) for a in range(nf)]


def init_model(config: CCNNConfig, seed=0) -> CCNNModel:
    rng = np.random.default_rng(seed)
    F, nf, M = config.filter_size, config.n_filters, config.map_size
    raw_filters = rng.uniform(-1.0 / F, 1.0 / F, size=(nf, F, F))
    raw_w = np.ones((M, M)) if config.uniform_w else rng.uniform(-0.1, 0.1, size=(M, M))
    lo = 0.0 if config.nonneg_beta else -0.1
    beta = rng.uniform(lo, 0.1, size=config.n_features)
    bn = BatchNormState.fresh(config.n_features, config.bn_momentum, config.bn_eps)
    return CCNNModel(config, raw_filters, raw_w, beta, 0.0, bn)


def _check_batch(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    L = model.config.lattice_size
    if x.ndim != 3 or x.shape[1:] != (L, L):
        raise DataError(f"expected maps of shape ({L}, {L}), got {x.shape}")
    return x


def pooled_features(model: CCNNModel, batch, include_first: bool = False) -> np.ndarray:
    """Pooled correlator features ``c[b, j]`` with ``j = (m - 2) * n_filters + alpha``.

    With ``include_first`` the first-order block is prepended (``m`` from 1).
    """
    x = _check_batch(model, batch)
    cfg = model.config
    xp = zero_pad(x, cfg.filter_size - 1)
    pooled = kernels.pooled_correlators(xp, model.filter_bank(), model.w, cfg.order)
    if cfg.symmetrize:
        pooled = pooled.reshape(x.shape[0], d4.ORDER, cfg.n_filters, cfg.order).sum(axis=1)
    start = 0 if include_first else 1
    feats = pooled[:, :, start:].transpose(0, 2, 1).reshape(x.shape[0], -1)
    if not np.all(np.isfinite(feats)):
        raise NumericalError("non-finite correlator features")
    return feats


def head(model: CCNNModel, normed) -> np.ndarray:
    z = normed @ model.beta - model.bias
    return _sigmoid(z)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: CCNNModel, batch, mode: str = "eval", update_stats: bool = True) -> np.ndarray:
    """Predicted probabilities ``y_hat`` for a batch of fluctuation maps."""
    feats = pooled_features(model, batch)
    normed, _, _ = batchnorm_apply(feats, model.bn, mode, update=update_stats)
    y = head(model, normed)
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite model output")
    return y


def predict_from_features(model: CCNNModel, feats) -> np.ndarray:
    """Eval-mode head applied to already pooled (e.g. averaged) features."""
    normed, _, _ = batchnorm_apply(np.atleast_2d(feats), model.bn, "eval")
    return head(model, normed)


# ---------------------------------------------------------- gradients

CLAMP = 1e-12


def cross_entropy(yhat, labels) -> float:
    p = np.clip(np.asarray(yhat, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_and_grads(model: CCNNModel, batch, labels, gamma: float, update_stats: bool = False,
                   need_grads: bool = True):
    """Training loss with train-mode BatchNorm and its exact gradient.

    Returns ``(loss, grads, yhat)`` with ``grads`` keyed like
    :meth:`CCNNModel.params`. The derivative of ``|r|`` at ``r = 0`` is 0.
    """
    x = _check_batch(model, batch)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise DataError("label count does not match batch size")
    cfg = model.config
    B, nf, order = x.shape[0], cfg.n_filters, cfg.order
    F = cfg.filter_size
    xp = zero_pad(x, F - 1)
    bank = model.filter_bank()
    w = model.w
    pooled = kernels.pooled_correlators(xp, bank, w, order)
    n_g = d4.ORDER if cfg.symmetrize else 1
    summed = pooled.reshape(B, n_g, nf, order).sum(axis=1)
    feats = summed[:, :, 1:].transpose(0, 2, 1).reshape(B, -1)
    if not np.all(np.isfinite(feats)):
        raise NumericalError("non-finite correlator features")
    xhat, _, inv_std = batchnorm_apply(feats, model.bn, "train", update=update_stats)
    yhat = head(model, xhat)
    loss = cross_entropy(yhat, y) + gamma * float(np.abs(model.raw_filters).sum())
    if not need_grads:
        return loss, None, yhat

    dz = (yhat - y) / B
    dbeta = xhat.T @ dz
    dbias = -dz.sum()
    dxhat = np.outer(dz, model.beta)
    dfeat = inv_std / B * (B * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))

    dsum = np.zeros((B, nf, order))
    dsum[:, :, 1:] = dfeat.reshape(B, order - 1, nf).transpose(0, 2, 1)
    dpooled = np.broadcast_to(dsum[:, None], (B, n_g, nf, order)).reshape(B, n_g * nf, order)
    dbank, dw = kernels.pooled_correlators_backward(xp, bank, w, dpooled)

    if cfg.symmetrize:
        dbank = dbank.reshape(n_g, nf, F, F)
        dfilt = sum(d4.apply(dbank[g], d4.inverse(g)) for g in d4.ELEMENTS)
    else:
        dfilt = dbank
    draw_f = dfilt * np.sign(model.raw_filters) + gamma * np.sign(model.raw_filters)
    if cfg.uniform_w:
        draw_w = np.zeros_like(model.raw_w)
    else:
        draw_w = d4.symmetrize(dw) if cfg.symmetrize else dw
    grads = {"raw_filters": draw_f, "raw_w": draw_w, "beta": dbeta, "bias": np.array(dbias)}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k}")
    return loss, grads, yhat


# --------------------------------------------------------- checkpoints

def _tolist(a):
    return np.asarray(a, dtype=np.float64).tolist()


def model_to_dict(model: CCNNModel, prov=None) -> dict:
    d = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
         "config": asdict(model.config),
         "raw_filters": _tolist(model.raw_filters), "raw_w": _tolist(model.raw_w),
         "beta": _tolist(model.beta), "bias": float(model.bias),
         "batchnorm": {"running_mean": _tolist(model.bn.running_mean),
                       "running_var": _tolist(model.bn.running_var),
                       "momentum": model.bn.momentum, "eps": model.bn.eps},
         "metadata": model.metadata}
    if prov is not None:
        d["provenance"] = prov
    return d


def model_from_dict(d: dict) -> CCNNModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise DataError("not a model checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {d.get('version')}")
    try:
        cfg = CCNNConfig(**d["config"])
        bnd = d["batchnorm"]
        bn = BatchNormState(np.array(bnd["running_mean"], dtype=np.float64),
                            np.array(bnd["running_var"], dtype=np.float64),
                            float(bnd["momentum"]), float(bnd["eps"]))
        model = CCNNModel(cfg, np.array(d["raw_filters"], dtype=np.float64),
                          np.array(d["raw_w"], dtype=np.float64),
                          np.array(d["beta"], dtype=np.float64), float(d["bias"]), bn,
                          dict(d.get("metadata", {})))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed checkpoint: {exc}") from exc
    F, M, nf = cfg.filter_size, cfg.map_size, cfg.n_filters
    if (model.raw_filters.shape != (nf, F, F) or model.raw_w.shape != (M, M)
            or model.beta.shape != (cfg.n_features,)):
        raise DataError("checkpoint arrays do not match its configuration")
    return model


def save_checkpoint(model: CCNNModel, path, prov=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model, prov)) + "\n")
    return path


def load_checkpoint(path) -> CCNNModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    return model_from_dict(d)
