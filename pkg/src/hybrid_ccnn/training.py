"""Supervised training of one-vs-rest correlator networks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import ccnn
from .ccnn import CCNNConfig, CCNNModel
from .core import Dataset, site_fluctuations
from .errors import DataError

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
TARGET_PROB = 0.5

# Parameter-space points used to train each phase's classifier.
DEFAULT_TRAINING_POINTS = {
    "checkerboard": [(d, r) for d in (3.02, 3.26) for r in (1.13, 1.23)],
    "striated": [(d, 1.46) for d in (2.33, 2.56, 2.79, 3.02)],
    "star": [(d, 1.71) for d in (3.95, 4.19, 4.42, 4.65)],
    "rhombic": [(d, 1.97) for d in (2.32, 2.56, 2.79, 3.02)],
    "edge": [(d, r) for d in (0.69, 0.93) for r in (1.46, 1.56)],
    "disordered": [(d, r) for d in (-2.09, -1.62, -1.16, -0.4) for r in (1.13, 1.46, 1.81)],
}
ORDERED_PHASES = ("checkerboard", "striated", "star", "rhombic", "edge")


@dataclass
class TrainConfig:
    lr0: float = 0.01
    batch_size: int = 128
    gamma: float = 0.1
    epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.1
    order: int = 3
    n_filters: int = 3
    filter_size: int = 3
    uniform_w: bool = False
    nonneg_beta: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise DataError("lr0 must be positive")
        if self.batch_size < 2:
            raise DataError("batch_size must be at least 2")
        if self.gamma < 0:
            raise DataError("gamma must be nonnegative")
        if self.epochs < 0:
            raise DataError("epochs must be nonnegative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DataError("val_fraction must lie in [0, 1)")
        if self.order not in (2, 3):
            raise DataError(f"order must be 2 or 3, got {self.order}")

    def model_config(self, lattice_size: int) -> CCNNConfig:
        return CCNNConfig(lattice_size=lattice_size, n_filters=self.n_filters,
                          filter_size=self.filter_size, order=self.order,
                          uniform_w=self.uniform_w, nonneg_beta=self.nonneg_beta)


@dataclass
class LabeledPool:
    """Per-phase stacks of fluctuation maps; the ``target`` phase is labeled 1."""

    phases: dict
    target: str

    def __post_init__(self):
        if self.target not in self.phases:
            raise DataError(f"target phase {self.target!r} missing from pool")
        for name, arr in self.phases.items():
            if len(arr) == 0:
                raise DataError(f"phase {name!r} has no snapshots")
        shapes = {a.shape[1:] for a in self.phases.values()}
        if len(shapes) != 1:
            raise DataError("all phases must share one lattice")

    @property
    def others(self) -> list:
        return [p for p in self.phases if p != self.target]

    @property
    def lattice_size(self) -> int:
        return next(iter(self.phases.values())).shape[1]

    def label(self, phase: str) -> int:
        return 1 if phase == self.target else 0

    def size(self) -> int:
        return sum(len(a) for a in self.phases.values())


def build_pool(dataset: Dataset, training_points: dict, target: str, tol: float = 1e-6) -> LabeledPool:
    """Collect per-site normalized maps of each phase's training points."""
    phases = {}
    for name, pts in training_points.items():
        maps = [site_fluctuations(dataset.sets[dataset.index_of(d, r, tol)]) for d, r in pts]
        if not maps:
            raise DataError(f"phase {name!r} lists no training points")
        phases[name] = np.concatenate(maps)
    return LabeledPool(phases, target)


# ------------------------------------------------------------ optimizer

def cosine_lr(t, T, lr0) -> float:
    if T <= 0:
        return float(lr0)
    if not 0 <= t <= T:
        raise ValueError("t must lie in [0, T]")
    return lr0 * (1.0 + math.cos(math.pi * t / T)) / 2.0


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, nonneg_beta: bool = False) -> dict:
    """One bias-corrected Adam update; ``beta`` is clamped at 0 if requested."""
    state.t += 1
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = ADAM_B1 * m + (1 - ADAM_B1) * g
        v = ADAM_B2 * v + (1 - ADAM_B2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - ADAM_B1 ** state.t)
        vhat = v / (1 - ADAM_B2 ** state.t)
        out[k] = np.asarray(p, dtype=np.float64) - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    if nonneg_beta and "beta" in out:
        out["beta"] = np.maximum(out["beta"], 0.0)
    return out


def loss(model: CCNNModel, batch, labels, gamma: float) -> float:
    """Mean cross-entropy (train-mode BatchNorm) plus the L1 filter penalty."""
    return ccnn.loss_and_grads(model, batch, labels, gamma, need_grads=False)[0]


def gradients(model: CCNNModel, batch, labels, gamma: float) -> dict:
    return ccnn.loss_and_grads(model, batch, labels, gamma)[1]


# -------------------------------------------------------------- sampling

def phase_probabilities(n_others: int) -> np.ndarray:
    """Draw probabilities: target first, then each other phase."""
    if n_others < 1:
        raise DataError("balanced sampling needs at least one non-target phase")
    return np.array([TARGET_PROB] + [(1 - TARGET_PROB) / n_others] * n_others)


class BalancedSampler:
    """Target phase with probability 1/2, the rest split evenly over the others."""

    def __init__(self, pool: LabeledPool, seed=0, indices: Optional[dict] = None):
        self.order = [pool.target] + pool.others
        self.arrays = [pool.phases[p] for p in self.order]
        self.indices = [np.arange(len(a)) if indices is None else np.asarray(indices[p])
                        for p, a in zip(self.order, self.arrays)]
        for p, idx in zip(self.order, self.indices):
            if len(idx) == 0:
                raise DataError(f"phase {p!r} has an empty training split")
        self.probs = phase_probabilities(len(self.order) - 1)
        self.rng = np.random.default_rng(seed)

    def draw_phases(self, n: int) -> np.ndarray:
        return self.rng.choice(len(self.order), size=n, p=self.probs)

    def draw(self, batch_size: int):
        which = self.draw_phases(batch_size)
        x = np.empty((batch_size,) + self.arrays[0].shape[1:])
        for i, idx in enumerate(self.indices):
            sel = np.flatnonzero(which == i)
            if len(sel):
                x[sel] = self.arrays[i][idx[self.rng.integers(len(idx), size=len(sel))]]
        y = (which == 0).astype(np.float64)
        return x, y


def balanced_sampler(pool: LabeledPool, batch_size: int, seed=0):
    """One balanced minibatch ``(maps, labels)``."""
    return BalancedSampler(pool, seed).draw(batch_size)


# -------------------------------------------------------------- training

@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    steps_per_epoch: int = 0
    final_val_accuracy: float = float("nan")


def split_indices(pool: LabeledPool, val_fraction: float, rng) -> tuple[dict, dict]:
    train, val = {}, {}
    for p, arr in pool.phases.items():
        perm = rng.permutation(len(arr))
        n_val = int(round(val_fraction * len(arr)))
        if n_val >= len(arr):
            n_val = len(arr) - 1
        val[p], train[p] = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return train, val


def phase_accuracies(model: CCNNModel, pool: LabeledPool, indices: Optional[dict] = None,
                     chunk: int = 512) -> dict:
    out = {}
    for p, arr in pool.phases.items():
        idx = np.arange(len(arr)) if indices is None else indices[p]
        if len(idx) == 0:
            continue
        yhat = np.concatenate([ccnn.forward(model, arr[idx[s:s + chunk]])
                               for s in range(0, len(idx), chunk)])
        out[p] = float(np.mean((yhat >= 0.5) == bool(pool.label(p))))
    return out


def balanced_accuracy(pool: LabeledPool, per_phase: dict) -> float:
    """Accuracy weighted like the sampler: target 1/2, the others share 1/2."""
    others = [p for p in pool.others if p in per_phase]
    if not others:
        return per_phase[pool.target]
    return TARGET_PROB * per_phase[pool.target] + (1 - TARGET_PROB) * float(np.mean([per_phase[p] for p in others]))


def _seeds(seed):
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def train(pool: LabeledPool, config: TrainConfig, indices: Optional[tuple] = None,
          init: Optional[CCNNModel] = None):
    """Train a classifier for ``pool.target``; returns ``(model, report)``.

    ``indices`` optionally fixes the ``(train, val)`` split per phase.
    """
    rng_init, rng_split, rng_sample = _seeds(config.seed)
    mcfg = config.model_config(pool.lattice_size)
    model = init.copy() if init is not None else ccnn.init_model(mcfg, rng_init)
    if indices is None:
        tr_idx, val_idx = split_indices(pool, config.val_fraction, rng_split)
    else:
        tr_idx, val_idx = indices
    sampler = BalancedSampler(pool, rng_sample, tr_idx)
    n_train = sum(len(v) for v in tr_idx.values())
    steps = max(1, math.ceil(n_train / config.batch_size))
    T = config.epochs * steps
    report = TrainReport(steps_per_epoch=steps)
    state = AdamState()
    t = 0
    for _ in range(config.epochs):
        losses = []
        report.lr.append(cosine_lr(t, T, config.lr0))
        for _ in range(steps):
            x, y = sampler.draw(config.batch_size)
            lval, grads, _ = ccnn.loss_and_grads(model, x, y, config.gamma, update_stats=True)
            lr = cosine_lr(t, T, config.lr0)
            model.set_params(adam_step(model.params(), grads, state, lr, config.nonneg_beta))
            losses.append(lval)
            t += 1
        report.loss.append(float(np.mean(losses)))
        report.val_accuracy.append(_val_acc(model, pool, val_idx))
    report.final_val_accuracy = report.val_accuracy[-1] if report.val_accuracy else _val_acc(model, pool, val_idx)
    model.metadata.update({"target": pool.target, "phases": list(pool.phases),
                           "train_config": asdict(config), "steps": t})
    return model, report


def _val_acc(model, pool, val_idx):
    if not any(len(v) for v in val_idx.values()):
        return float("nan")
    return balanced_accuracy(pool, phase_accuracies(model, pool, val_idx))


# ------------------------------------------------------ cross-validation

@dataclass
class CVResult:
    mean: float
    stderr: float
    accuracies: list

    def formatted(self) -> str:
        return format_accuracy(self.mean, self.stderr)


def fold_indices(pool: LabeledPool, folds: int, fold: int, rng_seed) -> tuple[dict, dict]:
    rng = np.random.default_rng(rng_seed)
    tr, val = {}, {}
    for p, arr in pool.phases.items():
        perm = rng.permutation(len(arr))
        chunks = np.array_split(perm, folds)
        val[p] = np.sort(chunks[fold])
        tr[p] = np.sort(np.concatenate([c for i, c in enumerate(chunks) if i != fold]))
    return tr, val


def cross_validate(pool: LabeledPool, config: TrainConfig, folds: int = 10, seeds: int = 5) -> CVResult:
    """Mean and standard error of held-out accuracy over ``folds x seeds`` runs.

    ``folds=1`` uses a single random holdout of ``config.val_fraction``. A
    pool with a single phase is scored by the constant predictor.
    """
    if folds < 1 or seeds < 1:
        raise DataError("folds and seeds must be positive")
    for p, arr in pool.phases.items():
        if folds > 1 and len(arr) < folds:
            raise DataError(f"phase {p!r} has fewer snapshots than folds")
    accs = []
    for s in range(seeds):
        seed = config.seed + s
        for k in range(folds):
            if not pool.others:
                accs.append(1.0)
                continue
            cfg = replace(config, seed=seed)
            if folds == 1:
                _, rep = train(pool, cfg)
                accs.append(rep.final_val_accuracy)
            else:
                idx = fold_indices(pool, folds, k, [seed, 7919])
                _, rep = train(pool, cfg, indices=idx)
                accs.append(rep.final_val_accuracy)
    a = np.asarray(accs)
    se = float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0
    return CVResult(float(a.mean()), se, accs)


def format_accuracy(mean: float, stderr: float, decimals: int = 2) -> str:
    """Percent with the standard error in units of the last digit, e.g. ``99.81(1)``."""
    err = int(round(stderr * 100 * 10 ** decimals))
    return f"{100 * mean:.{decimals}f}({err})"


# -------------------------------------------------------------- ablation

@dataclass(frozen=True)
class Variant:
    name: str
    order: int = 3
    uniform_w: bool = False
    filter_size: int = 3
    nonneg_beta: bool = False
    gamma: float = 0.1
    n_filters: int = 3

    def apply(self, config: TrainConfig) -> TrainConfig:
        return replace(config, order=self.order, uniform_w=self.uniform_w, filter_size=self.filter_size,
                       nonneg_beta=self.nonneg_beta, gamma=self.gamma, n_filters=self.n_filters)


TABLE_VARIANTS = (
    Variant("2nd order, w=1, 4x4, gamma=0", order=2, uniform_w=True, filter_size=4, gamma=0.0),
    Variant("3rd order, w=1, 4x4, gamma=0.1", order=3, uniform_w=True, filter_size=4, gamma=0.1),
    Variant("3rd order, beta>=0, w=1, 4x4, gamma=0.1", order=3, uniform_w=True, filter_size=4,
            nonneg_beta=True, gamma=0.1),
    Variant("2nd order, learned w, 3x3, gamma=0.1", order=2, uniform_w=False, filter_size=3, gamma=0.1),
    Variant("3rd order, learned w, 3x3, gamma=0.1", order=3, uniform_w=False, filter_size=3, gamma=0.1),
)
MOST_EXPRESSIVE = TABLE_VARIANTS[-1]


def ablation_suite(pool: LabeledPool, variants, config: Optional[TrainConfig] = None,
                   folds: int = 10, seeds: int = 5) -> list:
    """One cross-validated row ``(variant, CVResult)`` per variant."""
    config = config or TrainConfig()
    return [(v, cross_validate(pool, v.apply(config), folds, seeds)) for v in variants]
