"""Synthetic snapshot generator for idealized orderings with simple noise.

Tiles hold per-site occupation probabilities: 1 for an always-excited site,
0 for an empty one, and ``q`` in between for a site sampled as Bernoulli(q)
independently in every snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import d4
from .core import Dataset, Lattice, ParameterPoint, SnapshotSet
from .errors import DataError

PHASE_NAMES = ("checkerboard", "striated", "star", "rhombic")
MODES = ("tile", "edge_ordered", "disordered")
DEFAULT_Q = 0.3
DEFAULT_P_BULK = 0.15

# 4x4 star cell: two excitations per pair of rows, every other column.
_STAR = np.array([[1, 0, 1, 0],
                  [0, 1, 0, 1],
                  [0, 0, 0, 0],
                  [0, 0, 0, 0]], dtype=np.float64)


def _rhombic_cell() -> np.ndarray:
    # sites where two density waves at +-(pi, pi/4) and +-(2pi/5, pi) interfere
    # constructively; the pattern repeats every 10 rows and 8 columns
    r, c = np.meshgrid(np.arange(10), np.arange(8), indexing="ij")
    v = np.cos(np.pi * r + np.pi / 4 * c) + np.cos(2 * np.pi / 5 * r + np.pi * c)
    return (v > 0.5).astype(np.float64)


@dataclass(frozen=True)
class Tile:
    probs: np.ndarray = field(compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise DataError("tile must be a nonempty 2D array")
        if np.any((p < 0) | (p > 1)):
            raise DataError("tile probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", p)

    @property
    def period(self):
        return self.probs.shape

    @property
    def density(self) -> float:
        return float(self.probs.mean())

    def cell_kind(self, r: int, c: int) -> str:
        v = self.probs[r, c]
        return "one" if v == 1 else "zero" if v == 0 else f"bernoulli({v})"


def ideal_tile(phase_name: str, q: float = DEFAULT_Q) -> Tile:
    if not 0 <= q <= 1:
        raise DataError("q must lie in [0, 1]")
    if phase_name == "checkerboard":
        r, c = np.indices((2, 2))
        return Tile(((r + c) % 2 == 0).astype(np.float64))
    if phase_name == "striated":
        return Tile(np.array([[1.0, 0.0], [0.0, q]]))
    if phase_name == "star":
        return Tile(_STAR.copy())
    if phase_name == "rhombic":
        return Tile(_rhombic_cell())
    raise DataError(f"unknown phase {phase_name!r}; expected one of {PHASE_NAMES}")


@dataclass(frozen=True)
class NoiseModel:
    p_flip: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p_flip < 0.5:
            raise DataError("p_flip must lie in [0, 0.5)")


@dataclass(frozen=True)
class PhaseSpec:
    """How to render one phase.

    ``randomize_domain`` draws a fresh tile offset and point-group orientation
    per snapshot, so that ordering survives per-site normalization.
    ``edge_fidelity`` is the probability that a boundary site follows the
    alternating pattern rather than a fair coin.
    """

    name: str
    mode: str = "tile"
    tile: Optional[Tile] = None
    noise: NoiseModel = NoiseModel()
    q: float = DEFAULT_Q
    p: float = DEFAULT_P_BULK
    p_bulk: float = DEFAULT_P_BULK
    edge_fidelity: float = 1.0
    randomize_domain: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"unknown mode {self.mode!r}")
        if self.mode == "tile" and self.tile is None:
            object.__setattr__(self, "tile", ideal_tile(self.name, self.q))
        for v in (self.p, self.p_bulk, self.edge_fidelity):
            if not 0 <= v <= 1:
                raise DataError("probabilities must lie in [0, 1]")

    @classmethod
    def ordered(cls, name: str, p_flip: float = 0.0, q: float = DEFAULT_Q, randomize_domain=False):
        return cls(name, "tile", ideal_tile(name, q), NoiseModel(p_flip), q=q,
                   randomize_domain=randomize_domain)


def ring_positions(h: int, w: int) -> np.ndarray:
    """Boundary sites in perimeter order, clockwise from the top-left corner."""
    if h == 1 or w == 1:
        return np.array([(r, c) for r in range(h) for c in range(w)])
    top = [(0, c) for c in range(w)]
    right = [(r, w - 1) for r in range(1, h)]
    bottom = [(h - 1, c) for c in range(w - 2, -1, -1)]
    left = [(r, 0) for r in range(h - 2, 0, -1)]
    return np.array(top + right + bottom + left)


def _tile_probs(tile: Tile, lattice: Lattice, offset=(0, 0)) -> np.ndarray:
    py, px = tile.period
    r, c = np.indices(lattice.shape)
    return tile.probs[(r + offset[0]) % py, (c + offset[1]) % px]


def _flip(bits, p_flip, rng):
    if p_flip > 0:
        bits = bits ^ (rng.random(bits.shape) < p_flip)
    return bits


def render(spec: PhaseSpec, lattice: Lattice, n_snapshots: int, seed=0,
           point: Optional[ParameterPoint] = None) -> SnapshotSet:
    if n_snapshots < 1:
        raise DataError("n_snapshots must be positive")
    rng = np.random.default_rng(seed)
    h, w = lattice.shape
    point = point or ParameterPoint(0.0, 0.0)
    if spec.mode == "disordered":
        bits = rng.random((n_snapshots, h, w)) < spec.p
    elif spec.mode == "edge_ordered":
        bits = rng.random((n_snapshots, h, w)) < spec.p_bulk
        ring = ring_positions(h, w)
        phase = rng.integers(2, size=(n_snapshots, 1))
        pattern = (np.arange(len(ring))[None, :] + phase) % 2 == 0
        follow = rng.random((n_snapshots, len(ring))) < spec.edge_fidelity
        coin = rng.random((n_snapshots, len(ring))) < 0.5
        bits[:, ring[:, 0], ring[:, 1]] = np.where(follow, pattern, coin)
        if spec.randomize_domain and h == w:
            gs = rng.integers(d4.ORDER, size=n_snapshots)
            bits = np.stack([d4.apply(b, g) for b, g in zip(bits, gs)])
    else:
        py, px = spec.tile.period
        if h < py or w < px:
            raise DataError(f"lattice {h}x{w} is smaller than the tile period {py}x{px}")
        if spec.randomize_domain:
            if h != w:
                raise DataError("orientation randomization needs a square lattice")
            offs = np.stack([rng.integers(py, size=n_snapshots), rng.integers(px, size=n_snapshots)], 1)
            gs = rng.integers(d4.ORDER, size=n_snapshots)
            probs = np.stack([d4.apply(_tile_probs(spec.tile, lattice, o), g) for o, g in zip(offs, gs)])
        else:
            probs = np.broadcast_to(_tile_probs(spec.tile, lattice), (n_snapshots, h, w))
        bits = rng.random((n_snapshots, h, w)) < probs
    bits = _flip(bits, spec.noise.p_flip, rng)
    return SnapshotSet(point, bits.astype(np.uint8))


# ----------------------------------------------------------------- plans

@dataclass
class GenerationPlan:
    """Per-point phase specs with an optional rectangular layout."""

    points: list  # of (ParameterPoint, PhaseSpec)
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.points:
            raise DataError("generation plan is empty")
        specs = {}
        for _, s in self.points:
            if s.name in specs and specs[s.name] != s:
                raise DataError(f"phase name {s.name!r} used for two different specs")
            specs[s.name] = s

    @property
    def truth(self) -> list:
        return [s.name for _, s in self.points]


def set_seed(seed, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def generate_dataset(plan: GenerationPlan, lattice: Lattice = Lattice(), n_snapshots: int = 250,
                     seed=0) -> Dataset:
    sets = [render(spec, lattice, n_snapshots, set_seed(seed, i), point)
            for i, (point, spec) in enumerate(plan.points)]
    return Dataset(sets, grid=plan.grid, truth=plan.truth)


# Rectangular scan coordinates shared by the built-in plans.
RB_VALUES = (1.05, 1.13, 1.23, 1.46, 1.56, 1.71, 1.81, 1.97, 2.10)
DELTA_VALUES = (-2.09, -1.62, -1.16, -0.4, 0.69, 0.93, 2.32, 2.33, 2.56, 2.79,
                3.02, 3.26, 3.95, 4.19, 4.42, 4.65)
DEFAULT_EDGE_FIDELITY = 0.75


def six_phase_region(delta: float, rb: float) -> str:
    """Ground-truth layout of the built-in six-phase scan."""
    if delta <= -0.4 or (delta < 1.0 and rb <= 1.23):
        return "disordered"
    if delta < 1.0:
        return "edge"
    if rb <= 1.23:
        return "checkerboard"
    if delta < 3.5:
        return "striated" if rb <= 1.56 else "rhombic"
    return "star" if rb <= 1.81 else "rhombic"


def six_phase_specs(p_flip: float = 0.03, q: float = DEFAULT_Q, edge_fidelity: float = DEFAULT_EDGE_FIDELITY,
                    p_disordered: float = DEFAULT_P_BULK) -> dict:
    noise = NoiseModel(p_flip)
    specs = {name: replace(PhaseSpec.ordered(name, p_flip, q), randomize_domain=True) for name in PHASE_NAMES}
    specs["edge"] = PhaseSpec("edge", "edge_ordered", noise=noise, p_bulk=DEFAULT_P_BULK,
                              edge_fidelity=edge_fidelity, randomize_domain=True)
    specs["disordered"] = PhaseSpec("disordered", "disordered", noise=noise, p=p_disordered)
    return specs


def grid_plan(deltas, rbs, region, specs: dict) -> GenerationPlan:
    """Plan over ``rbs x deltas`` (rows x columns) with ``region(delta, rb)`` naming the phase."""
    points, grid = [], np.zeros((len(rbs), len(deltas)), dtype=int)
    for i, rb in enumerate(rbs):
        for j, dl in enumerate(deltas):
            grid[i, j] = len(points)
            name = region(dl, rb)
            if name not in specs:
                raise DataError(f"unknown phase name {name!r}")
            points.append((ParameterPoint(float(dl), float(rb)), specs[name]))
    return GenerationPlan(points, grid)


def six_phase_plan(p_flip: float = 0.03, q: float = DEFAULT_Q,
                   edge_fidelity: float = DEFAULT_EDGE_FIDELITY) -> GenerationPlan:
    return grid_plan(DELTA_VALUES, RB_VALUES, six_phase_region, six_phase_specs(p_flip, q, edge_fidelity))


def two_phase_plan(p_flip: float = 0.03, n_rows: int = 4, n_cols: int = 6) -> GenerationPlan:
    """Checkerboard on the right half of the scan, disordered on the left."""
    specs = six_phase_specs(p_flip)
    deltas = np.linspace(-2.0, 4.0, n_cols).round(6).tolist()
    rbs = np.linspace(1.0, 1.3, n_rows).round(6).tolist()
    return grid_plan(deltas, rbs, lambda d, r: "checkerboard" if d > 1.0 else "disordered", specs)
