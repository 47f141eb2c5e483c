"""Lattice snapshots, their grouping by parameter point, and normalization.

Coordinates are ``(row, col)`` with the origin at the top-left corner and
row-major storage. All real-valued maps are float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Lattice:
    height: int = 13
    width: int = 13

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise DataError(f"lattice extents must be positive, got {self.height}x{self.width}")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def n_sites(self):
        return self.height * self.width

    @classmethod
    def square(cls, size: int) -> "Lattice":
        return cls(size, size)


@dataclass(frozen=True)
class ParameterPoint:
    delta_over_omega: float
    rb_over_a: float

    def __post_init__(self):
        if not (np.isfinite(self.delta_over_omega) and np.isfinite(self.rb_over_a)):
            raise DataError("parameter coordinates must be finite")

    def as_tuple(self):
        return (self.delta_over_omega, self.rb_over_a)

    def matches(self, delta: float, rb: float, tol: float = 1e-9) -> bool:
        return abs(self.delta_over_omega - delta) <= tol and abs(self.rb_over_a - rb) <= tol


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataError("snapshot entries must be 0 or 1")
    return arr.astype(np.uint8)


class Snapshot:
    """A single binary occupation map."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = _as_bits(bits)
        if arr.ndim != 2:
            raise DataError(f"snapshot must be 2D, got shape {arr.shape}")
        arr.setflags(write=False)
        self.bits = arr

    @property
    def lattice(self) -> Lattice:
        return Lattice(*self.bits.shape)

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, Snapshot) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"Snapshot({self.bits.shape[0]}x{self.bits.shape[1]})"


class SnapshotSet:
    """All snapshots recorded at one parameter point.

    Stored internally as a ``(N, height, width)`` uint8 array.
    """

    def __init__(self, point: ParameterPoint, snapshots):
        if isinstance(snapshots, np.ndarray):
            arr = _as_bits(snapshots)
        else:
            snapshots = list(snapshots)
            if not snapshots:
                raise DataError("a snapshot set must contain at least one snapshot")
            shapes = {np.shape(s.bits if isinstance(s, Snapshot) else s) for s in snapshots}
            if len(shapes) != 1:
                raise DataError(f"snapshots in a set must share one lattice, got {sorted(shapes)}")
            arr = _as_bits(np.stack([s.bits if isinstance(s, Snapshot) else s for s in snapshots]))
        if arr.ndim != 3:
            raise DataError(f"snapshot stack must be 3D, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise DataError("a snapshot set must contain at least one snapshot")
        arr.setflags(write=False)
        self.point = point
        self.bits = arr

    def __len__(self):
        return self.bits.shape[0]

    @property
    def lattice(self) -> Lattice:
        return Lattice(*self.bits.shape[1:])

    @property
    def snapshots(self) -> list[Snapshot]:
        return [Snapshot(b) for b in self.bits]

    def __repr__(self):
        p = self.point
        return (f"SnapshotSet(delta={p.delta_over_omega}, rb={p.rb_over_a}, "
                f"N={len(self)}, lattice={self.bits.shape[1]}x{self.bits.shape[2]})")


@dataclass
class Dataset:
    """A collection of snapshot sets, optionally laid out on a rectangular grid.

    ``grid[row, col]`` holds the index into ``sets`` of that grid cell;
    ``truth`` optionally records a ground-truth phase name per set.
    """

    sets: list[SnapshotSet]
    grid: Optional[np.ndarray] = None
    truth: Optional[list[str]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sets = list(self.sets)
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=int)
            if g.ndim != 2:
                raise DataError("grid must be a 2D index array")
            if sorted(g.ravel().tolist()) != list(range(len(self.sets))):
                raise DataError("grid indices must be a bijection onto the snapshot sets")
            self.grid = g
        if self.truth is not None:
            self.truth = list(self.truth)
            if len(self.truth) != len(self.sets):
                raise DataError("truth labels must match the number of sets")

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)

    @property
    def points(self) -> list[ParameterPoint]:
        return [s.point for s in self.sets]

    def index_of(self, delta: float, rb: float, tol: float = 1e-9) -> int:
        for i, s in enumerate(self.sets):
            if s.point.matches(delta, rb, tol):
                return i
        raise DataError(f"no snapshot set at (delta={delta}, rb={rb})")

    def grid_position(self, index: int) -> tuple[int, int]:
        if self.grid is None:
            return (index, 0)
        r, c = np.argwhere(self.grid == index)[0]
        return int(r), int(c)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        truth = [self.truth[i] for i in indices] if self.truth is not None else None
        return Dataset([self.sets[i] for i in indices], truth=truth)


def _require_nonempty(snapshot_set: SnapshotSet):
    if snapshot_set is None or len(snapshot_set) == 0:
        raise DataError("empty snapshot set")


def mean_density(snapshot_set: SnapshotSet) -> float:
    """Average occupation over all sites and snapshots of a set."""
    _require_nonempty(snapshot_set)
    return float(snapshot_set.bits.mean(dtype=np.float64))


def site_mean_density(snapshot_set: SnapshotSet) -> np.ndarray:
    """Per-site occupation averaged over the snapshots of a set."""
    _require_nonempty(snapshot_set)
    return snapshot_set.bits.mean(axis=0, dtype=np.float64)


def _real(snapshot) -> np.ndarray:
    if isinstance(snapshot, Snapshot):
        return snapshot.bits.astype(np.float64)
    return np.asarray(snapshot, dtype=np.float64)


def normalize_global(snapshot, nbar: float) -> np.ndarray:
    """``n(x) - nbar``; accepts a single snapshot or a stack."""
    if not 0.0 <= nbar <= 1.0:
        raise DataError(f"mean density must lie in [0, 1], got {nbar}")
    return _real(snapshot) - nbar


def normalize_per_site(snapshot, nbar_map) -> np.ndarray:
    """``n(x) - nbar(x)``; accepts a single snapshot or a stack."""
    n = _real(snapshot)
    nbar_map = np.asarray(nbar_map, dtype=np.float64)
    if n.shape[-2:] != nbar_map.shape:
        raise DataError(f"shape mismatch: snapshot {n.shape[-2:]} vs density map {nbar_map.shape}")
    return n - nbar_map


def global_fluctuations(snapshot_set: SnapshotSet) -> np.ndarray:
    """Stack of globally normalized maps for a whole set, shape ``(N, h, w)``."""
    return normalize_global(snapshot_set.bits, mean_density(snapshot_set))


def site_fluctuations(snapshot_set: SnapshotSet) -> np.ndarray:
    """Stack of per-site normalized maps for a whole set, shape ``(N, h, w)``."""
    return normalize_per_site(snapshot_set.bits, site_mean_density(snapshot_set))


def zero_pad(real_map, p: int) -> np.ndarray:
    """Surround the last two axes with ``p`` zeros on every edge."""
    if p < 0:
        raise DataError("padding must be nonnegative")
    m = np.asarray(real_map, dtype=np.float64)
    widths = [(0, 0)] * (m.ndim - 2) + [(p, p), (p, p)]
    return np.pad(m, widths)
