"""Discrete Fourier transforms and power-spectrum features on a K x K k-grid.

Convention: ``F(k) = sum_x exp(-i k.x) m(x)`` with ``k_j = 2 pi j / K`` on each
axis, so index ``(K/2, K/2)`` is ``(pi, pi)`` for even ``K``.
"""
from __future__ import annotations

import numpy as np

from .core import SnapshotSet, global_fluctuations
from .errors import DataError

DEFAULT_K = 16


def k_values(K: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(K) / K


def k_index(kvalue: float, K: int) -> int:
    """Grid index nearest to a momentum component, wrapped into ``[0, 2 pi)``."""
    return int(np.rint((kvalue % (2 * np.pi)) * K / (2 * np.pi))) % K


def _check_K(shape, K):
    if K < 1:
        raise DataError("K must be positive")
    if max(shape[-2:]) > K:
        raise DataError(f"K={K} is smaller than the map extent {shape[-2:]}")


def dft2(real_map, K: int = DEFAULT_K, method: str = "fft") -> np.ndarray:
    """Complex K x K transform of the last two axes, zero-padded to ``K``.

    ``method="direct"`` evaluates the double sum explicitly and serves as the
    reference for the FFT route.
    """
    m = np.asarray(real_map, dtype=np.float64)
    _check_K(m.shape, K)
    if method == "fft":
        return np.fft.fft2(m, s=(K, K))
    if method == "direct":
        h, w = m.shape[-2:]
        ey = np.exp(-1j * np.outer(k_values(K), np.arange(h)))  # (K, h)
        ex = np.exp(-1j * np.outer(np.arange(w), k_values(K)))  # (w, K)
        return ey @ m @ ex
    raise ValueError(f"unknown method {method!r}")


def power_spectra(maps, K: int = DEFAULT_K) -> np.ndarray:
    """``|dft2|^2`` for each map of a stack."""
    F = dft2(maps, K)
    return F.real ** 2 + F.imag ** 2


def mean_power_spectrum(snapshot_set: SnapshotSet, K: int = DEFAULT_K) -> np.ndarray:
    """Snapshot-averaged squared amplitude of the globally normalized maps."""
    if snapshot_set is None or len(snapshot_set) == 0:
        raise DataError("empty snapshot set")
    return power_spectra(global_fluctuations(snapshot_set), K).mean(axis=0)


def shift_invariant_features(spectrum) -> np.ndarray:
    """Subtract the k-space mean so that constant offsets cancel."""
    s = np.asarray(spectrum, dtype=np.float64)
    return s - s.mean(axis=(-2, -1), keepdims=True)


def feature_matrix(dataset, K: int = DEFAULT_K) -> np.ndarray:
    """Row-major vectorized shift-invariant features, one row per snapshot set."""
    return np.stack([shift_invariant_features(mean_power_spectrum(s, K)).ravel()
                     for s in dataset.sets])


def spectrum_rows(grid):
    """Rows ``(kx_index, ky_index, value)`` for CSV export, row-major.

    ``kx`` pairs with the first (row) coordinate, matching ``x = (row, col)``.
    """
    g = np.asarray(grid)
    return [(i, j, float(g[i, j])) for i in range(g.shape[0]) for j in range(g.shape[1])]


SPECTRUM_HEADER = ("kx_index", "ky_index", "value")
