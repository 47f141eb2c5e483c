"""Reading trained models back as physics: Fourier order-parameter maps,
confidence maps, phase-diagram overlays and connected correlators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ccnn, d4
from .ccnn import CCNNModel
from .core import SnapshotSet, site_fluctuations
from .errors import DataError
from .spectral import DEFAULT_K, dft2, power_spectra

DEFAULT_THRESHOLD = 0.75
UNASSIGNED = "unassigned"


# ----------------------------------------------------- k-space symmetry

def k_transform(grid, g: int) -> np.ndarray:
    """Point-group element ``g`` acting on a K x K grid indexed by ``k = 2 pi j / K``.

    Bit 0 negates the first momentum component, bit 1 the second, bit 2
    swaps them.
    """
    G = np.asarray(grid)
    if g & 1:
        G = np.roll(G[::-1], 1, axis=0)
    if g & 2:
        G = np.roll(G[:, ::-1], 1, axis=1)
    if g & 4:
        G = G.T
    return G


def k_symmetrize(grid) -> np.ndarray:
    return np.mean([k_transform(grid, g) for g in range(8)], axis=0)


# -------------------------------------------------- Fourier order parameter

@dataclass
class FourierOPMap:
    """``O = sigmoid(sum_k weights(k) |dn_hat(k)|^2 - bias)``.

    ``weights`` already contain the folded BatchNorm scale and transform
    normalization; ``per_filter`` keeps the unscaled symmetrized maps.
    """

    weights: np.ndarray
    bias: float
    per_filter: np.ndarray
    K: int

    def top_set(self, n: int = 8) -> list:
        # descending, lowest flat index first among ties
        idx = np.argsort(-self.weights.ravel(), kind="stable")[:n]
        return [divmod(int(i), self.K) for i in idx]

    def argmax(self) -> tuple:
        return divmod(int(np.argmax(self.weights)), self.K)


def filter_spectrum_weights(f, K: int) -> np.ndarray:
    """``|f_hat(k)|^2`` minus its k-space mean."""
    p = power_spectra(np.asarray(f, dtype=np.float64), K)
    return p - p.mean()


def fold_batchnorm(model: CCNNModel):
    """Eval-mode BatchNorm folded into the head: returns ``(beta', bias')``."""
    s = np.sqrt(model.bn.running_var + model.bn.eps)
    beta = model.beta / s
    bias = model.bias + float(np.sum(model.beta * model.bn.running_mean / s))
    return beta, bias


def fourier_order_parameter(model: CCNNModel, K: int = DEFAULT_K) -> FourierOPMap:
    """Exact k-space form of a second-order, uniform-weight model.

    Pooling a second-order map over the full padded domain equals
    ``K^-2 sum_k f_tilde(k) |dn_hat(k)|^2`` provided ``K >= L + F - 1``, so that
    circular and linear correlations coincide.
    """
    cfg = model.config
    if cfg.order != 2 or not cfg.uniform_w:
        raise DataError("Fourier order parameter needs a second-order model with uniform w")
    if K < cfg.map_size:
        raise DataError(f"K={K} must be at least L + F - 1 = {cfg.map_size} for an exact map")
    per = np.stack([filter_spectrum_weights(f, K) for f in model.filters])
    if cfg.symmetrize:
        per = np.stack([k_symmetrize(p) for p in per])
        scale = d4.ORDER / K ** 2
    else:
        scale = 1.0 / K ** 2
    beta, bias = fold_batchnorm(model)
    weights = scale * np.tensordot(beta, per, axes=1)
    return FourierOPMap(weights, bias, per, K)


def order_parameter_value(opmap: FourierOPMap, dn) -> np.ndarray:
    """``O`` for one map or a stack of maps."""
    spec = power_spectra(dn, opmap.K)
    z = np.sum(opmap.weights * spec, axis=(-2, -1)) - opmap.bias
    return ccnn._sigmoid(z)


# ---------------------------------------------------- confidence and overlay

@dataclass
class ConfidenceMap:
    values: np.ndarray  # one per snapshot set
    points: list
    grid: Optional[np.ndarray] = None

    def as_grid(self) -> np.ndarray:
        if self.grid is None:
            raise DataError("confidence map has no grid layout")
        return self.values[self.grid]


def set_features(model: CCNNModel, snapshot_set: SnapshotSet) -> np.ndarray:
    return ccnn.pooled_features(model, site_fluctuations(snapshot_set)).mean(axis=0)


def confidence_map(model: CCNNModel, dataset) -> ConfidenceMap:
    """Average each set's pooled features, then apply eval BatchNorm and the head once."""
    feats = np.stack([set_features(model, s) for s in dataset.sets])
    vals = ccnn.predict_from_features(model, feats)
    return ConfidenceMap(vals, list(dataset.points), dataset.grid)


@dataclass
class PhaseDiagram:
    labels: list  # tuple of phase names per point, possibly empty
    points: list
    threshold: float
    grid: Optional[np.ndarray] = None

    def names(self) -> list:
        return ["+".join(l) if l else UNASSIGNED for l in self.labels]


def phase_diagram(maps, threshold: float = DEFAULT_THRESHOLD) -> PhaseDiagram:
    if not 0 < threshold < 1:
        raise DataError("threshold must lie in (0, 1)")
    maps = list(maps)
    if not maps:
        raise DataError("no confidence maps given")
    ref = maps[0][1]
    for _, m in maps[1:]:
        if len(m.points) != len(ref.points) or any(a != b for a, b in zip(m.points, ref.points)):
            raise DataError("confidence maps do not share one grid")
    labels = [tuple(name for name, m in maps if m.values[i] >= threshold) for i in range(len(ref.points))]
    return PhaseDiagram(labels, ref.points, threshold, ref.grid)


def diagram_agreement(diagram: PhaseDiagram, truth, modeled) -> float:
    """Fraction of points whose label set is exactly ``{truth}`` for modeled
    phases and empty otherwise."""
    modeled = set(modeled)
    hits = [set(l) == ({t} if t in modeled else set()) for l, t in zip(diagram.labels, truth)]
    return float(np.mean(hits))


# ---------------------------------------------------------- correlators

def edge_mask(h: int, w: Optional[int] = None) -> np.ndarray:
    w = h if w is None else w
    m = np.zeros((h, w), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def bulk_mask(h: int, w: Optional[int] = None) -> np.ndarray:
    w = h if w is None else w
    m = np.zeros((h, w), dtype=bool)
    m[2:h - 2, 2:w - 2] = True
    return m


def _shift_pairs(h, w, d):
    """Slices selecting sites ``x`` and ``x + d`` with both inside the lattice."""
    dr, dc = d
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 >= r1 or c0 >= c1:
        return None
    return (slice(r0, r1), slice(c0, c1)), (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))


def connected_two_point(snapshot_set: SnapshotSet, displacement, region_mask=None) -> float:
    """Pooled mean of ``dn(x) dn(x + d)`` over snapshots, masked site pairs and
    the point-group images of ``d``."""
    dn = site_fluctuations(snapshot_set)
    N, h, w = dn.shape
    mask = np.ones((h, w), dtype=bool) if region_mask is None else np.asarray(region_mask, dtype=bool)
    if mask.shape != (h, w):
        raise DataError("mask shape does not match the lattice")
    if abs(displacement[0]) >= h or abs(displacement[1]) >= w:
        raise DataError("displacement exceeds the lattice")
    total, count = 0.0, 0
    for dg in d4.vector_orbit(displacement):
        sl = _shift_pairs(h, w, dg)
        if sl is None:
            continue
        a, b = sl
        valid = mask[a] & mask[b]
        n_valid = int(valid.sum())
        if n_valid == 0:
            continue
        total += float(np.sum(dn[(slice(None),) + a] * dn[(slice(None),) + b] * valid))
        count += N * n_valid
    if count == 0:
        raise DataError("no site pairs inside the mask for this displacement")
    return total / count


def _check_offsets(offsets):
    offs = [tuple(int(v) for v in o) for o in offsets]
    if len(offs) != 3 or len(set(offs)) != 3:
        raise DataError("need three distinct offsets")
    return offs


def three_point_terms(snapshot_set: SnapshotSet, offsets) -> np.ndarray:
    """``(n_terms, 3)`` factors over snapshots, group images and translations."""
    offs = _check_offsets(offsets)
    dn = site_fluctuations(snapshot_set)
    _, h, w = dn.shape
    chunks = []
    for g in d4.ELEMENTS:
        og = [d4.apply_vector(o, g) for o in offs]
        rs, cs = [o[0] for o in og], [o[1] for o in og]
        r0, r1 = -min(rs), h - max(rs)
        c0, c1 = -min(cs), w - max(cs)
        if r0 >= r1 or c0 >= c1:
            continue
        f = [dn[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel() for dr, dc in og]
        chunks.append(np.stack(f, axis=1))
    if not chunks:
        raise DataError("offsets do not fit inside the lattice")
    return np.concatenate(chunks)


def three_point_correlator(snapshot_set: SnapshotSet, offsets) -> float:
    t = three_point_terms(snapshot_set, offsets)
    return float(np.mean(t[:, 0] * t[:, 1] * t[:, 2]))


@dataclass
class SignDecomposition:
    """Class magnitudes normalized by the total number of terms; the mixed
    classes are further divided by their 3 sign arrangements."""

    ppp: float
    ppm: float
    pmm: float
    mmm: float
    total: float
    n_terms: int

    def recombine(self) -> float:
        return self.ppp - 3.0 * self.ppm + 3.0 * self.pmm - self.mmm

    def as_dict(self) -> dict:
        return {"+++": self.ppp, "++-": self.ppm, "+--": self.pmm, "---": self.mmm,
                "total": self.total, "n_terms": self.n_terms}


def sign_decomposition(snapshot_set: SnapshotSet, offsets) -> SignDecomposition:
    t = three_point_terms(snapshot_set, offsets)
    prod = t[:, 0] * t[:, 1] * t[:, 2]
    n = len(prod)
    nonzero = np.all(t != 0, axis=1)
    n_neg = (t < 0).sum(axis=1)
    mag = np.abs(prod)
    cls = [float(mag[nonzero & (n_neg == k)].sum()) / n for k in range(4)]
    return SignDecomposition(cls[0], cls[1] / 3.0, cls[2] / 3.0, cls[3], float(prod.mean()), n)


# offsets of a long-range three-site motif useful for the rhombic ordering
RHOMBIC_MOTIF = ((0, 0), (5, 4), (5, -4))
