"""Pure-numpy reference kernels.

All routines take a batch of zero-padded maps ``x`` of shape ``(B, Nh, Nw)``
and a filter stack ``k`` of shape ``(nk, Fh, Fw)``; the "valid" output domain
has shape ``(Mh, Mw) = (Nh - Fh + 1, Nw - Fw + 1)``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, fh, fw):
    # (B, Mh, Mw, Fh, Fw) view
    return sliding_window_view(x, (fh, fw), axis=(1, 2))


def correlate_valid(x, k):
    """Cross-correlation ``out[b, q, i, j] = sum_{u,v} k[q,u,v] x[b, i+u, j+v]``."""
    _, fh, fw = k.shape
    if x.shape[1] < fh or x.shape[2] < fw:
        raise ValueError("filter larger than input")
    win = _windows(x, fh, fw)
    out = np.tensordot(win, k, axes=([3, 4], [1, 2]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_filter_grad(x, g, fh, fw):
    """Adjoint of :func:`correlate_valid` with respect to the filters."""
    win = _windows(x, fh, fw)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 1, 2]))


def _power_maps(x, k, order):
    u = correlate_valid(x, k)
    s2 = correlate_valid(x * x, k * k) if order >= 2 else None
    s3 = correlate_valid(x * x * x, k * k * k) if order >= 3 else None
    return u, s2, s3


def _combine(u, s2, s3, order):
    maps = [u]
    if order >= 2:
        maps.append(u * u - s2)
    if order >= 3:
        maps.append(u * u * u - 3.0 * u * s2 + 2.0 * s3)
    return maps


def pooled_correlators(x, k, w, order):
    """Weighted sums ``sum_x w(x) C^(m)(x)`` for ``m = 1..order``.

    Returns an array of shape ``(B, nk, order)``.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    u, s2, s3 = _power_maps(x, k, order)
    if w.shape != u.shape[2:]:
        raise ValueError("weight map shape does not match output domain")
    maps = _combine(u, s2, s3, order)
    return np.stack([np.tensordot(c, w, axes=([2, 3], [0, 1])) for c in maps], axis=-1)


def pooled_correlators_backward(x, k, w, dfeat):
    """Gradients of ``sum(dfeat * pooled_correlators(x, k, w))`` w.r.t. ``k`` and ``w``."""
    order = dfeat.shape[2]
    _, fh, fw = k.shape
    u, s2, s3 = _power_maps(x, k, order)
    maps = _combine(u, s2, s3, order)
    d = [dfeat[:, :, m, None, None] for m in range(order)]

    dw = sum(np.tensordot(d[m][..., 0, 0], maps[m], axes=([0, 1], [0, 1])) for m in range(order))

    gu = d[0] * w
    dk = None
    if order >= 2:
        gu = gu + 2.0 * d[1] * u * w
        gs2 = -d[1] * w
        if order >= 3:
            gu = gu + 3.0 * d[2] * (u * u - s2) * w
            gs2 = gs2 - 3.0 * d[2] * u * w
            gs3 = 2.0 * d[2] * w
    dk = correlate_filter_grad(x, gu, fh, fw)
    if order >= 2:
        dk = dk + 2.0 * k * correlate_filter_grad(x * x, gs2, fh, fw)
    if order >= 3:
        dk = dk + 3.0 * k * k * correlate_filter_grad(x * x * x, gs3, fh, fw)
    return dk, dw
