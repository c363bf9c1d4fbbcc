"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``VISU_PURE_PYTHON=1`` is set. Signatures match the extension exactly.

Alignment kernels work on compact arrays (only slots in I) with boolean
membership matrices ``pos`` (P), ``pos_excl`` (P') and ``neg`` (N).
Exponentials are shifted per anchor row by the row's largest |similarity|;
the shift cancels in every ratio, and ``log_shift`` lets callers recover
unshifted denominators.
"""

import numpy as np


def cua_kernel(fa, fb, pos, pos_excl, neg, tau):
    """Return (value, grad wrt fa, shifted A matrix, per-row log shift)."""
    n = fa.shape[0]
    grad = np.zeros_like(fa)
    A = np.zeros((n, n))
    if n == 0:
        return 0.0, grad, A, np.zeros(0)
    s = (fa @ fb.T) / tau
    shift = np.abs(s).max(axis=1)
    e = np.exp(s - shift[:, None])
    eneg = np.exp(-s - shift[:, None])
    posf = pos.astype(np.float64)
    negsum = (e * neg).sum(axis=1)
    A = e + eneg @ pos_excl.T.astype(np.float64) + negsum[:, None]
    A = np.where(pos, A, 0.0)
    npos = posf.sum(axis=1)
    active = npos > 0
    safeA = np.where(pos, A, 1.0)
    terms = np.where(pos, s - shift[:, None] - np.log(safeA), 0.0)
    value = -float((terms.sum(axis=1)[active] / npos[active]).sum())
    w = np.zeros_like(A)
    w[active] = posf[active] / (npos[active, None] * safeA[active])
    coef = w * (A - e) + (w @ pos_excl.astype(np.float64)) * eneg - w.sum(axis=1)[:, None] * (neg * e)
    grad = -(coef @ fb) / tau
    return value, grad, A, np.where(active, shift, 0.0)


def cc_kernel(f, g, pos_excl, neg, tau):
    """Return (value, grad wrt anchors f, grad wrt partners g, shifted B, log shift)."""
    n = f.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(f), np.zeros_like(g), np.zeros(0), np.zeros(0)
    s = (f @ g.T) / tau
    shift = np.abs(s).max(axis=1)
    e = np.exp(s - shift[:, None])
    pe = pos_excl.astype(np.float64)
    denom_mask = pos_excl | neg
    B = (e * denom_mask).sum(axis=1)
    npos = pe.sum(axis=1)
    active = npos > 0
    safeB = np.where(active, B, 1.0)
    terms = ((s - shift[:, None]) * pe).sum(axis=1) - npos * np.log(safeB)
    value = -float((terms[active] / npos[active]).sum())
    coef = np.zeros((n, n))
    coef[active] = (
        -pe[active] / npos[active, None] + denom_mask[active] * e[active] / safeB[active, None]
    ) / tau
    grad_f = coef @ g
    grad_g = coef.T @ f
    return value, grad_f, grad_g, np.where(active, B, 0.0), shift


def raster_segments(segs, radius, height, width):
    """Anti-aliased coverage of thick line segments on a height x width canvas.

    ``segs`` is (k, 4) of (x0, y0, x1, y1) in pixel-centre coordinates.
    Coverage per segment is clip(radius + 0.5 - distance, 0, 1); the canvas
    takes the max over segments.
    """
    out = np.zeros((height, width))
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    reach = radius + 0.5
    for x0, y0, x1, y1 in np.asarray(segs, dtype=np.float64):
        c0 = max(int(np.floor(min(x0, x1) - reach)), 0)
        c1 = min(int(np.ceil(max(x0, x1) + reach)) + 1, width)
        r0 = max(int(np.floor(min(y0, y1) - reach)), 0)
        r1 = min(int(np.ceil(max(y0, y1) + reach)) + 1, height)
        if c0 >= c1 or r0 >= r1:
            continue
        px = xs[r0:r1, c0:c1]
        py = ys[r0:r1, c0:c1]
        dx = x1 - x0
        dy = y1 - y0
        ll = dx * dx + dy * dy
        if ll > 0.0:
            t = ((px - x0) * dx + (py - y0) * dy) / ll
            t = np.minimum(np.maximum(t, 0.0), 1.0)
        else:
            t = np.zeros_like(px)
        qx = px - (x0 + t * dx)
        qy = py - (y0 + t * dy)
        d = np.sqrt(qx * qx + qy * qy)
        cov = np.minimum(np.maximum(reach - d, 0.0), 1.0)
        np.maximum(out[r0:r1, c0:c1], cov, out=out[r0:r1, c0:c1])
    return out
