"""Hot loops behind gridmath and the blob detector.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. The numba path is used when numba imports and the environment
variable ``DUCKSEG_DISABLE_NUMBA`` is unset (or ``0``). Both paths agree to
floating-point summation order; they are not bit-identical with each other,
so reproducibility guarantees hold per backend.

All arrays are float64, single sample, channel-first ``(C, H, W)``.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DISABLED = os.environ.get("DUCKSEG_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships in the dev environment
    HAVE_NUMBA = False


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv_forward_np(x, w, stride, pad):
    """Cross-correlation of ``x (C_in,H,W)`` with ``w (C_out,C_in,kh,kw)``."""
    _, kh, kw = w.shape[1:]
    xp = _pad(x, pad)
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    win = _windows(xp, kh, kw, stride, ho, wo)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def conv_grad_weight_np(x, gy, stride, pad, kh, kw):
    """``gw[o,c,a,b] = sum_ij gy[o,i,j] * xpad[c, i*s+a, j*s+b]``."""
    xp = _pad(x, pad)
    win = _windows(xp, kh, kw, stride, gy.shape[1], gy.shape[2])
    return np.tensordot(gy, win, axes=([1, 2], [1, 2]))


def tconv_scatter_np(x, k, stride, pad):
    """Transposed convolution by direct scatter; ``k`` is ``(C_in,C_out,kh,kw)``."""
    _, h, w = x.shape
    c_out, kh, kw = k.shape[1:]
    full = np.zeros((c_out, (h - 1) * stride + kh, (w - 1) * stride + kw))
    for a in range(kh):
        for b in range(kw):
            contrib = np.tensordot(k[:, :, a, b], x, axes=([0], [0]))
            full[:, a : a + (h - 1) * stride + 1 : stride, b : b + (w - 1) * stride + 1 : stride] += contrib
    if pad:
        full = full[:, pad:-pad, pad:-pad]
    return full


def label_components_np(binary):
    """4-connected labeling by min-label propagation.

    Labels are 1..n in raster order of each component's first pixel; 0 is
    background. Returns ``(labels, n)``.
    """
    binary = np.asarray(binary, dtype=bool)
    h, w = binary.shape
    big = h * w
    lab = np.where(binary, np.arange(big).reshape(h, w), big)
    while True:
        prev = lab
        nxt = lab.copy()
        nxt[1:, :] = np.minimum(nxt[1:, :], lab[:-1, :])
        nxt[:-1, :] = np.minimum(nxt[:-1, :], lab[1:, :])
        nxt[:, 1:] = np.minimum(nxt[:, 1:], lab[:, :-1])
        nxt[:, :-1] = np.minimum(nxt[:, :-1], lab[:, 1:])
        lab = np.where(binary, nxt, big)
        if np.array_equal(lab, prev):
            break
    roots, inverse = np.unique(lab, return_inverse=True)
    inverse = inverse.reshape(h, w) + 1
    out = np.where(binary, inverse, 0).astype(np.int64)
    n = int(np.count_nonzero(roots < big))
    return out, n


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _pad_nb(x, pad):
        c, h, w = x.shape
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
        xp[:, pad : pad + h, pad : pad + w] = x
        return xp

    @_jit
    def _im2col_nb(xp, kh, kw, stride, ho, wo):
        c = xp.shape[0]
        cols = np.empty((c * kh * kw, ho * wo))
        for ci in range(c):
            for a in range(kh):
                for b in range(kw):
                    row = (ci * kh + a) * kw + b
                    for i in range(ho):
                        r = i * stride + a
                        base = i * wo
                        for j in range(wo):
                            cols[row, base + j] = xp[ci, r, j * stride + b]
        return cols

    @_jit
    def conv_forward_nb(x, w, stride, pad):
        c_out, c_in, kh, kw = w.shape
        xp = _pad_nb(x, pad)
        ho = (xp.shape[1] - kh) // stride + 1
        wo = (xp.shape[2] - kw) // stride + 1
        cols = _im2col_nb(xp, kh, kw, stride, ho, wo)
        out = np.dot(np.ascontiguousarray(w).reshape(c_out, c_in * kh * kw), cols)
        return out.reshape(c_out, ho, wo)

    @_jit
    def conv_grad_weight_nb(x, gy, stride, pad, kh, kw):
        c_in = x.shape[0]
        c_out, ho, wo = gy.shape
        xp = _pad_nb(x, pad)
        cols = _im2col_nb(xp, kh, kw, stride, ho, wo)
        gw = np.dot(np.ascontiguousarray(gy).reshape(c_out, ho * wo), cols.T)
        return gw.reshape(c_out, c_in, kh, kw)

    @_jit
    def tconv_scatter_nb(x, k, stride, pad):
        c_in, h, w = x.shape
        c_out, kh, kw = k.shape[1], k.shape[2], k.shape[3]
        fh = (h - 1) * stride + kh
        fw = (w - 1) * stride + kw
        kmat = np.ascontiguousarray(k).reshape(c_in, c_out * kh * kw)
        cols = np.dot(kmat.T.copy(), np.ascontiguousarray(x).reshape(c_in, h * w))
        full = np.zeros((c_out, fh, fw))
        for o in range(c_out):
            for a in range(kh):
                for b in range(kw):
                    row = (o * kh + a) * kw + b
                    for i in range(h):
                        r = i * stride + a
                        base = i * w
                        for j in range(w):
                            full[o, r, j * stride + b] += cols[row, base + j]
        return full[:, pad : fh - pad, pad : fw - pad].copy()

    @_jit
    def _label_components_nb(binary):
        h, w = binary.shape
        out = np.zeros((h, w), dtype=np.int64)
        stack_r = np.empty(h * w, dtype=np.int64)
        stack_c = np.empty(h * w, dtype=np.int64)
        n = 0
        for r0 in range(h):
            for c0 in range(w):
                if not binary[r0, c0] or out[r0, c0] != 0:
                    continue
                n += 1
                out[r0, c0] = n
                top = 0
                stack_r[0] = r0
                stack_c[0] = c0
                top = 1
                while top > 0:
                    top -= 1
                    r = stack_r[top]
                    c = stack_c[top]
                    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        rr = r + dr
                        cc = c + dc
                        if 0 <= rr < h and 0 <= cc < w and binary[rr, cc] and out[rr, cc] == 0:
                            out[rr, cc] = n
                            stack_r[top] = rr
                            stack_c[top] = cc
                            top += 1
        return out, n

    def label_components_nb(binary):
        out, n = _label_components_nb(np.ascontiguousarray(binary, dtype=np.bool_))
        return out, int(n)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

if USE_NUMBA:
    def conv_forward(x, w, stride, pad):
        return conv_forward_nb(_f64(x), _f64(w), int(stride), int(pad))

    def conv_grad_weight(x, gy, stride, pad, kh, kw):
        return conv_grad_weight_nb(_f64(x), _f64(gy), int(stride), int(pad), int(kh), int(kw))

    def tconv_scatter(x, k, stride, pad):
        return tconv_scatter_nb(_f64(x), _f64(k), int(stride), int(pad))

    label_components = label_components_nb
else:
    conv_forward = conv_forward_np
    conv_grad_weight = conv_grad_weight_np
    tconv_scatter = tconv_scatter_np
    label_components = label_components_np
