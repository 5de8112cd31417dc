"""Batched LSTM step kernels (forward and backward).

Gate layout along the 4H axis is (input, forget, candidate, output). Each
kernel exists as a vectorised numpy function and, when numba is enabled,
as a fused loop compiled with ``@njit``. ``lstm_forward``/``lstm_backward``
dispatch to whichever backend is active.

Shapes: ``x`` (B, D), ``h``/``c`` (B, H), ``Wx`` (4H, D), ``Wh`` (4H, H),
``b`` (4H,). ``gates`` holds post-activation values (B, 4H) and ``tc`` is
tanh of the new cell state.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward_numpy(Wx, Wh, b, x, h, c):
    H = h.shape[1]
    a = h @ Wh.T + b
    if x.shape[1]:
        a += x @ Wx.T
    gates = np.empty_like(a)
    gates[:, : 2 * H] = _sigmoid(a[:, : 2 * H])
    gates[:, 2 * H : 3 * H] = np.tanh(a[:, 2 * H : 3 * H])
    gates[:, 3 * H :] = _sigmoid(a[:, 3 * H :])
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    return h2, c2, gates, tc


def lstm_backward_numpy(Wx, Wh, x, h, c, gates, tc, dh2, dc2, gWx, gWh, gb):
    """Accumulates parameter gradients in place; returns (dx, dh, dc)."""
    H = h.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    dct = dc2 + dh2 * o * (1.0 - tc * tc)
    da = np.empty_like(gates)
    da[:, :H] = dct * g * i * (1.0 - i)
    da[:, H : 2 * H] = dct * c * f * (1.0 - f)
    da[:, 2 * H : 3 * H] = dct * i * (1.0 - g * g)
    da[:, 3 * H :] = dh2 * tc * o * (1.0 - o)
    gWh += da.T @ h
    gb += da.sum(axis=0)
    if x.shape[1]:
        gWx += da.T @ x
        dx = da @ Wx
    else:
        dx = np.zeros_like(x)
    dh = da @ Wh
    dc = dct * f
    return dx, dh, dc


def _sig(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _lstm_forward_loops(Wx, Wh, b, x, h, c):
    B, H = h.shape
    D = x.shape[1]
    h2 = np.empty((B, H))
    c2 = np.empty((B, H))
    gates = np.empty((B, 4 * H))
    tc = np.empty((B, H))
    for n in range(B):
        for r in range(4 * H):
            acc = b[r]
            for k in range(D):
                acc += Wx[r, k] * x[n, k]
            for k in range(H):
                acc += Wh[r, k] * h[n, k]
            if 2 * H <= r < 3 * H:
                gates[n, r] = math.tanh(acc)
            else:
                gates[n, r] = _sig(acc)
        for j in range(H):
            cj = gates[n, H + j] * c[n, j] + gates[n, j] * gates[n, 2 * H + j]
            c2[n, j] = cj
            t = math.tanh(cj)
            tc[n, j] = t
            h2[n, j] = gates[n, 3 * H + j] * t
    return h2, c2, gates, tc


def _lstm_backward_loops(Wx, Wh, x, h, c, gates, tc, dh2, dc2, gWx, gWh, gb):
    B, H = h.shape
    D = x.shape[1]
    dx = np.zeros((B, D))
    dh = np.zeros((B, H))
    dc = np.empty((B, H))
    da = np.empty(4 * H)
    for n in range(B):
        for j in range(H):
            i = gates[n, j]
            f = gates[n, H + j]
            g = gates[n, 2 * H + j]
            o = gates[n, 3 * H + j]
            t = tc[n, j]
            dct = dc2[n, j] + dh2[n, j] * o * (1.0 - t * t)
            da[j] = dct * g * i * (1.0 - i)
            da[H + j] = dct * c[n, j] * f * (1.0 - f)
            da[2 * H + j] = dct * i * (1.0 - g * g)
            da[3 * H + j] = dh2[n, j] * t * o * (1.0 - o)
            dc[n, j] = dct * f
        for r in range(4 * H):
            d = da[r]
            gb[r] += d
            for k in range(D):
                gWx[r, k] += d * x[n, k]
                dx[n, k] += d * Wx[r, k]
            for k in range(H):
                gWh[r, k] += d * h[n, k]
                dh[n, k] += d * Wh[r, k]
    return dx, dh, dc


if HAVE_NUMBA:
    _sig = njit(_sig)
    lstm_forward_numba = njit(_lstm_forward_loops)
    lstm_backward_numba = njit(_lstm_backward_loops)
else:
    lstm_forward_numba = None
    lstm_backward_numba = None


def _contig(*arrs):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrs)


# The loop kernels beat BLAS-backed numpy only on small batches (single
# windows at inference); larger training batches stay on numpy.
NUMBA_MAX_ROWS = 8

if HAVE_NUMBA:

    def lstm_forward(Wx, Wh, b, x, h, c):
        if h.shape[0] > NUMBA_MAX_ROWS:
            return lstm_forward_numpy(Wx, Wh, b, x, h, c)
        return lstm_forward_numba(*_contig(Wx, Wh, b, x, h, c))

    def lstm_backward(Wx, Wh, x, h, c, gates, tc, dh2, dc2, gWx, gWh, gb):
        if h.shape[0] > NUMBA_MAX_ROWS:
            return lstm_backward_numpy(Wx, Wh, x, h, c, gates, tc, dh2, dc2, gWx, gWh, gb)
        # grad buffers are updated in place and must already be contiguous
        return lstm_backward_numba(
            *_contig(Wx, Wh, x, h, c, gates, tc, dh2, dc2), gWx, gWh, gb
        )

else:
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy
