"""Row-wise numeric kernels behind the autodiff ops.

Every kernel has two implementations: a loop version compiled with
``numba.njit`` and a vectorised pure-numpy version. The active path is
chosen by the ``DUALSOURCE_BACKEND`` environment variable (``numba`` or
``numpy``) at import time and can be switched later with
:func:`set_backend`. When numba cannot be imported the numpy path is used.

All kernels take 2-D C-contiguous float arrays laid out as ``(rows, n)``
and return fresh arrays; callers reshape.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

__all__ = [
    "HAS_NUMBA",
    "get_backend",
    "set_backend",
    "softmax_rows",
    "softmax_backward_rows",
    "layer_norm_rows",
    "layer_norm_backward_rows",
    "cross_entropy_rows",
    "embedding_backward",
    "lstm_pointwise",
    "lstm_pointwise_backward",
]


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _softmax_rows_np(x):
    m = np.max(x, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def _softmax_backward_rows_np(y, gy):
    dot = np.sum(gy * y, axis=1, keepdims=True)
    return y * (gy - dot)


def _layer_norm_rows_np(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def _layer_norm_backward_rows_np(gy, xhat, rstd, gamma):
    dxhat = gy * gamma
    n = xhat.shape[1]
    a = dxhat.sum(axis=1, keepdims=True) / n
    b = np.sum(dxhat * xhat, axis=1, keepdims=True) / n
    dx = rstd[:, None] * (dxhat - a - xhat * b)
    return dx, np.sum(gy * xhat, axis=0), gy.sum(axis=0)


def _cross_entropy_rows_np(logits, targets, weights, smoothing):
    rows, v = logits.shape
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    idx = np.arange(rows)
    nll = -logp[idx, targets]
    smooth = -logp.mean(axis=1)
    loss = (1.0 - smoothing) * nll + smoothing * smooth
    grad = np.exp(logp)
    grad -= smoothing / v
    grad[idx, targets] -= 1.0 - smoothing
    grad *= weights[:, None]
    return loss * weights, grad


def _embedding_backward_np(grad_rows, ids, vocab):
    out = np.zeros((vocab, grad_rows.shape[1]), dtype=grad_rows.dtype)
    np.add.at(out, ids, grad_rows)
    return out


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_pointwise_np(gates, c_prev, h_prev, mask):
    hid = c_prev.shape[1]
    i = _sigmoid_np(gates[:, :hid])
    f = _sigmoid_np(gates[:, hid:2 * hid])
    g = np.tanh(gates[:, 2 * hid:3 * hid])
    o = _sigmoid_np(gates[:, 3 * hid:])
    c_new = f * c_prev + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    m = mask[:, None]
    h = m * h_new + (1.0 - m) * h_prev
    c = m * c_new + (1.0 - m) * c_prev
    acts = np.concatenate([i, f, g, o, tc], axis=1)
    return h, c, acts


def _lstm_pointwise_backward_np(gh, gc, acts, c_prev, mask):
    hid = c_prev.shape[1]
    i, f, g, o, tc = (acts[:, k * hid:(k + 1) * hid] for k in range(5))
    m = mask[:, None]
    gh_new = gh * m
    gc_new = gc * m + gh_new * o * (1.0 - tc * tc)
    d_i = gc_new * g * i * (1.0 - i)
    d_f = gc_new * c_prev * f * (1.0 - f)
    d_g = gc_new * i * (1.0 - g * g)
    d_o = gh_new * tc * o * (1.0 - o)
    dgates = np.concatenate([d_i, d_f, d_g, d_o], axis=1)
    dc_prev = gc_new * f + gc * (1.0 - m)
    dh_prev = gh * (1.0 - m)
    return dgates, dc_prev, dh_prev


# ---------------------------------------------------------------------------
# loop implementations (compiled with numba when available)
# ---------------------------------------------------------------------------

def _softmax_rows_loop(x):
    rows, n = x.shape
    out = np.zeros_like(x)
    for r in range(rows):
        m = -np.inf
        for j in range(n):
            if x[r, j] > m:
                m = x[r, j]
        if m == -np.inf:
            continue
        s = 0.0
        for j in range(n):
            e = math.exp(x[r, j] - m)
            out[r, j] = e
            s += e
        for j in range(n):
            out[r, j] /= s
    return out


def _softmax_backward_rows_loop(y, gy):
    rows, n = y.shape
    out = np.empty_like(y)
    for r in range(rows):
        dot = 0.0
        for j in range(n):
            dot += gy[r, j] * y[r, j]
        for j in range(n):
            out[r, j] = y[r, j] * (gy[r, j] - dot)
    return out


def _layer_norm_rows_loop(x, gamma, beta, eps):
    rows, n = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        mu = 0.0
        for j in range(n):
            mu += x[r, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = x[r, j] - mu
            var += d * d
        var /= n
        rs = 1.0 / math.sqrt(var + eps)
        rstd[r] = rs
        for j in range(n):
            xh = (x[r, j] - mu) * rs
            xhat[r, j] = xh
            y[r, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


def _layer_norm_backward_rows_loop(gy, xhat, rstd, gamma):
    rows, n = gy.shape
    dx = np.empty_like(gy)
    dgamma = np.zeros(n, dtype=gy.dtype)
    dbeta = np.zeros(n, dtype=gy.dtype)
    for r in range(rows):
        a = 0.0
        b = 0.0
        for j in range(n):
            d = gy[r, j] * gamma[j]
            a += d
            b += d * xhat[r, j]
            dgamma[j] += gy[r, j] * xhat[r, j]
            dbeta[j] += gy[r, j]
        a /= n
        b /= n
        for j in range(n):
            dx[r, j] = rstd[r] * (gy[r, j] * gamma[j] - a - xhat[r, j] * b)
    return dx, dgamma, dbeta


def _cross_entropy_rows_loop(logits, targets, weights, smoothing):
    rows, v = logits.shape
    loss = np.zeros(rows, dtype=logits.dtype)
    grad = np.zeros_like(logits)
    for r in range(rows):
        w = weights[r]
        if w == 0.0:
            continue
        m = logits[r, 0]
        for j in range(1, v):
            if logits[r, j] > m:
                m = logits[r, j]
        s = 0.0
        for j in range(v):
            s += math.exp(logits[r, j] - m)
        lse = math.log(s) + m
        t = targets[r]
        nll = lse - logits[r, t]
        mean_neg = 0.0
        for j in range(v):
            mean_neg += lse - logits[r, j]
        mean_neg /= v
        loss[r] = w * ((1.0 - smoothing) * nll + smoothing * mean_neg)
        for j in range(v):
            grad[r, j] = w * (math.exp(logits[r, j] - lse) - smoothing / v)
        grad[r, t] -= w * (1.0 - smoothing)
    return loss, grad


def _embedding_backward_loop(grad_rows, ids, vocab):
    rows, d = grad_rows.shape
    out = np.zeros((vocab, d), dtype=grad_rows.dtype)
    for r in range(rows):
        k = ids[r]
        for j in range(d):
            out[k, j] += grad_rows[r, j]
    return out


def _sig(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


def _lstm_pointwise_loop(gates, c_prev, h_prev, mask):
    b, hid = c_prev.shape
    h = np.empty_like(c_prev)
    c = np.empty_like(c_prev)
    acts = np.empty((b, 5 * hid), dtype=c_prev.dtype)
    for r in range(b):
        m = mask[r]
        for j in range(hid):
            i = _sig(gates[r, j])
            f = _sig(gates[r, hid + j])
            g = math.tanh(gates[r, 2 * hid + j])
            o = _sig(gates[r, 3 * hid + j])
            cn = f * c_prev[r, j] + i * g
            tc = math.tanh(cn)
            acts[r, j] = i
            acts[r, hid + j] = f
            acts[r, 2 * hid + j] = g
            acts[r, 3 * hid + j] = o
            acts[r, 4 * hid + j] = tc
            h[r, j] = m * (o * tc) + (1.0 - m) * h_prev[r, j]
            c[r, j] = m * cn + (1.0 - m) * c_prev[r, j]
    return h, c, acts


def _lstm_pointwise_backward_loop(gh, gc, acts, c_prev, mask):
    b, hid = c_prev.shape
    dgates = np.empty((b, 4 * hid), dtype=c_prev.dtype)
    dc_prev = np.empty_like(c_prev)
    dh_prev = np.empty_like(c_prev)
    for r in range(b):
        m = mask[r]
        for j in range(hid):
            i = acts[r, j]
            f = acts[r, hid + j]
            g = acts[r, 2 * hid + j]
            o = acts[r, 3 * hid + j]
            tc = acts[r, 4 * hid + j]
            ghn = gh[r, j] * m
            gcn = gc[r, j] * m + ghn * o * (1.0 - tc * tc)
            dgates[r, j] = gcn * g * i * (1.0 - i)
            dgates[r, hid + j] = gcn * c_prev[r, j] * f * (1.0 - f)
            dgates[r, 2 * hid + j] = gcn * i * (1.0 - g * g)
            dgates[r, 3 * hid + j] = ghn * tc * o * (1.0 - o)
            dc_prev[r, j] = gcn * f + gc[r, j] * (1.0 - m)
            dh_prev[r, j] = gh[r, j] * (1.0 - m)
    return dgates, dc_prev, dh_prev


_NAMES = [
    "softmax_rows",
    "softmax_backward_rows",
    "layer_norm_rows",
    "layer_norm_backward_rows",
    "cross_entropy_rows",
    "embedding_backward",
    "lstm_pointwise",
    "lstm_pointwise_backward",
]

_NUMPY_IMPLS = {
    "softmax_rows": _softmax_rows_np,
    "softmax_backward_rows": _softmax_backward_rows_np,
    "layer_norm_rows": _layer_norm_rows_np,
    "layer_norm_backward_rows": _layer_norm_backward_rows_np,
    "cross_entropy_rows": _cross_entropy_rows_np,
    "embedding_backward": _embedding_backward_np,
    "lstm_pointwise": _lstm_pointwise_np,
    "lstm_pointwise_backward": _lstm_pointwise_backward_np,
}

_LOOP_IMPLS = {
    "softmax_rows": _softmax_rows_loop,
    "softmax_backward_rows": _softmax_backward_rows_loop,
    "layer_norm_rows": _layer_norm_rows_loop,
    "layer_norm_backward_rows": _layer_norm_backward_rows_loop,
    "cross_entropy_rows": _cross_entropy_rows_loop,
    "embedding_backward": _embedding_backward_loop,
    "lstm_pointwise": _lstm_pointwise_loop,
    "lstm_pointwise_backward": _lstm_pointwise_backward_loop,
}

_numba_impls: dict | None = None


def _compile():
    global _numba_impls, _sig
    if _numba_impls is None:
        # _sig is resolved as a global from inside the LSTM loops.
        _sig = numba.njit(cache=True, inline="always")(_sig)
        _numba_impls = {
            name: numba.njit(cache=True)(fn) for name, fn in _LOOP_IMPLS.items()
        }
    return _numba_impls


_backend = "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` for every kernel in this module."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        impls = _compile()
    else:
        impls = _NUMPY_IMPLS
    g = globals()
    for n in _NAMES:
        g[n] = impls[n]
    _backend = name


def _default_backend() -> str:
    env = os.environ.get("DUALSOURCE_BACKEND", "").strip().lower()
    if env in ("numpy", "numba"):
        return env if (env == "numpy" or HAS_NUMBA) else "numpy"
    return "numba" if HAS_NUMBA else "numpy"


# placeholders replaced by set_backend below
softmax_rows = softmax_backward_rows = layer_norm_rows = None
layer_norm_backward_rows = cross_entropy_rows = embedding_backward = None
lstm_pointwise = lstm_pointwise_backward = None

set_backend(_default_backend())
