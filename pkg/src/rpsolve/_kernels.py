"""Sliding-window sums with exponential kernels, in linear time.

The quantity computed throughout is

    S_i = sum_{j = max(0, i - w)}^{i} K(i, j) f_j

where the kernel is either scalar per mode, ``K(i, j) = exp(ell_i - ell_j)``,
or a product of one-step propagator matrices. Windows are split into blocks
of length ``w``; each output is a forward partial sum within its own block
plus a backward partial sum from the preceding block, so every term enters
by addition only (no differences of large running sums).
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512
_MAX_SPAN = 300.0
_DIRECT_LAGS = 64


def _scan_chunked(ell, f, chunk):
    K, n = f.shape
    nc = -(-n // chunk)
    pad = nc * chunk - n
    if pad:
        ell = np.concatenate([ell, np.repeat(ell[:, -1:], pad, axis=1)], axis=1)
        f = np.concatenate([f, np.zeros((K, pad), dtype=f.dtype)], axis=1)
    L = ell.reshape(K, nc, chunk)
    F = f.reshape(K, nc, chunk)
    ref = L[:, :, :1]
    rel = L - ref
    if np.max(np.abs(rel.real)) > _MAX_SPAN:
        return None
    local = np.exp(rel) * np.cumsum(np.exp(-rel) * F, axis=2)
    out = local.copy()
    carry = local[:, 0, -1]
    for c in range(1, nc):
        gain = np.exp(L[:, c, :] - L[:, c - 1, -1:])
        out[:, c, :] += gain * carry[:, None]
        carry = out[:, c, -1]
    return out.reshape(K, nc * chunk)[:, :n]


def prefix_scan(ell: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``x_i = sum_{j <= i} exp(ell_i - ell_j) f_j`` along the last axis (modes on axis 0)."""
    chunk = _CHUNK
    while True:
        out = _scan_chunked(ell, f, chunk)
        if out is not None:
            return out
        if chunk == 1:
            raise FloatingPointError("log-amplitude jumps too fast for a stable scan")
        chunk = max(1, chunk // 4)


def _direct_sliding(ell, f, w):
    out = f.copy()
    n = f.shape[1]
    for k in range(1, min(w, n - 1) + 1):
        out[:, k:] += np.exp(ell[:, k:] - ell[:, :-k]) * f[:, :-k]
    return out


def sliding_sum(ell: np.ndarray, f: np.ndarray, w: int) -> np.ndarray:
    """Scalar-kernel sliding sum over the window ``[max(0, i-w), i]``."""
    ell = np.asarray(ell)
    dtype = np.result_type(ell, f, float)
    ell = ell.astype(dtype, copy=False)
    f = np.asarray(f, dtype=dtype)
    n = f.shape[1]
    if w <= 0:
        return f.copy()
    if w >= n - 1:
        return prefix_scan(ell, f)
    if w <= _DIRECT_LAGS:
        return _direct_sliding(ell, f, w)
    out = np.empty_like(f)
    for p in range(0, n, w):
        q = min(p + w, n)
        pre = prefix_scan(ell[:, p:q], f[:, p:q])
        if p == 0:
            out[:, p:q] = pre
            continue
        # tail[k] = sum_{j >= p-w+k, j < p} exp(ell_{p-1} - ell_j) f_j, referenced at the block edge
        # so every exponent is a forward kernel value and nothing overflows on long windows
        edge = ell[:, p - 1 : p]
        terms = np.exp(edge - ell[:, p - w : p]) * f[:, p - w : p]
        tail = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]
        m = q - p
        out[:, p:q] = pre + np.exp(ell[:, p:q] - edge) * tail[:, :m]
    return out


def window_trapezoid(ell, f, w, dt):
    """Trapezoid integral over ``[t_i - w dt, t_i]`` (clipped at index 0) of ``exp(ell_i - ell_s) f_s``."""
    n = f.shape[1]
    S = sliding_sum(ell, f, w)
    idx = np.arange(n)
    lo = np.maximum(idx - w, 0)
    out = dt * (S - 0.5 * f - 0.5 * np.exp(ell - ell[:, lo]) * f[:, lo])
    out[:, 0] = 0.0
    return out


def reverse(x):
    return x[..., ::-1]


# ---------------------------------------------------------------- matrix kernels


def sliding_sum_matrix(steps: np.ndarray, f: np.ndarray, w: int):
    """Matrix-kernel sliding sum; ``steps[i]`` propagates from point ``i`` to ``i+1``.

    ``f`` has shape (n, d); the kernel ``K(i, j)`` is ``steps[i-1] @ ... @ steps[j]``.
    Returns ``(S, E)`` where ``E[i] = K(i, lo_i) f_{lo_i}`` is the image of the
    oldest term in the window, needed for trapezoid end weights.
    """
    n, d = f.shape
    w = max(int(w), 1)
    S = np.empty_like(f)
    E = np.empty_like(f)
    for p in range(0, n, w):
        q = min(p + w, n)
        x = f[p].copy()
        S[p] = x
        for i in range(p + 1, q):
            x = steps[i - 1] @ x + f[i]
            S[i] = x
        if p == 0:
            y = f[0].copy()
            E[0] = y
            for i in range(1, q):
                y = steps[i - 1] @ y
                E[i] = y
            continue
        # Q[j - (p - w)] = sum_{m=j}^{p-1} K(p, m) f_m and G[...] = K(p, j) f_j
        Q = np.empty((w, d), dtype=f.dtype)
        G = np.empty((w, d), dtype=f.dtype)
        M = steps[p - 1].copy()
        g = M @ f[p - 1]
        acc = g
        Q[w - 1], G[w - 1] = acc, g
        for j in range(p - 2, p - w - 1, -1):
            M = M @ steps[j]
            g = M @ f[j]
            acc = acc + g
            Q[j - (p - w)], G[j - (p - w)] = acc, g
        P = np.eye(d)
        for i in range(p, q):
            if i > p:
                P = steps[i - 1] @ P
            S[i] += P @ Q[i - p]
            E[i] = P @ G[i - p]
    return S, E


def window_trapezoid_matrix(steps, f, w, dt):
    """Matrix-kernel analogue of :func:`window_trapezoid`; ``f`` has shape (n, d)."""
    S, E = sliding_sum_matrix(steps, f, w)
    out = dt * (S - 0.5 * f - 0.5 * E)
    out[0] = 0.0
    return out
