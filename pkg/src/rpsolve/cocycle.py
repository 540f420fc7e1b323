"""Linear cocycle of the noise-driven linear part and its exponential dichotomy.

Conventions: matrix norms are Frobenius norms; ``phi(model, path, u, s)`` is
the cocycle over lag ``u`` started from the path shifted by ``s``, that is
``exp(A u + sum_k B_k (W_k(s+u) - W_k(s)))`` when the model commutes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import expm, schur

from .errors import NonCommutative, NonCommutativeMixedSpectrum, NotHyperbolic, SignMismatch
from .paths import BrownianPath, TimeGrid, sample_path

MINUS, PLUS = "minus", "plus"


def _fro(x) -> float:
    return float(np.linalg.norm(x))


def _commutator_norms(mats):
    worst = 0.0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            worst = max(worst, _fro(mats[i] @ mats[j] - mats[j] @ mats[i]))
    return worst


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Drift matrix ``A`` and Stratonovich noise matrices ``B[k]``."""

    A: np.ndarray
    B: np.ndarray = None
    comm_tol: float | None = None
    commutative: bool = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        d = A.shape[0]
        B = np.zeros((0, d, d)) if self.B is None else np.asarray(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((0, d, d))
        if B.ndim == 2 and d == 1:
            B = B.reshape(-1, 1, 1)
        if B.ndim != 3 or B.shape[1:] != (d, d):
            raise ValueError(f"B must have shape (M, {d}, {d})")
        A.flags.writeable = False
        B = B.copy()
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        tol = self.comm_tol
        if tol is None:
            tol = 1e-10 * (_fro(A) + sum(_fro(b) for b in B))
        object.__setattr__(self, "comm_tol", float(tol))
        object.__setattr__(self, "commutative", check_commutativity(self, tol))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.B.shape[0]

    @cached_property
    def S(self) -> np.ndarray:
        return 0.5 * (self.A + self.A.T)

    def exponent(self, u, dW) -> np.ndarray:
        """``A u + sum_k B_k dW_k``; ``u`` of shape (n,) and ``dW`` of shape (M, n) give (n, d, d)."""
        u = np.asarray(u, dtype=float)
        dW = np.asarray(dW, dtype=float).reshape(self.M, *u.shape)
        out = u[..., None, None] * self.A
        if self.M:
            out = out + np.einsum("k...,kij->...ij", dW, self.B)
        return out

    @cached_property
    def modes(self) -> "ModeBasis":
        if not self.commutative:
            raise NonCommutative("the spectral mode basis needs a commuting model")
        return ModeBasis.from_model(self)


def check_commutativity(model: LinearModel, comm_tol: float | None = None) -> bool:
    """True iff A, A^T, B_k, B_k^T pairwise commute up to ``comm_tol`` (Frobenius)."""
    tol = model.comm_tol if comm_tol is None else comm_tol
    mats = [model.A, model.A.T]
    for b in model.B:
        mats.extend([b, b.T])
    return _commutator_norms(mats) <= tol


@dataclass(frozen=True)
class ModeBasis:
    """Simultaneous unitary diagonalisation of a commuting (hence normal) model.

    ``lam[c]`` and ``beta[k, c]`` are the eigenvalues of ``A`` and ``B_k`` on
    mode ``c``; ``U`` holds the modes as columns. Real diagonal models keep
    ``U = I`` and real arithmetic.
    """

    U: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    real: bool

    @classmethod
    def from_model(cls, model: LinearModel) -> "ModeBasis":
        d, M = model.d, model.M
        mats = [model.A, *model.B]
        if all(np.count_nonzero(m - np.diag(np.diag(m))) == 0 for m in mats):
            beta = np.array([np.diag(b) for b in model.B]).reshape(M, d)
            return cls(np.eye(d), np.diag(model.A).copy(), beta, True)
        weights = [1.0] + [math.sqrt(2.0) ** (k + 1) * 0.37 for k in range(M)]
        scale = sum(_fro(m) for m in mats) + 1.0
        for attempt in range(4):
            Z = sum(w * m for w, m in zip(weights, mats))
            _, U = schur(Z.astype(complex), output="complex")
            diags, ok = [], True
            for m in mats:
                D = U.conj().T @ m @ U
                if _fro(D - np.diag(np.diag(D))) > 1e-9 * scale:
                    ok = False
                    break
                diags.append(np.diag(D))
            if ok:
                beta = np.array(diags[1:]).reshape(M, d)
                return cls(U, diags[0], beta, False)
            weights = [w * (1.0 + 0.31 * (attempt + 1) * (i + 1)) for i, w in enumerate(weights)]
        raise NonCommutative("could not diagonalise the model simultaneously")

    def log_amplitude(self, times: np.ndarray, raw: np.ndarray, t_ref: float = 0.0) -> np.ndarray:
        """Per-mode logarithm of the cocycle from a reference point: shape (d, n)."""
        out = np.outer(self.lam, np.asarray(times) - t_ref)
        if self.beta.shape[0]:
            out = out + self.beta.T @ raw
        return out

    def to_modes(self, x: np.ndarray) -> np.ndarray:
        return x if self.real else self.U.conj().T @ x

    def from_modes(self, y: np.ndarray) -> np.ndarray:
        return y if self.real else (self.U @ y).real


@dataclass(frozen=True, eq=False)
class Dichotomy:
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    m: int
    P_minus: np.ndarray
    P_plus: np.ndarray
    mu_minus: float | None
    mu_plus: float | None
    gap: float
    lam: float

    def rate(self, sign: str) -> float:
        """Half the truncation exponent on the given side (0 if that side is empty)."""
        mu = self.mu_minus if sign == MINUS else self.mu_plus
        return 0.0 if mu is None else 0.5 * mu

    def projector(self, sign: str) -> np.ndarray:
        return self.P_minus if sign == MINUS else self.P_plus

    @property
    def one_sided(self) -> bool:
        return self.mu_minus is None or self.mu_plus is None

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "multiplicities": [int(x) for x in self.multiplicities],
            "mu_minus": None if self.mu_minus is None else float(self.mu_minus),
            "mu_plus": None if self.mu_plus is None else float(self.mu_plus),
            "gap": float(self.gap),
            "lambda": float(self.lam),
        }


def build_dichotomy(model: LinearModel, gap_tol: float | None = None, lam="auto") -> Dichotomy:
    """Spectral split of the symmetric part of ``A`` into contracting and expanding parts."""
    S = model.S
    w, V = np.linalg.eigh(S)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if gap_tol is None:
        gap_tol = 1e-8 * _fro(S)
    bad = np.abs(w) <= gap_tol
    if np.any(bad):
        raise NotHyperbolic(f"eigenvalue(s) {w[bad].tolist()} of the symmetric part lie in the gap band")
    neg, pos = w < 0, w > 0
    if not model.commutative and neg.any() and pos.any():
        raise NonCommutativeMixedSpectrum(
            "non-commuting models are supported only with a one-sided spectrum"
        )
    # group numerically equal eigenvalues, listed in decreasing order
    order = np.argsort(-w)
    distinct, mult = [], []
    cluster_tol = 1e-10 * max(scale, 1.0)
    for x in w[order]:
        if distinct and abs(distinct[-1] - x) <= cluster_tol:
            mult[-1] += 1
        else:
            distinct.append(float(x))
            mult.append(1)
    Vn, Vp = V[:, neg], V[:, pos]
    P_minus = Vn @ Vn.T
    P_plus = Vp @ Vp.T
    mu_minus = float(np.max(w[neg])) if neg.any() else None
    mu_plus = float(np.min(w[pos])) if pos.any() else None
    gap = min(x for x in (None if mu_minus is None else -mu_minus, mu_plus) if x is not None)
    if lam == "auto" or lam is None:
        lam = gap / 8.0
    lam = float(lam)
    if not 0.0 < lam < gap / 4.0:
        raise ValueError(f"weight must lie in (0, gap/4) = (0, {gap / 4}), got {lam}")
    for P in (P_minus, P_plus):
        P.flags.writeable = False
    return Dichotomy(
        eigenvalues=np.array(distinct),
        multiplicities=np.array(mult),
        m=sum(1 for x in distinct if x > 0),
        P_minus=P_minus,
        P_plus=P_plus,
        mu_minus=mu_minus,
        mu_plus=mu_plus,
        gap=float(gap),
        lam=lam,
    )


def _index_pair(path: BrownianPath, u: float, s: float):
    return path.grid.index_of(s), path.grid.index_of(s + u)


def phi(model: LinearModel, path: BrownianPath, u: float, s: float) -> np.ndarray:
    """Explicit cocycle over lag ``u`` (negative lags allowed) from the path shifted by ``s``."""
    if not model.commutative:
        raise NonCommutative("the explicit cocycle requires commuting A, A^T, B_k, B_k^T")
    i, j = _index_pair(path, u, s)
    dW = path.raw[: model.M, j] - path.raw[: model.M, i]
    u_exact = (j - i) * path.grid.dt
    return expm(model.exponent(np.array(u_exact), dW))


def phi_many(model: LinearModel, path: BrownianPath, i_start, i_end) -> np.ndarray:
    """Batched explicit cocycle between grid indices: shape (n, d, d)."""
    if not model.commutative:
        raise NonCommutative("the explicit cocycle requires commuting A, A^T, B_k, B_k^T")
    i_start = np.atleast_1d(i_start)
    i_end = np.atleast_1d(i_end)
    dW = path.raw[: model.M, i_end] - path.raw[: model.M, i_start]
    return expm(model.exponent((i_end - i_start) * path.grid.dt, dW))


def heun_step_matrices(model: LinearModel, dW: np.ndarray, dt: float, substeps: int = 1,
                       inverse: bool = False) -> np.ndarray:
    """One-step Heun propagators for the matrix equation (or its inverse), shape (n, d, d).

    The forward step multiplies from the left by ``I + G + G^2/2`` with
    ``G = A h + sum_k B_k dW_k``; the inverse step multiplies from the right by
    ``I - G + G^2/2``. Substeps split each increment evenly.
    """
    dW = np.asarray(dW, dtype=float).reshape(model.M, -1)
    n = dW.shape[1]
    G = model.exponent(np.full(n, dt / substeps), dW / substeps)
    if inverse:
        G = -G
    eye = np.eye(model.d)
    step = eye + G + 0.5 * (G @ G)
    if substeps > 1:
        step = np.linalg.matrix_power(step, substeps)
    return step


def phi_numeric(model: LinearModel, path: BrownianPath, u: float, s: float, substeps: int = 1) -> np.ndarray:
    """Cocycle by Heun integration of the matrix equation on the path grid.

    For ``u < 0`` the inverse equation is integrated forward from ``s+u`` to
    ``s`` and the resulting matrix is the cocycle over the negative lag.
    """
    i, j = _index_pair(path, u, s)
    lo, hi = min(i, j), max(i, j)
    dW = path.raw[: model.M, lo + 1 : hi + 1] - path.raw[: model.M, lo:hi]
    X = np.eye(model.d)
    if hi == lo:
        return X
    steps = heun_step_matrices(model, dW, path.grid.dt, substeps, inverse=u < 0)
    if u >= 0:
        for st in steps:
            X = st @ X
    else:
        for st in steps:
            X = X @ st
    return X


def _check_sign(u: float, sign: str):
    if sign not in (MINUS, PLUS):
        raise ValueError(f"sign must be '{MINUS}' or '{PLUS}'")
    if (sign == MINUS and u < 0) or (sign == PLUS and u > 0):
        raise SignMismatch(f"sign={sign} is incompatible with lag {u}")


def truncation_bound(dich: Dichotomy, u: float, s: float, N: float, sign: str) -> float:
    if math.isinf(N):
        return math.inf
    return N * math.exp(dich.rate(sign) * u + dich.lam * abs(s))


def phi_truncated(model, path, dich: Dichotomy, u: float, s: float, N: float, sign: str) -> np.ndarray:
    """Projected cocycle capped so its norm never exceeds the truncation bound."""
    _check_sign(u, sign)
    X = phi(model, path, u, s) @ dich.projector(sign)
    norm = _fro(X)
    bound = truncation_bound(dich, u, s, N, sign)
    if norm <= bound:
        return X
    return X * (bound / norm)


def _side_modes(modes: ModeBasis, sign: str) -> np.ndarray:
    re = modes.lam.real
    return np.flatnonzero(re < 0) if sign == MINUS else np.flatnonzero(re > 0)


def _mode_classes(modes: ModeBasis, idx: np.ndarray):
    """Group modes with identical real log-amplitude dynamics."""
    keys = {}
    for c in idx:
        key = (round(float(modes.lam[c].real), 12),) + tuple(
            round(float(b), 12) for b in modes.beta[:, c].real
        )
        keys.setdefault(key, []).append(c)
    return list(keys.values())


def log_temperedness_stat(model: LinearModel, path: BrownianPath, dich: Dichotomy) -> float:
    """Natural log of :func:`temperedness_stat` (finite even when the statistic overflows)."""
    if not model.commutative:
        raise NonCommutative("the temperedness statistic uses the explicit cocycle")
    modes = model.modes
    t = path.times
    amp = modes.log_amplitude(t, path.raw[: model.M]).real
    weight = dich.lam * np.abs(t)
    best = -math.inf
    for sign in (MINUS, PLUS):
        idx = _side_modes(modes, sign)
        if idx.size == 0:
            continue
        rate = dich.rate(sign)
        classes = _mode_classes(modes, idx)
        h = amp[[cls[0] for cls in classes]] - rate * t
        mult = np.array([len(cls) for cls in classes], dtype=float)
        if len(classes) == 1:
            # sup over v of h(v) on the admissible side of s, per s
            if sign == MINUS:
                ext = np.maximum.accumulate(h[0][::-1])[::-1]
            else:
                ext = np.maximum.accumulate(h[0])
            val = 0.5 * math.log(mult[0]) + float(np.max(ext - h[0] - weight))
        else:
            val = _brute_force_log_stat(h, mult, weight, sign)
        best = max(best, val)
    return best


def _brute_force_log_stat(h, mult, weight, sign, chunk=256):
    n = h.shape[1]
    best = -math.inf
    logm = np.log(mult)[:, None, None]
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        diff = h[:, None, :] - h[:, a:b, None] + logm / 2  # (classes, rows, n)
        total = 0.5 * np.logaddexp.reduce(2 * diff, axis=0)  # (rows, n)
        cols = np.arange(n)[None, :]
        rows = np.arange(a, b)[:, None]
        allowed = cols >= rows if sign == MINUS else cols <= rows
        total = np.where(allowed, total, -np.inf) - weight[a:b, None]
        best = max(best, float(total.max()))
    return best


def temperedness_stat(model: LinearModel, path: BrownianPath, dich: Dichotomy) -> float:
    """Discrete sup over all grid pairs of the path window of the normalised projected cocycle.

    For lags ``u >= 0`` the term is ``||Phi(u, theta_s) P-|| exp(-mu_minus u/2 - lam |s|)``
    and for ``u <= 0`` it is ``||Phi(u, theta_s) P+|| exp(-mu_plus u/2 - lam |s|)``,
    which are exactly the ratios that decide whether the truncation binds.
    Returns ``inf`` if the value overflows a double.
    """
    log_val = log_temperedness_stat(model, path, dich)
    return math.exp(log_val) if log_val < 709.0 else math.inf


def select_truncation_level(stat: float):
    """Smallest integer level at or above the statistic (``inf`` stays ``inf``)."""
    if math.isinf(stat):
        return math.inf
    if not math.isfinite(stat):
        raise ValueError("statistic must be finite")
    return max(1, int(math.ceil(stat)))


def malliavin_phi(model, path, dich: Dichotomy, u: float, s: float, l: int, r: float, N: float,
                  sign: str) -> np.ndarray:
    """Malliavin derivative in channel ``l`` at time ``r`` of the truncated projected cocycle."""
    _check_sign(u, sign)
    lo, hi = (s, s + u) if sign == MINUS else (s + u, s)
    tol = 1e-9 * path.grid.dt
    if not (lo - tol <= r <= hi + tol):
        return np.zeros((model.d, model.d))
    X = phi(model, path, u, s) @ dich.projector(sign)
    BX = model.B[l] @ X
    norm = _fro(X)
    bound = truncation_bound(dich, u, s, N, sign)
    if norm <= bound:
        D = BX
    else:
        c = bound / norm
        D = BX * c - (bound / norm**3) * float(np.sum(X * BX)) * X
    return D if sign == MINUS else -D


def malliavin_bound(model, dich: Dichotomy, u: float, s: float, l: int, N: float, sign: str) -> float:
    """Right-hand side of the derivative bound ``(1+d^3) ||B_l|| N exp(rate u) exp(lam |s|)``."""
    return (1 + model.d**3) * _fro(model.B[l]) * truncation_bound(dich, u, s, N, sign)


def lyapunov_samples(model: LinearModel, seeds: Sequence[int], x, T: float, dt: float,
                     method: str = "auto") -> np.ndarray:
    """Per-seed finite-time exponents ``log||Phi(T) x|| / T``."""
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise ValueError("x must be a unit vector")
    if T <= 0:
        raise ValueError("T must be positive")
    grid = TimeGrid.spanning(0.0, T, dt)
    use_exact = model.commutative if method == "auto" else method == "exact"
    out = np.empty(len(seeds))
    for n, seed in enumerate(seeds):
        path = sample_path(grid, model.M, seed)
        if use_exact:
            # log-norm in the mode basis avoids overflow of the matrix entries
            modes = model.modes
            amp = modes.log_amplitude(np.array([T]), path.raw[: model.M, -1:] - path.raw[: model.M, :1]).ravel()
            y = np.abs(modes.to_modes(x))
            keep = y > 0
            a = amp.real[keep] + np.log(y[keep])
            out[n] = 0.5 * np.logaddexp.reduce(2 * a) / T
        else:
            X = phi_numeric(model, path, T, 0.0)
            out[n] = math.log(np.linalg.norm(X @ x)) / T
    return out


def lyapunov_estimate(model: LinearModel, seeds: Sequence[int], x, T: float, dt: float,
                      method: str = "auto") -> float:
    """Ensemble mean of the finite-time exponent along the unit vector ``x``."""
    return float(np.mean(lyapunov_samples(model, seeds, x, T, dt, method)))
