"""Pathwise forward integration of the semilinear SDE with linear Stratonovich noise."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .cocycle import LinearModel, heun_step_matrices, phi_many
from .errors import NonCommutativeMixedSpectrum, NonFinite
from .models import AdditiveNoise, PeriodicField
from .paths import BrownianPath, TimeGrid

BLOWUP = 1e12


def phase_times(grid: TimeGrid, period: float | None) -> np.ndarray:
    """Grid times reduced modulo the period using integer step counts.

    When the grid is aligned to ``dt`` and the period is a whole number of
    steps, times that differ by a period map to bitwise identical phases, so
    discrete recursions driven by periodic coefficients are exactly
    shift-equivariant.
    """
    if period is None:
        return grid.times
    k0 = grid.offset_steps()
    q = period / grid.dt
    K = int(round(q))
    if k0 is None or K < 1 or abs(q - K) > 1e-9 * q:
        return grid.times
    k = k0 + np.arange(grid.n_points)
    return np.mod(k, K) * grid.dt


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (d, n) or (d, P, n): time on the last axis

    def to_csv(self) -> str:
        if self.states.ndim != 2:
            raise ValueError("CSV export needs a single trajectory")
        d = self.states.shape[0]
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([self.times, self.states.T]), fmt="%.17g", delimiter=",",
                   header="t," + ",".join(f"y{k + 1}" for k in range(d)), comments="")
        return buf.getvalue()

    @property
    def final(self) -> np.ndarray:
        return self.states[..., -1]


def _segment(path: BrownianPath, s: float, t: float):
    i, j = path.grid.index_of(s), path.grid.index_of(t)
    if j < i:
        raise ValueError("integration requires s <= t")
    return i, j


def _period_of(field, beta):
    for obj in (field, beta):
        if obj is not None:
            return obj.period
    return None


def _noise_term(beta, te, dW):
    """``sum_k beta_k(te) dW_k``; broadcasts over an ensemble axis."""
    b = beta(te)  # (M, d)
    return np.tensordot(dW[: beta.channels], b, axes=(0, 0))


def _linear_noise(model, x, dW):
    if not model.M:
        return 0.0
    return np.einsum("k,kij,j...->i...", dW[: model.M], model.B, x)


def _check(x, t, states, j):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
        raise NonFinite(f"state left the finite range at t={t}", time=t, trajectory=states[..., : j + 1])


def heun_stratonovich(model: LinearModel, field: PeriodicField | None, beta: AdditiveNoise | None,
                      path: BrownianPath, x0, s: float, t: float) -> Trajectory:
    """Predictor-corrector Stratonovich scheme on the path grid between ``s`` and ``t``.

    ``x0`` may carry an ensemble axis, shape (d, P), to evolve many initial
    states under one shared path.
    """
    i, j = _segment(path, s, t)
    x = np.array(x0, dtype=float)
    te = phase_times(path.grid, _period_of(field, beta))
    dt = path.grid.dt
    A = model.A
    states = np.empty(x.shape + (j - i + 1,))
    states[..., 0] = x

    def drift(k, y):
        out = np.tensordot(A, y, axes=(1, 0))
        if field is not None:
            out = out + field.eval(te[k], y)
        return out

    for n, k in enumerate(range(i, j)):
        dW = path.raw[:, k + 1] - path.raw[:, k]
        add = 0.0 if beta is None else _reshape_like(_noise_term(beta, te[k], dW), x)
        a0 = drift(k, x)
        pred = x + a0 * dt + _linear_noise(model, x, dW) + add
        x = x + 0.5 * (a0 + drift(k + 1, pred)) * dt + 0.5 * _linear_noise(model, x + pred, dW) + add
        states[..., n + 1] = x
        _check(x, path.grid.times[k + 1], states, n + 1)
    return Trajectory(path.grid.times[i : j + 1].copy(), states)


def _reshape_like(v, x):
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim))


def euler_maruyama_ito(model: LinearModel, field: PeriodicField | None, beta: AdditiveNoise | None,
                       path: BrownianPath, x0, s: float, t: float) -> Trajectory:
    """Ito Euler scheme with the drift correction ``+ 1/2 sum_k B_k^2 x`` for the linear noise."""
    i, j = _segment(path, s, t)
    x = np.array(x0, dtype=float)
    te = phase_times(path.grid, _period_of(field, beta))
    dt = path.grid.dt
    corrected = model.A + 0.5 * sum((b @ b for b in model.B), np.zeros_like(model.A))
    states = np.empty(x.shape + (j - i + 1,))
    states[..., 0] = x
    for n, k in enumerate(range(i, j)):
        dW = path.raw[:, k + 1] - path.raw[:, k]
        a = np.tensordot(corrected, x, axes=(1, 0))
        if field is not None:
            a = a + field.eval(te[k], x)
        add = 0.0 if beta is None else _reshape_like(_noise_term(beta, te[k], dW), x)
        x = x + a * dt + _linear_noise(model, x, dW) + add
        states[..., n + 1] = x
        _check(x, path.grid.times[k + 1], states, n + 1)
    return Trajectory(path.grid.times[i : j + 1].copy(), states)


def one_step_cocycles(model: LinearModel, path: BrownianPath, i: int, j: int, substeps: int = 1) -> np.ndarray:
    """Cocycle over each grid step in ``[i, j]``: explicit when commuting, Heun otherwise."""
    if model.commutative:
        idx = np.arange(i, j)
        return phi_many(model, path, idx, idx + 1)
    S = model.S
    w = np.linalg.eigvalsh(S)
    if (w < 0).any() and (w > 0).any():
        raise NonCommutativeMixedSpectrum("non-commuting models need a one-sided spectrum")
    dW = path.raw[: model.M, i + 1 : j + 1] - path.raw[: model.M, i:j]
    return heun_step_matrices(model, dW, path.grid.dt, substeps)


def semiflow(model: LinearModel, field: PeriodicField | None, path: BrownianPath, x, s: float, t: float,
             substeps: int = 1, beta: AdditiveNoise | None = None, corrector_iters: int = 3,
             return_trajectory: bool = False, noise_rule: str = "stratonovich"):
    """Variation-of-constants propagation of ``x`` from ``s`` to ``t``.

    Each step applies the one-step cocycle to the state and adds the
    trapezoid rule for the drift; the implicit end value is resolved by a
    few fixed-point sweeps. Additive noise enters with the average of the
    one-step cocycle and ``exp(A dt)`` (Stratonovich midpoint), or with
    ``exp(A dt)`` alone when ``noise_rule="skorohod"``.
    """
    i, j = _segment(path, s, t)
    x = np.array(x, dtype=float)
    te = phase_times(path.grid, _period_of(field, beta))
    dt = path.grid.dt
    steps = one_step_cocycles(model, path, i, j, substeps) if j > i else np.empty((0, model.d, model.d))
    EA = expm(model.A * dt)
    states = np.empty(x.shape + (j - i + 1,)) if return_trajectory else None
    if return_trajectory:
        states[..., 0] = x
    for n, k in enumerate(range(i, j)):
        P = steps[n]
        base = np.tensordot(P, x, axes=(1, 0))
        if beta is not None:
            dW = path.raw[:, k + 1] - path.raw[:, k]
            weight = EA if noise_rule == "skorohod" else 0.5 * (EA + P)
            base = base + _reshape_like(weight @ _noise_term(beta, te[k], dW), x)
        if field is None:
            x = base
        else:
            Fk = field.eval(te[k], x)
            base = base + 0.5 * dt * np.tensordot(P, Fk, axes=(1, 0))
            nxt = base + 0.5 * dt * np.tensordot(P, Fk, axes=(1, 0))
            sweeps = 1 if field.state_independent else corrector_iters
            for _ in range(sweeps):
                nxt = base + 0.5 * dt * field.eval(te[k + 1], nxt)
            x = nxt
        if return_trajectory:
            states[..., n + 1] = x
        if not np.all(np.isfinite(x)):  # exact cocycle steps: large magnitudes are genuine
            raise NonFinite(f"state left the finite range at t={path.grid.times[k + 1]}",
                            time=path.grid.times[k + 1])
    if return_trajectory:
        return Trajectory(path.grid.times[i : j + 1].copy(), states)
    return x
