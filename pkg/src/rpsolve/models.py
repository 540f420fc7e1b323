"""Periodic drift fields, additive-noise coefficients, periodic orbits and the
reduction of an autonomous system about a periodic orbit.

Array conventions: a state is shape ``(d,)`` or, for a batch of ``n`` times,
``(d, n)`` paired with ``t`` of shape ``(n,)``. Noise coefficients evaluate
to ``(M, d)`` for a scalar time and ``(M, d, n)`` for an array of times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BadRadii, OrbitResidualTooLarge, UnknownFamily

TWO_PI = 2.0 * math.pi
LIP_BOX = 3.0  # half-width of the box used to estimate missing Lipschitz bounds


def finite_difference_jacobian(func, t, x) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + ||x||)``."""
    x = np.asarray(x, dtype=float)
    h = 1e-6 * (1.0 + np.linalg.norm(x))
    d = x.size
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (np.asarray(func(t, x + e)) - np.asarray(func(t, x - e))) / (2 * h)
    return J


@dataclass(frozen=True, eq=False)
class PeriodicField:
    period: float
    eval: Callable
    dim: int
    jac: Optional[Callable] = None
    lip_bound: Optional[float] = None
    sup_bound: Optional[float] = None
    family: str = "custom"
    params: dict = field(default_factory=dict)
    state_independent: bool = False

    def __call__(self, t, x):
        return self.eval(t, x)

    def jacobian(self, t, x) -> np.ndarray:
        if self.jac is not None:
            return np.asarray(self.jac(t, x), dtype=float)
        return finite_difference_jacobian(self.eval, t, x)

    def lipschitz(self, n_samples: int = 10_000, seed: int = 0) -> float:
        """``lip_bound`` if known, else the largest sampled Jacobian norm on ``[-3, 3]^d x [0, period]``."""
        if self.lip_bound is not None:
            return float(self.lip_bound)
        rng = np.random.default_rng(seed)
        ts = rng.uniform(0, self.period, n_samples)
        xs = rng.uniform(-LIP_BOX, LIP_BOX, (n_samples, self.dim))
        return max(float(np.linalg.norm(self.jacobian(t, x), 2)) for t, x in zip(ts, xs))

    def sup(self, n_samples: int = 10_000, seed: int = 0) -> float:
        if self.sup_bound is not None:
            return float(self.sup_bound)
        rng = np.random.default_rng(seed)
        ts = rng.uniform(0, self.period, n_samples)
        xs = rng.uniform(-LIP_BOX, LIP_BOX, (self.dim, n_samples))
        return float(np.max(np.linalg.norm(self.eval(ts, xs), axis=0)))


@dataclass(frozen=True, eq=False)
class AdditiveNoise:
    period: float
    eval_k: Callable
    channels: int
    dim: int
    R1: float = 0.0
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.eval_k(t)


@dataclass(frozen=True, eq=False)
class DeterministicOrbit:
    period: float
    eval: Callable
    deriv: Callable
    dim: int

    def __call__(self, t):
        return self.eval(t)


def _as_state(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != dim:
        raise ValueError(f"state has leading dimension {x.shape[0]}, expected {dim}")
    return x


def cutoff_phi(x, r1sq: float, r2sq: float):
    """Radial cutoff: 1 inside ``||x||^2 <= r1sq``, 0 beyond ``r2sq``, quintic blend between."""
    if not (0 < r1sq < r2sq):
        raise BadRadii(f"need 0 < r1sq < r2sq, got {r1sq}, {r2sq}")
    rho = np.sum(np.asarray(x, dtype=float) ** 2, axis=0)
    return _blend(rho, r1sq, r2sq)[0]


def _blend(rho, r1sq, r2sq):
    s = np.clip((rho - r1sq) / (r2sq - r1sq), 0.0, 1.0)
    step = s**3 * (10.0 + s * (-15.0 + 6.0 * s))
    dstep = 30.0 * s**2 * (1.0 - s) ** 2 / (r2sq - r1sq)
    return 1.0 - step, -dstep


def _zero_field(params):
    dim = int(params.get("dim", 1))
    period = float(params.get("period", TWO_PI))

    def ev(t, x):
        return np.zeros_like(_as_state(x, dim))

    return PeriodicField(period, ev, dim, jac=lambda t, x: np.zeros((dim, dim)), lip_bound=0.0,
                         sup_bound=0.0, family="zero", params=dict(params), state_independent=True)


def _cosine_field(params):
    c = float(params.get("c", 1.0))
    dim = int(params.get("dim", 1))
    gain = float(params.get("gain", 0.0))

    def ev(t, x):
        x = _as_state(x, dim)
        out = c * np.cos(t) * np.ones_like(x)
        if gain:
            out = out + gain * x
        return out

    def jac(t, x):
        return gain * np.eye(dim)

    return PeriodicField(TWO_PI, ev, dim, jac=jac, lip_bound=abs(gain),
                         sup_bound=math.sqrt(dim) * abs(c) if gain == 0.0 else None, family="cosine_forcing",
                         params={"c": c, "dim": dim, "gain": gain}, state_independent=gain == 0.0)


def _limit_cycle_field(params):
    r1sq = float(params.get("r1sq", 1e6))
    r2sq = float(params.get("r2sq", 2e6))
    if not (0 < r1sq < r2sq):
        raise BadRadii(f"need 0 < r1sq < r2sq, got {r1sq}, {r2sq}")

    def ev(t, x):
        x = _as_state(x, 2)
        rho = np.sum(x**2, axis=0)
        phi, _ = _blend(rho, r1sq, r2sq)
        return x * ((2.0 - rho) * phi)

    def jac(t, x):
        x = _as_state(x, 2)
        rho = float(x @ x)
        phi, dphi = _blend(rho, r1sq, r2sq)
        g = (2.0 - rho) * phi
        dg = -phi + (2.0 - rho) * dphi
        return g * np.eye(2) + 2.0 * dg * np.outer(x, x)

    return PeriodicField(TWO_PI, ev, 2, jac=jac, family="limit_cycle",
                         params={"r1sq": r1sq, "r2sq": r2sq})


_FIELDS = {"zero": _zero_field, "cosine_forcing": _cosine_field, "limit_cycle": _limit_cycle_field}


def builtin_field(name: str, params: dict | None = None) -> PeriodicField:
    """Named drift family. ``limit_cycle`` is the nonlinear part only; its linear part lives in ``A``."""
    try:
        factory = _FIELDS[name]
    except KeyError:
        raise UnknownFamily(f"unknown field family {name!r}; known: {sorted(_FIELDS)}") from None
    return factory(dict(params or {}))


def _noise_R1(fn, period, channels, dim, n=4096):
    """Constant R1 with ||b(s1) - b(s2)||^2 <= R1 |s1 - s2| via R1 = 2 * L * sup (sampled)."""
    t = np.linspace(0.0, period, n + 1)
    vals = fn(t).reshape(channels * dim, -1)
    if not vals.size:
        return 0.0
    sup = float(np.max(np.linalg.norm(vals, axis=0)))
    lip = float(np.max(np.linalg.norm(np.diff(vals, axis=1), axis=0)) / (t[1] - t[0]))
    return 2.0 * lip * sup


def _make_noise(period, fn, channels, dim, family, params):
    return AdditiveNoise(period, fn, channels, dim, _noise_R1(fn, period, channels, dim), family, params)


def builtin_noise(name: str, params: dict | None = None) -> AdditiveNoise:
    """Named additive-noise families: ``zero``, ``sine`` and ``constant``."""
    params = dict(params or {})
    if name == "zero":
        M, dim = int(params.get("channels", 1)), int(params.get("dim", 1))

        def fn(t):
            t = np.asarray(t, dtype=float)
            return np.zeros((M, dim) + t.shape)

        return AdditiveNoise(TWO_PI, fn, M, dim, 0.0, "zero", params)
    if name == "sine":
        amp = float(params.get("amplitude", 10.0))
        dim = int(params.get("dim", 1))

        def fn(t):
            t = np.asarray(t, dtype=float)
            return amp * np.sin(t) * np.ones((1, dim) + t.shape)

        return _make_noise(TWO_PI, fn, 1, dim, "sine", {"amplitude": amp, "dim": dim})
    if name == "constant":
        gamma = np.atleast_2d(np.asarray(params.get("gamma", [[1.0]]), dtype=float))
        M, dim = gamma.shape

        def fn(t):
            t = np.asarray(t, dtype=float)
            return gamma.reshape((M, dim) + (1,) * t.ndim) * np.ones((M, dim) + t.shape)

        return AdditiveNoise(TWO_PI, fn, M, dim, 0.0, "constant", {"gamma": gamma.tolist()})
    raise UnknownFamily(f"unknown noise family {name!r}; known: ['constant', 'sine', 'zero']")


def circle_orbit(radius: float = 1.0) -> DeterministicOrbit:
    """``z(t) = radius * (cos t, sin t)``."""

    def ev(t):
        t = np.asarray(t, dtype=float)
        return radius * np.array([np.cos(t), np.sin(t)])

    def dv(t):
        t = np.asarray(t, dtype=float)
        return radius * np.array([-np.sin(t), np.cos(t)])

    return DeterministicOrbit(TWO_PI, ev, dv, 2)


def orbit_residual(A, f: PeriodicField, z: DeterministicOrbit, n: int = 1024) -> float:
    """Largest ``||z' - (A z + f(z))||`` on a uniform grid over one period."""
    t = np.linspace(0.0, z.period, n, endpoint=False)
    zt = z.eval(t)
    res = z.deriv(t) - (np.asarray(A, dtype=float) @ zt + f.eval(t, zt))
    return float(np.max(np.linalg.norm(res, axis=0)))


def reduce_about_orbit(A, f: PeriodicField, z: DeterministicOrbit, B=None, gamma=None,
                       orbit_tol: float = 1e-8):
    """Drift and additive noise of the deviation ``u = y - z(t)`` from a periodic orbit.

    ``G(t, u) = f(u + z(t)) - f(z(t))`` and ``beta_k(t) = B_k z(t) + gamma_k``.
    """
    A = np.asarray(A, dtype=float)
    d = z.dim
    B = np.zeros((0, d, d)) if B is None else np.asarray(B, dtype=float).reshape(-1, d, d)
    M = B.shape[0]
    gamma = np.zeros((M, d)) if gamma is None else np.asarray(gamma, dtype=float).reshape(-1, d)
    if gamma.shape[0] != M:
        if M == 0:
            M = gamma.shape[0]
            B = np.zeros((M, d, d))
        else:
            raise ValueError("gamma and B must have the same number of channels")
    res = orbit_residual(A, f, z)
    if res > orbit_tol:
        raise OrbitResidualTooLarge(f"orbit residual {res:.3e} exceeds {orbit_tol:.1e}")

    def G(t, u):
        u = _as_state(u, d)
        zt = z.eval(t)
        if u.ndim == 1 and zt.ndim == 2:
            u = u[:, None]
        elif u.ndim == 2 and zt.ndim == 1:
            zt = zt[:, None]
        return f.eval(t, u + zt) - f.eval(t, zt)

    def G_jac(t, u):
        return f.jacobian(t, np.asarray(u, dtype=float) + z.eval(t))

    field_G = PeriodicField(z.period, G, d, jac=G_jac, lip_bound=f.lip_bound,
                            family=f"reduced_{f.family}", params=dict(f.params))

    def beta(t):
        zt = z.eval(t)
        out = np.einsum("kij,j...->ki...", B, zt)
        t = np.asarray(t)
        return out + gamma.reshape((M, d) + (1,) * t.ndim)

    noise = _make_noise(z.period, beta, M, d, "orbit_reduced", {})
    return field_G, noise
