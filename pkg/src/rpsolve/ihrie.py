"""Fixed-point solution of the coupled forward-backward infinite-horizon integral equation.

The unknown ``Y`` lives on an extended window ``[-T-H, T+H]`` of the path
grid. For each grid time ``t`` the map ``M`` integrates the drift against the
contracting part of the cocycle over ``[t-H, t]`` and against the expanding
part over ``[t, t+H]`` (horizons are clipped at the window edge). Only the
core window ``[-T, T]`` is reported.

Three interchangeable evaluation routes exist:

* ``fast``: commuting models, in the common eigenbasis, where each mode's
  cocycle is a scalar exponential and the windowed integrals are linear-time
  sliding sums;
* ``matrix``: non-commuting one-sided models, with Heun one-step propagators;
* ``direct``: an independent per-point evaluation with explicitly truncated
  kernels, used whenever the truncation level actually binds.
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from . import _kernels as K
from .cocycle import (MINUS, PLUS, Dichotomy, LinearModel, build_dichotomy, heun_step_matrices, phi_many,
                      select_truncation_level, temperedness_stat)
from .errors import ConfigError, MaxIterExceeded, NotDissipative, OffGrid, WindowExceeded
from .integrate import heun_stratonovich, phase_times, semiflow
from .models import AdditiveNoise, PeriodicField
from .paths import BrownianPath, TimeGrid, sample_path

NOISE_RULES = ("stratonovich", "skorohod")


def aligned_dt(period: float, dt: float, multiple: int = 4) -> float:
    """Largest step not exceeding ``dt`` that divides ``period`` into a multiple of ``multiple`` steps."""
    n = math.ceil(period / dt / multiple - 1e-9) * multiple
    return period / n


@dataclass
class SolverConfig:
    T: float = 2.0 * math.pi
    H: Optional[float] = None
    dt: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 200
    damping: Optional[float] = None
    lam: Optional[float] = None
    N: object = "auto"
    quadrature: str = "trapezoid"
    anderson: int = 0
    method: str = "auto"
    substeps: int = 1
    noise_rule: str = "stratonovich"

    def __post_init__(self):
        if self.quadrature != "trapezoid":
            raise ConfigError("only trapezoid quadrature is available")
        if self.noise_rule not in NOISE_RULES:
            raise ConfigError(f"noise_rule must be one of {NOISE_RULES}")
        if self.method not in ("auto", "fast", "direct", "matrix"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.damping is not None and not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")
        if self.T < 0 or self.dt <= 0 or self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("T >= 0, dt > 0, tol > 0 and max_iter >= 1 are required")

    def horizon(self, dich: Dichotomy) -> float:
        if self.H is not None:
            return float(self.H)
        return 8.0 / dich.gap * math.log(10.0 / self.tol)

    def to_json(self) -> dict:
        out = asdict(self)
        if isinstance(self.N, float) and math.isinf(self.N):
            out["N"] = None
        return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Grid values of one realisation; ``values`` has shape (d, n_points)."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    def restrict(self, a: float, b: float) -> "GridFunction":
        i, j = self.grid.index_of(a), self.grid.index_of(b)
        return GridFunction(TimeGrid(self.grid.times[i], self.grid.dt, max(j - i, 1)), self.values[:, i : j + 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([self.times, self.values.T]), fmt="%.17g", delimiter=",",
                   header="t," + ",".join(f"y{k + 1}" for k in range(self.d)), comments="")
        return buf.getvalue()


@dataclass
class SolveReport:
    iterations: int
    residuals: list
    final_residual: float
    N: float
    edge_error: float
    H: float
    dt: float
    converged: bool
    route: str
    damping: float
    stat: Optional[float] = None
    wall_time: float = 0.0
    extended: Optional[GridFunction] = field(default=None, repr=False)

    def to_json(self) -> dict:
        """Deterministic JSON payload (wall time excluded so reruns are byte-identical)."""

        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)

        return {
            "iterations": self.iterations,
            "residuals": [num(r) for r in self.residuals],
            "final_residual": num(self.final_residual),
            "N": num(self.N),
            "edge_error": num(self.edge_error),
            "H": self.H,
            "dt": self.dt,
            "converged": self.converged,
            "route": self.route,
            "damping": self.damping,
            "stat": num(self.stat),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, allow_nan=False)


def weighted_sup_norm(Y, lam: float) -> float:
    """``max_t exp(-2 lam |t|) |Y(t)|`` over the grid; ``Y`` is a GridFunction or ``(times, values)``."""
    times, values = (Y.times, Y.values) if isinstance(Y, GridFunction) else Y
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    norms = np.linalg.norm(values.reshape(values.shape[0], -1), axis=0) if values.ndim > 1 else np.abs(values)
    return float(np.max(np.exp(-2.0 * lam * np.abs(np.asarray(times))) * norms))


# ------------------------------------------------------------------ operator


def noise_channels(model: LinearModel, beta: AdditiveNoise | None = None) -> int:
    """Channels a path must carry; linear and additive noise share channel indices."""
    M = model.M
    if beta is not None and beta.channels:
        if M and beta.channels != M:
            raise ConfigError(f"additive noise has {beta.channels} channels but the model has {M}")
        M = max(M, beta.channels)
    return M


class IntegralOperator:
    """The map ``M`` restricted to one extended window of one path."""

    def __init__(self, model: LinearModel, field_: PeriodicField | None, beta: AdditiveNoise | None,
                 path: BrownianPath, dich: Dichotomy, window: TimeGrid, horizon_steps: int, N,
                 method: str = "auto", substeps: int = 1, stat: float | None = None,
                 noise_rule: str = "stratonovich"):
        if path.grid.dt != window.dt and abs(path.grid.dt - window.dt) > 1e-12 * window.dt:
            raise ConfigError("window and path must share the step size")
        try:
            self.path = path.window(window.t_start, window.t_end)
        except (WindowExceeded, OffGrid) as exc:
            raise WindowExceeded(str(exc)) from exc
        need = noise_channels(model, beta)
        if path.channels < need:
            raise ConfigError(f"path has {path.channels} channels, {need} needed")
        for obj in (field_, beta):
            if obj is not None and obj.dim != model.d:
                raise ConfigError(f"dimension mismatch: model d={model.d}, component dim={obj.dim}")
        self.model, self.field, self.beta, self.dich = model, field_, beta, dich
        self.grid = self.path.grid
        self.n = self.grid.n_points
        self.w = int(horizon_steps)
        self.dt = self.grid.dt
        period = field_.period if field_ is not None else (beta.period if beta is not None else None)
        self.te = phase_times(self.grid, period)
        self.N = N
        self.stat = stat
        self.substeps = substeps
        if noise_rule not in NOISE_RULES:
            raise ConfigError(f"noise_rule must be one of {NOISE_RULES}")
        self.noise_rule = noise_rule
        self.route = self._choose_route(method)
        self._sides = [s for s in (MINUS, PLUS) if np.any(dich.projector(s))]
        self._noise_cache = None
        self._drift_cache = None
        if self.route == "fast":
            modes = model.modes
            self.modes = modes
            self.ell = modes.log_amplitude(self.grid.times, self.path.raw[: model.M])
            re = modes.lam.real
            self.minus_idx = np.flatnonzero(re < 0)
            self.plus_idx = np.flatnonzero(re > 0)
        elif self.route == "matrix":
            dW = np.diff(self.path.raw[: model.M], axis=1)
            self.steps = heun_step_matrices(model, dW, self.dt, substeps)
            self.inv_steps = heun_step_matrices(model, dW, self.dt, substeps, inverse=True)

    # edge flags: horizons clipped by the window
    @property
    def edge_mask(self) -> np.ndarray:
        idx = np.arange(self.n)
        mask = np.zeros(self.n, dtype=bool)
        if MINUS in self._sides:
            mask |= idx < self.w
        if PLUS in self._sides:
            mask |= idx > self.n - 1 - self.w
        return mask

    def _choose_route(self, method):
        commuting = self.model.commutative
        binding = self.N is not None and not math.isinf(self.N) and (self.stat is None or self.N < self.stat)
        if method == "direct":
            return "direct"
        if method == "fast":
            if not commuting:
                raise ConfigError("the fast route needs a commuting model")
            return "fast"
        if method == "matrix":
            if commuting and binding:
                raise ConfigError("the matrix route cannot apply a binding truncation")
            return "matrix"
        if binding:
            return "direct"
        return "fast" if commuting else "matrix"

    # -------------------------------------------------------------- drift part

    def drift_integral(self, Y: np.ndarray) -> np.ndarray:
        if self.field is None:
            return np.zeros((self.model.d, self.n))
        if self.field.state_independent and self._drift_cache is not None:
            return self._drift_cache
        F = np.asarray(self.field.eval(self.te, Y), dtype=float)
        if self.route == "fast":
            out = self._fast_drift(F)
        elif self.route == "matrix":
            out = self._matrix_drift(F)
        else:
            out = self._direct(F)
        if self.field.state_independent:
            self._drift_cache = out
        return out

    def _fast_drift(self, F):
        f = self.modes.to_modes(F)
        out = np.zeros_like(f)
        w, dt = self.w, self.dt
        if self.minus_idx.size:
            s = self.minus_idx
            out[s] = K.window_trapezoid(self.ell[s], f[s], w, dt)
        if self.plus_idx.size:
            s = self.plus_idx
            out[s] = -K.reverse(K.window_trapezoid(K.reverse(self.ell[s]), K.reverse(f[s]), w, dt))
        return self.modes.from_modes(out)

    def _matrix_drift(self, F):
        out = np.zeros_like(F)
        if MINUS in self._sides:
            Fm = self.dich.P_minus @ F
            out += K.window_trapezoid_matrix(self.steps, Fm.T, self.w, self.dt).T
        if PLUS in self._sides:
            Fp = self.dich.P_plus @ F
            rsteps = self.inv_steps[::-1]
            out -= K.reverse(K.window_trapezoid_matrix(rsteps, K.reverse(Fp).T, self.w, self.dt).T)
        return out

    # ---------------------------------------------------------- stochastic part
    #
    # Term j of a stochastic sum multiplies beta(s_j) dW_j by a kernel whose
    # drift part runs from s_j to t and whose Brownian argument either excludes
    # the increment dW_j ("exclusive") or contains it ("inclusive"). The
    # exclusive kernel alone is the Skorohod-type rule; the average of both is
    # the Stratonovich midpoint rule.

    def noise_integral(self) -> np.ndarray:
        if self.beta is None:
            return np.zeros((self.model.d, self.n))
        if self._noise_cache is None:
            b = np.asarray(self.beta(self.te), dtype=float)  # (M, d, n)
            dW = np.diff(self.path.raw[: self.beta.channels], axis=1)  # (M, n-1)
            src = np.einsum("kdn,kn->dn", b[:, :, :-1], dW)  # sum_k beta_k(s_j) dW_j, shape (d, n-1)
            if self.route == "fast":
                excl, incl = self._fast_noise(src)
            elif self.route == "matrix":
                excl, incl = self._matrix_noise(src)
            else:
                excl, incl = self._direct_noise(src)
            self._noise_cache = excl if self.noise_rule == "skorohod" else 0.5 * (excl + incl)
        return self._noise_cache

    def _fast_noise(self, src):
        g = self.modes.to_modes(src)
        d = g.shape[0]
        dtype = np.result_type(g, self.modes.lam)
        excl = np.zeros((d, self.n), dtype=dtype)
        incl = np.zeros((d, self.n), dtype=dtype)
        w = self.w
        step = np.exp(self.modes.lam * self.dt)[:, None]
        at_start = np.zeros((d, self.n), dtype=dtype)  # g_j stored at index j
        at_start[:, :-1] = g
        at_end = np.zeros((d, self.n), dtype=dtype)  # exp(lam dt) g_j stored at index j+1
        at_end[:, 1:] = step * g
        if self.minus_idx.size:
            s = self.minus_idx
            excl[s] = K.sliding_sum(self.ell[s], at_end[s], w - 1)
            incl[s] = K.sliding_sum(self.ell[s], at_start[s], w) - at_start[s]
        if self.plus_idx.size:
            s = self.plus_idx
            L = K.reverse(self.ell[s])
            excl[s] = -K.reverse(K.sliding_sum(L, K.reverse(at_start[s]), w - 1))
            incl[s] = -(K.reverse(K.sliding_sum(L, K.reverse(at_end[s]), w)) - at_end[s])
        return self.modes.from_modes(excl), self.modes.from_modes(incl)

    def _matrix_noise(self, src):
        d, n, w = self.model.d, self.n, self.w
        EA = expm(self.model.A * self.dt)
        excl = np.zeros((d, n))
        incl = np.zeros((d, n))

        def placed(P):
            at_start = np.zeros((n, d))
            at_start[:-1] = (P @ src).T
            at_end = np.zeros((n, d))
            at_end[1:] = (EA @ P @ src).T
            return at_start, at_end

        if MINUS in self._sides:
            at_start, at_end = placed(self.dich.P_minus)
            excl += K.sliding_sum_matrix(self.steps, at_end, w - 1)[0].T
            incl += (K.sliding_sum_matrix(self.steps, at_start, w)[0] - at_start).T
        if PLUS in self._sides:
            at_start, at_end = placed(self.dich.P_plus)
            rsteps = self.inv_steps[::-1]
            excl -= K.reverse(K.sliding_sum_matrix(rsteps, at_start[::-1], w - 1)[0].T)
            incl -= K.reverse(K.sliding_sum_matrix(rsteps, at_end[::-1], w)[0].T) - at_end.T
        return excl, incl

    # -------------------------------------------------------------- direct route

    def _kernel_stack(self, i, js):
        """Cocycle matrices ``Phi(t_i - t_j, theta_{t_j})`` for the indices ``js``."""
        model = self.model
        if model.commutative:
            return phi_many(model, self.path, js, np.full(js.shape, i))
        if js.size == 0:
            return np.zeros((0, model.d, model.d))
        out = np.empty((js.size, model.d, model.d))
        if js[-1] <= i:  # forward kernels, js ascending to i
            X = np.eye(model.d)
            for n in range(js.size - 1, -1, -1):
                j = js[n]
                if j < i:
                    X = X @ self._heun(j, inverse=False)
                out[n] = X
        else:  # backward kernels, js ascending from i
            X = np.eye(model.d)
            for n, j in enumerate(js):
                if j > i:
                    X = X @ self._heun(j - 1, inverse=True)
                out[n] = X
        return out

    def _heun(self, j, inverse):
        dW = self.path.raw[: self.model.M, j + 1] - self.path.raw[: self.model.M, j]
        return heun_step_matrices(self.model, dW[:, None], self.dt, self.substeps, inverse=inverse)[0]

    def _truncate(self, mats, i, js, sign):
        """Project and cap each kernel at ``N exp(rate (t_i - s_j) + lam |s_j|)``."""
        P = self.dich.projector(sign)
        X = mats @ P
        if self.N is None or math.isinf(self.N):
            return X
        t = self.grid.times
        u = t[i] - t[js]
        bound = self.N * np.exp(self.dich.rate(sign) * u + self.dich.lam * np.abs(t[js]))
        norms = np.linalg.norm(X, axis=(1, 2))
        scale = np.where(norms > bound, bound / np.where(norms > 0, norms, 1.0), 1.0)
        return X * scale[:, None, None]

    def _direct(self, F, stochastic=False):
        d, n, w, dt = self.model.d, self.n, self.w, self.dt
        out = np.zeros((d, n))
        for i in range(n):
            for sign, lo, hi, sgn in ((MINUS, max(0, i - w), i, 1.0), (PLUS, i, min(n - 1, i + w), -1.0)):
                if sign not in self._sides or hi <= lo:
                    continue
                js = np.arange(lo, hi + 1)
                X = self._truncate(self._kernel_stack(i, js), i, js, sign)
                wts = np.full(js.size, dt)
                wts[[0, -1]] *= 0.5
                out[:, i] += sgn * np.einsum("jab,bj,j->a", X, F[:, js], wts)
        return out

    def _direct_noise(self, src):
        d, n, w = self.model.d, self.n, self.w
        EA = expm(self.model.A * self.dt)
        excl = np.zeros((d, n))
        incl = np.zeros((d, n))
        for i in range(n):
            if MINUS in self._sides and i > 0:
                js = np.arange(max(0, i - w), i)
                e = self._truncate(self._kernel_stack(i, js + 1) @ EA, i, js, MINUS)
                c = self._truncate(self._kernel_stack(i, js), i, js, MINUS)
                excl[:, i] += np.einsum("jab,bj->a", e, src[:, js])
                incl[:, i] += np.einsum("jab,bj->a", c, src[:, js])
            if PLUS in self._sides and i < n - 1:
                js = np.arange(i, min(n - 1, i + w))
                e = self._truncate(self._kernel_stack(i, js), i, js, PLUS)
                c = self._truncate(self._kernel_stack(i, js + 1) @ EA, i, js, PLUS)
                excl[:, i] -= np.einsum("jab,bj->a", e, src[:, js])
                incl[:, i] -= np.einsum("jab,bj->a", c, src[:, js])
        return excl, incl

    # ------------------------------------------------------------------ total

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return self.drift_integral(Y) + self.noise_integral()


# ------------------------------------------------------------------ public API


def _window_steps(cfg: SolverConfig, dich: Dichotomy, dt: float):
    H = cfg.horizon(dich)
    h_steps = max(1, math.ceil(H / dt - 1e-9))
    t_steps = int(round(cfg.T / dt))
    if abs(cfg.T / dt - t_steps) > 1e-6:
        t_steps = math.ceil(cfg.T / dt)
    return t_steps, h_steps


def _check_period(period, dt):
    if period is None:
        return
    q = period / dt
    if abs(q - round(q)) > 1e-6 * max(1.0, q):
        raise ConfigError(f"period/dt = {q} is not an integer; use aligned_dt({period}, {dt})")


def required_window(cfg: SolverConfig, dich: Dichotomy, period: float | None = None) -> tuple:
    """Path window ``[-T-H, T+H+period]`` covering the extended window and its period shift."""
    t_steps, h_steps = _window_steps(cfg, dich, cfg.dt)
    lo = -(t_steps + h_steps) * cfg.dt
    hi = (t_steps + h_steps) * cfg.dt + (period or 0.0)
    return lo, hi


def solver_path(cfg: SolverConfig, model: LinearModel, dich: Dichotomy, seed: int, period: float | None = None,
                pad: float = 0.0, channels: int | None = None, beta: AdditiveNoise | None = None) -> BrownianPath:
    """Sample a path covering :func:`required_window` plus ``pad`` on both sides."""
    lo, hi = required_window(cfg, dich, period)
    k_lo = math.floor((lo - pad) / cfg.dt + 1e-9)
    k_hi = math.ceil((hi + pad) / cfg.dt - 1e-9)
    grid = TimeGrid(k_lo * cfg.dt, cfg.dt, k_hi - k_lo)
    return sample_path(grid, noise_channels(model, beta) if channels is None else channels, seed)


def _resolve_N(cfg, model, path, dich):
    stat = None
    if model.commutative:
        stat = temperedness_stat(model, path, dich)
    if cfg.N == "auto" or cfg.N is None:
        N = select_truncation_level(stat) if stat is not None else math.inf
    else:
        N = float(cfg.N)
        if N <= 0:
            raise ConfigError("truncation level must be positive")
    return N, stat


def default_damping(field_: PeriodicField | None, dich: Dichotomy) -> float:
    if field_ is None or field_.lip_bound is None:
        return 0.5
    if field_.lip_bound == 0:
        return 1.0
    return min(1.0, dich.gap / (2.0 * field_.lip_bound))


def edge_error_bound(sup_F: float, N: float, dich: Dichotomy, H: float) -> float:
    """Tail estimate ``||F|| N exp(rate H) 2 / |mu + 2 lam|`` taken over the occupied sides."""
    if math.isinf(N):
        return math.inf
    worst = 0.0
    if dich.mu_minus is not None:
        worst = max(worst, math.exp(0.5 * dich.mu_minus * H) * 2.0 / abs(dich.mu_minus + 2.0 * dich.lam))
    if dich.mu_plus is not None:
        worst = max(worst, math.exp(-0.5 * dich.mu_plus * H) * 2.0 / abs(dich.mu_plus - 2.0 * dich.lam))
    return sup_F * N * worst


def build_operator(model, field_, beta, path, cfg: SolverConfig, dich: Dichotomy | None = None):
    """Operator, dichotomy and window bookkeeping shared by the solver and by :func:`apply_M`."""
    if dich is None:
        dich = build_dichotomy(model, lam="auto" if cfg.lam is None else cfg.lam)
    dt = path.grid.dt
    if abs(dt - cfg.dt) > 1e-9 * cfg.dt:
        raise ConfigError(f"path step {dt} differs from the configured step {cfg.dt}")
    for obj in (field_, beta):
        _check_period(None if obj is None else obj.period, dt)
    t_steps, h_steps = _window_steps(cfg, dich, dt)
    window = TimeGrid(-(t_steps + h_steps) * dt, dt, 2 * (t_steps + h_steps))
    path.require(window.t_start, window.t_end)
    N, stat = _resolve_N(cfg, model, path, dich)
    op = IntegralOperator(model, field_, beta, path, dich, window, h_steps, N, cfg.method, cfg.substeps, stat,
                          cfg.noise_rule)
    return op, dich, t_steps, h_steps


def apply_M(Y: GridFunction, model, field_, path, dich: Dichotomy, cfg: SolverConfig, N=None) -> GridFunction:
    """One application of the drift map on the window of ``Y`` with horizon ``cfg.H``."""
    return apply_M_additive(Y, model, field_, None, path, dich, cfg, N)


def apply_M_additive(Y: GridFunction, model, field_, beta, path, dich: Dichotomy, cfg: SolverConfig,
                     N=None) -> GridFunction:
    """Drift map plus the windowed Wiener sums of the additive noise."""
    if Y.d != model.d:
        raise ConfigError(f"Y has dimension {Y.d}, model has {model.d}")
    h_steps = max(1, math.ceil(cfg.horizon(dich) / Y.grid.dt - 1e-9))
    if N is None:
        N, stat = _resolve_N(cfg, model, path, dich)
    else:
        stat = temperedness_stat(model, path, dich) if model.commutative else None
    op = IntegralOperator(model, field_, beta, path, dich, Y.grid, h_steps, N, cfg.method, cfg.substeps, stat,
                          cfg.noise_rule)
    return GridFunction(Y.grid, op(Y.values))


def _anderson_step(hist_f, hist_g, f, g):
    """Type-II Anderson mixing from stored differences."""
    if not hist_f:
        return g
    dF = np.stack([x.ravel() for x in hist_f], axis=1)
    dG = np.stack([x.ravel() for x in hist_g], axis=1)
    gamma, *_ = np.linalg.lstsq(dF, f.ravel(), rcond=None)
    return g - (dG @ gamma).reshape(g.shape)


def solve_fixed_point(model: LinearModel, field_: PeriodicField | None, beta: AdditiveNoise | None,
                      path: BrownianPath, cfg: SolverConfig, dich: Dichotomy | None = None):
    """Damped Picard iteration from zero; returns the core-window solution and a report.

    Raises :class:`MaxIterExceeded` (carrying the residual history and last
    iterate) when the weighted residual does not fall below ``cfg.tol``.
    """
    start = time.perf_counter()
    op, dich, t_steps, h_steps = build_operator(model, field_, beta, path, cfg, dich)
    alpha = cfg.damping if cfg.damping is not None else default_damping(field_, dich)
    lam = dich.lam
    times = op.grid.times
    Y = np.zeros((model.d, op.n))
    residuals = []
    converged = False
    hist_f, hist_g = [], []
    prev_f = prev_g = None
    for _ in range(cfg.max_iter):
        MY = op(Y)
        G = (1.0 - alpha) * Y + alpha * MY
        if cfg.anderson > 0:
            f = G - Y
            if prev_f is not None:
                hist_f.append(f - prev_f)
                hist_g.append(G - prev_g)
                del hist_f[: -cfg.anderson], hist_g[: -cfg.anderson]
            prev_f, prev_g = f, G
            Ynew = _anderson_step(hist_f, hist_g, f, G)
        else:
            Ynew = G
        res = weighted_sup_norm((times, Ynew - Y), lam)
        residuals.append(res)
        Y = Ynew
        if not math.isfinite(res):
            break
        if res <= cfg.tol:
            converged = True
            break
    H = h_steps * op.dt
    if field_ is not None and np.all(np.isfinite(Y)):
        sup_F = float(np.max(np.linalg.norm(np.asarray(field_.eval(op.te, Y)).reshape(model.d, -1), axis=0)))
    else:
        sup_F = 0.0 if field_ is None else math.inf
    report = SolveReport(
        iterations=len(residuals), residuals=residuals, final_residual=residuals[-1], N=op.N,
        edge_error=edge_error_bound(sup_F, op.N, dich, H), H=H, dt=op.dt, converged=converged,
        route=op.route, damping=alpha, stat=op.stat, wall_time=time.perf_counter() - start,
        extended=GridFunction(op.grid, Y),
    )
    if not converged:
        raise MaxIterExceeded(
            f"residual {residuals[-1]:.3e} above tol {cfg.tol:.1e} after {len(residuals)} iterations",
            residuals=residuals, iterate=report.extended, report=report,
        )
    core = report.extended.restrict(-t_steps * op.dt, t_steps * op.dt)
    return core, report


def pullback_solve(model: LinearModel, field_: PeriodicField | None, beta: AdditiveNoise | None,
                   path: BrownianPath, t: float, K: int, cfg: SolverConfig | None = None,
                   integrator: str = "heun"):
    """Forward integration from zero at ``t - K period`` and at ``t - (K-1) period``.

    Returns ``(x_K, |x_K - x_{K-1}|)``. Only meaningful when every direction contracts.
    """
    dich = build_dichotomy(model)
    if dich.mu_plus is not None:
        raise NotDissipative("pull-back needs a fully contracting linear part; the spectrum has expanding directions")
    if K < 1:
        raise ConfigError("K must be at least 1")
    period = next((o.period for o in (field_, beta) if o is not None), 2.0 * math.pi)
    dt = path.grid.dt
    steps = path.grid.steps_in(period)
    x0 = np.zeros(model.d)

    def run(k):
        s = t - k * steps * dt
        if integrator == "semiflow":
            return semiflow(model, field_, path, x0, s, t, beta=beta)
        return heun_stratonovich(model, field_, beta, path, x0, s, t).final

    xK = run(K)
    xK1 = run(K - 1) if K > 1 else x0
    return xK, float(np.linalg.norm(xK - xK1))


# ------------------------------------------------------------------ closed forms


def _trapezoid_window(path, t, H):
    i = path.grid.index_of(t)
    lo = path.grid.index_of(t - H)
    return lo, i


def ou_closed_form(path: BrownianPath, c: float, t: float, H: float, amplitude: float = 10.0) -> float:
    """``c/2 (cos t + sin t) + amplitude * sum_j exp(-(t - s_j)) sin(s_j) dW_j`` over ``[t-H, t]``."""
    lo, i = _trapezoid_window(path, t, H)
    s = path.times[lo:i]
    dW = np.diff(path.raw[0, lo : i + 1])
    tt = path.times[i]
    return 0.5 * c * (math.cos(tt) + math.sin(tt)) + amplitude * float(np.sum(np.exp(-(tt - s)) * np.sin(s) * dW))


def gbm_forced_closed_form(path: BrownianPath, t: float, H: float, noise: float = 10.0, rate: float = -1.0) -> float:
    """Trapezoid rule for ``int_{t-H}^t exp(rate (t-s) + noise (W_t - W_s)) cos(s) ds``."""
    lo, i = _trapezoid_window(path, t, H)
    s = path.times[lo : i + 1]
    W = path.raw[0, lo : i + 1]
    tt = path.times[i]
    f = np.exp(rate * (tt - s) + noise * (W[-1] - W)) * np.cos(s)
    dt = path.grid.dt
    return float(dt * (np.sum(f) - 0.5 * f[0] - 0.5 * f[-1]))
