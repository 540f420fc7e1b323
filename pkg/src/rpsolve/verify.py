"""Executable checks of the random-periodicity contract and of the cocycle estimates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .cocycle import (MINUS, Dichotomy, LinearModel, malliavin_bound, malliavin_phi, phi_truncated,
                      temperedness_stat)
from .errors import ConfigError, NonFinite
from .ihrie import GridFunction, SolverConfig, solve_fixed_point, solver_path
from .integrate import heun_stratonovich, semiflow
from .models import AdditiveNoise, PeriodicField
from .paths import BrownianPath, TimeGrid, cameron_martin_shift, sample_path, shift


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            if isinstance(x, (np.floating, np.integer)):
                return clean(x.item())
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return clean({"name": self.name, "value": float(self.value), "tolerance": float(self.tolerance),
                      "pass": bool(self.passed), "details": self.details})


def report_json(results: Sequence[CheckResult]) -> str:
    return json.dumps({"checks": [r.to_json() for r in results], "pass": all(r.passed for r in results)},
                      indent=2, sort_keys=True, allow_nan=False)


def invariance_tolerance(dt: float, gap: float, H: float) -> float:
    return 5.0 * (dt + math.exp(-gap * H / 4.0))


# ------------------------------------------------------------ definition checks


@dataclass
class InvarianceResidual:
    abs_residual: float
    rel_residual: float
    heun_abs: Optional[float]
    heun_rel: Optional[float]
    heun_status: str


def check_semiflow_invariance(Y: GridFunction, model: LinearModel, field_: PeriodicField | None,
                              beta: AdditiveNoise | None, path: BrownianPath, s: float, t: float,
                              substeps: int = 1, noise_rule: str = "stratonovich") -> InvarianceResidual:
    """Distance between the flow of ``Y(s)`` from ``s`` to ``t`` and ``Y(t)``.

    The primary residual uses the variation-of-constants semiflow; the Heun
    scheme is reported alongside as an independent second opinion.
    """
    if t < s:
        raise ValueError("need s <= t")
    ys, yt = Y.at(s), Y.at(t)
    scale = max(1.0, float(np.linalg.norm(yt)))
    x = semiflow(model, field_, path, ys, s, t, substeps=substeps, beta=beta, noise_rule=noise_rule)
    err = float(np.linalg.norm(x - yt))
    try:
        xh = heun_stratonovich(model, field_, beta, path, ys, s, t).final
        herr, status = float(np.linalg.norm(xh - yt)), "ok"
    except NonFinite:
        herr, status = None, "blowup"
    return InvarianceResidual(err, err / scale, herr, None if herr is None else herr / scale, status)


@dataclass
class PeriodicityResidual:
    residual: float
    tolerance: float
    n_points: int


def check_random_periodicity(model: LinearModel, field_: PeriodicField | None, beta: AdditiveNoise | None,
                             path: BrownianPath, cfg: SolverConfig, period: float) -> PeriodicityResidual:
    """``sup_t |Y(t + period; path) - Y(t; shifted path)|`` over the core window.

    The tolerance is relative once the solution exceeds unit size.
    """
    Y1, rep1 = solve_fixed_point(model, field_, beta, path, cfg)
    Y2, _ = solve_fixed_point(model, field_, beta, shift(path, period), cfg)
    k = path.grid.steps_in(period)
    T_steps = (Y1.grid.n_points - 1) // 2
    if k > 2 * T_steps:
        raise ConfigError("the core window must be longer than one period")
    a = Y1.values[:, k:]
    b = Y2.values[:, : Y2.values.shape[1] - k]
    res = float(np.max(np.linalg.norm(a - b, axis=0)))
    lam = cfg.lam if cfg.lam is not None else _dich_lam(model)
    scale = max(1.0, float(np.max(np.linalg.norm(a, axis=0))))
    tol = max(1e-10, cfg.tol * math.exp(2.0 * lam * (Y1.grid.t_end + period))) * scale
    return PeriodicityResidual(res, tol, a.shape[1])


def _dich_lam(model):
    from .cocycle import build_dichotomy

    return build_dichotomy(model).lam


# -------------------------------------------------------------- periodic measure


def energy_distance(X, Y) -> float:
    """Two-sample energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` (V-statistic)."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    Z = np.vstack([X, Y])
    D = _pairwise(Z)
    n = len(X)
    return float(2 * D[:n, n:].mean() - D[:n, :n].mean() - D[n:, n:].mean())


def _pairwise(Z):
    sq = np.sum(Z**2, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T
    return np.sqrt(np.maximum(D2, 0.0))


def energy_permutation_test(X, Y, n_perm: int = 1000, seed: int = 0) -> tuple:
    """Energy distance and its permutation p-value ``(1 + #{perm >= obs}) / (1 + n_perm)``."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    n, m = len(X), len(Y)
    D = _pairwise(np.vstack([X, Y]))
    total = D.sum()

    def stats(U):
        # U: (n+m, P) indicators of the first sample
        Saa = np.einsum("ip,ip->p", U, D @ U)
        Sab = (U * (D.sum(axis=1)[:, None])).sum(axis=0) - Saa
        Sbb = total - Saa - 2 * Sab
        return 2 * Sab / (n * m) - Saa / n**2 - Sbb / m**2

    u0 = np.zeros((n + m, 1))
    u0[:n] = 1.0
    observed = float(stats(u0)[0])
    rng = np.random.default_rng(seed)
    count = 0
    for start in range(0, n_perm, 250):
        P = min(250, n_perm - start)
        U = np.zeros((n + m, P))
        for p in range(P):
            U[rng.permutation(n + m)[:n], p] = 1.0
        count += int(np.sum(stats(U) >= observed - 1e-12 * abs(observed)))
    return observed, (1 + count) / (1 + n_perm)


def _translated(obj, s):
    if obj is None:
        return None
    if isinstance(obj, PeriodicField):
        ev = obj.eval
        return PeriodicField(obj.period, lambda t, x: ev(np.asarray(t) + s, x), obj.dim, None, obj.lip_bound,
                             obj.sup_bound, obj.family, obj.params, obj.state_independent)
    ev = obj.eval_k
    return AdditiveNoise(obj.period, lambda t: ev(np.asarray(t) + s), obj.channels, obj.dim, obj.R1, obj.family,
                         obj.params)


def sample_at_phase(model, field_, beta, path: BrownianPath, cfg: SolverConfig, s: float,
                    route: str = "resolve") -> np.ndarray:
    """``Y(s, theta_{-s} omega)`` for one path.

    ``resolve`` solves on the path shifted by ``-s`` and evaluates at ``s``;
    ``reindex`` solves on the original path with coefficients translated by
    ``s`` and evaluates at time 0.
    """
    if route == "resolve":
        Y, _ = solve_fixed_point(model, field_, beta, shift(path, -s) if s else path, cfg)
        return Y.at(s)
    if route == "reindex":
        Y, _ = solve_fixed_point(model, _translated(field_, s), _translated(beta, s), path, cfg)
        return Y.at(0.0)
    raise ValueError("route must be 'resolve' or 'reindex'")


@dataclass
class MeasureEstimate:
    s_values: list
    samples: dict
    means: dict
    variances: dict
    distances: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)


def estimate_periodic_measure(model, field_, beta, cfg: SolverConfig, seeds: Sequence[int], s_values: Sequence[float],
                              period: float, route: str = "resolve", n_perm: int = 1000,
                              test_seed: int = 0) -> MeasureEstimate:
    """Clouds of ``Y(s, theta_{-s} omega)`` over seeds, moments, and tests between ``s`` and ``s + period``."""
    from .cocycle import build_dichotomy
    from .ihrie import noise_channels

    dich = build_dichotomy(model, lam="auto" if cfg.lam is None else cfg.lam)
    smax = max(abs(s) for s in s_values)
    samples = {s: [] for s in s_values}
    for seed in seeds:
        path = solver_path(cfg, model, dich, seed, period=None, pad=smax, channels=noise_channels(model, beta))
        for s in s_values:
            samples[s].append(sample_at_phase(model, field_, beta, path, cfg, s, route))
    out = MeasureEstimate(list(s_values), {}, {}, {})
    for s in s_values:
        arr = np.array(samples[s])
        out.samples[s] = arr
        out.means[s] = arr.mean(axis=0)
        out.variances[s] = arr.var(axis=0, ddof=1)
    for s in s_values:
        for s2 in s_values:
            if abs(s2 - s - period) < 1e-9 * period:
                dist, p = energy_permutation_test(out.samples[s], out.samples[s2], n_perm, test_seed)
                out.distances[s] = dist
                out.p_values[s] = p
    return out


def ou_variance_oracle(s: float, amplitude: float = 10.0) -> float:
    """``amplitude^2 int_0^inf exp(-2u) sin^2(s-u) du`` by adaptive quadrature."""
    val, _ = quad(lambda u: math.exp(-2 * u) * math.sin(s - u) ** 2, 0.0, math.inf, limit=200)
    return amplitude**2 * val


# ---------------------------------------------------------------- cocycle checks


def endpoint_cocycles(model: LinearModel, seeds: Sequence[int], times: Sequence[float], dt: float) -> np.ndarray:
    """``Phi(t, omega)`` for each seed and each t in ``times``: shape (seeds, times, d, d)."""
    times = np.asarray(times, dtype=float)
    grid = TimeGrid.spanning(0.0, float(times.max()), dt)
    idx = np.array([grid.index_of(t) for t in times])
    out = np.empty((len(seeds), len(times), model.d, model.d))
    for n, seed in enumerate(seeds):
        raw = sample_path(grid, model.M, seed).raw
        dW = raw[:, idx] - raw[:, :1]
        out[n] = expm(model.exponent(times, dW))
    return out


def check_dichotomy_bounds(model: LinearModel, dich: Dichotomy, seeds: Sequence[int], t_grid: Sequence[float],
                           dt: float, path_window: float = 20.0) -> dict:
    """Per-path decay bound and Monte Carlo small-time behaviour of ``||P- - Phi(t) P-||^2``."""
    P = dich.P_minus
    t_grid = np.asarray(t_grid, dtype=float)
    phis = endpoint_cocycles(model, seeds, t_grid, dt)
    dev = np.linalg.norm(P - phis @ P, axis=(2, 3)) ** 2
    mean = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    pos = t_grid > 0
    slope = float(np.polyfit(np.log(t_grid[pos]), np.log(mean[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    normA = float(np.linalg.norm(model.A))
    normB2 = sum(float(np.linalg.norm(b)) ** 2 for b in model.B)
    env = (np.abs(t_grid) + 1) * np.exp((2 * normA + 2 * model.M * normB2) * np.abs(t_grid)) * np.abs(t_grid)
    C = float(np.max(mean[pos] / env[pos])) if pos.any() else 0.0
    ratio = np.where(env > 0, mean / np.where(env > 0, C * env, 1.0), 0.0)
    # per-path decay check on a few seeds
    decay_ok = True
    worst = 0.0
    for seed in list(seeds)[:5]:
        grid = TimeGrid.spanning(-path_window, path_window, dt)
        path = sample_path(grid, model.M, seed)
        stat = temperedness_stat(model, path, dich)
        for t in t_grid:
            if t > path_window:
                continue
            X = phi_truncated(model, path, dich, float(t), 0.0, math.inf, MINUS)
            val = float(np.linalg.norm(X)) * math.exp(-dich.rate(MINUS) * t)
            worst = max(worst, val / stat)
            decay_ok &= val <= stat * (1 + 1e-12)
    return {"t": t_grid.tolist(), "mean": mean.tolist(), "stderr": se.tolist(), "slope": slope,
            "envelope_C": C, "envelope_ratio_max": float(np.max(ratio)), "decay_ok": bool(decay_ok),
            "decay_worst_ratio": worst}


def lognormal_deviation_oracle(a: float, b: float, t: float) -> float:
    """``E (1 - exp(a t + b W_t))^2`` from the lognormal moments ``E exp(k W_t) = exp(k^2 t / 2)``."""
    return 1.0 - 2.0 * math.exp(a * t + 0.5 * b * b * t) + math.exp(2 * a * t + 2 * b * b * t)


def check_cameron_martin(model: LinearModel, path: BrownianPath, dich: Dichotomy, u: float, s: float, l: int,
                         r1: float, r2: float, eps_list: Sequence[float], N: float, sign: str = MINUS) -> dict:
    """Finite differences along ``eps * int chi_[r1, r2]`` on channel ``l`` against the Malliavin formula."""
    base = phi_truncated(model, path, dich, u, s, N, sign)
    # integral of the derivative against h = indicator, by trapezoid on the path grid
    g = path.grid
    i1, i2 = g.index_of(r1), g.index_of(r2)
    rs = g.times[i1 : i2 + 1]
    D = np.array([malliavin_phi(model, path, dich, u, s, l, float(r), N, sign) for r in rs])
    if len(rs) > 1:
        wts = np.full(len(rs), g.dt)
        wts[[0, -1]] *= 0.5
        analytic = np.einsum("r,rij->ij", wts, D)
    else:
        analytic = np.zeros_like(base)
    bounds_ok = all(
        np.linalg.norm(Dr) <= malliavin_bound(model, dich, u, s, l, N, sign) * (1 + 1e-12) for Dr in D
    )
    errors = []
    for eps in eps_list:
        bumped = cameron_martin_shift(path, l, r1, r2, eps)
        fd = (phi_truncated(model, bumped, dich, u, s, N, sign) - base) / eps
        errors.append(float(np.linalg.norm(fd - analytic)))
    ratios = [errors[k] / errors[k + 1] if errors[k + 1] > 0 else float("inf") for k in range(len(errors) - 1)]
    return {"eps": list(eps_list), "errors": errors, "ratios": ratios, "analytic_norm": float(np.linalg.norm(analytic)),
            "bounds_ok": bool(bounds_ok)}


def check_expansion_sensitivity(model: LinearModel, field_: PeriodicField | None, path: BrownianPath,
                                Y: GridFunction, s: float, eps: float, direction, span: float,
                                beta: AdditiveNoise | None = None, substeps: int = 1) -> dict:
    """Fitted exponential growth rate of the separation between flows from ``Y(s)`` and ``Y(s) + eps v``."""
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    ys = Y.at(s)
    t_end = s + span
    try:
        base = semiflow(model, field_, path, ys, s, t_end, substeps=substeps, beta=beta, return_trajectory=True)
        pert = semiflow(model, field_, path, ys + eps * v, s, t_end, substeps=substeps, beta=beta,
                        return_trajectory=True)
    except NonFinite as exc:
        return {"rate": float("inf"), "status": "blowup", "time": exc.time}
    sep = np.linalg.norm(pert.states - base.states, axis=0)
    keep = sep > 0
    if keep.sum() < 2:
        return {"rate": float("nan"), "status": "no separation", "tracking": 0.0}
    rate = float(np.polyfit(base.times[keep], np.log(sep[keep]), 1)[0])
    inside = (base.times >= Y.grid.t_start - 1e-12) & (base.times <= Y.grid.t_end + 1e-12)
    idx = np.array([Y.grid.index_of(t) for t in base.times[inside]])
    tracking = float(np.max(np.linalg.norm(base.states[:, inside] - Y.values[:, idx], axis=0))) if idx.size else 0.0
    return {"rate": rate, "status": "ok", "tracking": tracking, "final_separation": float(sep[-1])}
