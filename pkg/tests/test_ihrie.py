import dataclasses
import json
import math

import numpy as np
import pytest

from rpsolve.cocycle import LinearModel, build_dichotomy
from rpsolve.errors import ConfigError, MaxIterExceeded, NotDissipative, WindowExceeded
from rpsolve.ihrie import (GridFunction, SolverConfig, aligned_dt, apply_M, build_operator, gbm_forced_closed_form,
                           ou_closed_form, pullback_solve, solve_fixed_point, solver_path, weighted_sup_norm)
from rpsolve.models import builtin_field, builtin_noise
from rpsolve.paths import TimeGrid, sample_path

TAU = 2 * math.pi
DT = aligned_dt(TAU, 2e-3)
COS = builtin_field("cosine_forcing", {"c": 1.0})
COS2 = builtin_field("cosine_forcing", {"c": 1.0, "dim": 2})
SINE = builtin_noise("sine", {"amplitude": 10.0})


def cfg(**kw):
    base = dict(T=TAU, H=12.0, dt=DT)
    base.update(kw)
    return SolverConfig(**base)


def solve(model, field, beta, seed=0, **kw):
    c = cfg(**kw)
    channels = max(model.M, 0 if beta is None else beta.channels)
    d = build_dichotomy(model)
    path = solver_path(c, model, d, seed, period=TAU, channels=channels)
    return solve_fixed_point(model, field, beta, path, c, d), path


def test_aligned_dt_divides_the_period():
    for dt in (1e-3, 2e-3, 0.013):
        a = aligned_dt(TAU, dt)
        n = TAU / a
        assert a <= dt and abs(n - round(n)) < 1e-9 and round(n) % 4 == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(quadrature="simpson")
    with pytest.raises(ConfigError):
        SolverConfig(damping=1.5)
    with pytest.raises(ConfigError):
        SolverConfig(noise_rule="ito")
    with pytest.raises(ConfigError):
        SolverConfig(method="spectral")


def test_period_must_be_a_whole_number_of_steps():
    model = LinearModel([[-1.0]])
    c = SolverConfig(T=1.0, H=2.0, dt=1e-3)
    path = sample_path(TimeGrid(-4.0, 1e-3, 8000), 1, 0)
    with pytest.raises(ConfigError):
        solve_fixed_point(model, COS, None, path, c)


def test_short_path_is_rejected():
    model = LinearModel([[-1.0]])
    c = cfg()
    path = sample_path(TimeGrid(0.0, DT, 100), 1, 0)
    with pytest.raises(WindowExceeded):
        solve_fixed_point(model, COS, None, path, c)


def test_additive_noise_solution_is_the_closed_form_sum():
    model = LinearModel([[-1.0]])
    (Y, rep), path = solve(model, COS, SINE, seed=3)
    (Y0, _), _ = solve(model, COS, None, seed=3)
    H = rep.H
    for t in Y.times[::500]:
        stochastic = ou_closed_form(path, 0.0, t, H)
        assert Y.at(t)[0] - Y0.at(t)[0] == pytest.approx(stochastic, abs=1e-10)
        assert Y.at(t)[0] == pytest.approx(ou_closed_form(path, 1.0, t, H), abs=1e-5)


def test_multiplicative_scalar_solution_is_the_trapezoid_closed_form():
    model = LinearModel([[-1.0]], [[[2.0]]])
    (Y, rep), path = solve(model, COS, None, seed=1)
    assert rep.iterations <= 2
    for t in Y.times[::700]:
        ref = gbm_forced_closed_form(path, t, rep.H, noise=2.0)
        assert Y.at(t)[0] == pytest.approx(ref, rel=1e-12)


SMALL = dict(T=1.0, H=4.0, dt=aligned_dt(TAU, 2e-2))  # the reference routes cost O(n H / dt)


def test_fast_and_direct_routes_agree():
    model = LinearModel(np.diag([-1.0, 2.0]), [0.5 * np.eye(2)])
    beta = builtin_noise("constant", {"gamma": [[1.0, 0.5]]})
    (Yf, rf), _ = solve(model, COS2, beta, seed=2, method="fast", **SMALL)
    (Yd, rd), _ = solve(model, COS2, beta, seed=2, method="direct", **SMALL)
    assert (rf.route, rd.route) == ("fast", "direct")
    assert np.allclose(Yf.values, Yd.values, rtol=1e-11, atol=1e-11)


def test_matrix_and_direct_routes_agree_without_commutativity():
    model = LinearModel([[-1.0, 0.5], [0.0, -2.0]], [[[0.3, 0.2], [0.0, 0.1]]])
    assert not model.commutative
    beta = builtin_noise("constant", {"gamma": [[1.0, -0.5]]})
    (Ym, rm), _ = solve(model, COS2, beta, seed=6, method="matrix", **SMALL)
    (Yd, rd), _ = solve(model, COS2, beta, seed=6, method="direct", **SMALL)
    assert (rm.route, rd.route) == ("matrix", "direct")
    assert np.allclose(Ym.values, Yd.values, rtol=1e-11, atol=1e-11)


def test_matrix_route_converges_to_the_exact_cocycle_route():
    model = LinearModel(np.diag([-1.0, 2.0]), [0.5 * np.eye(2)])
    beta = builtin_noise("constant", {"gamma": [[1.0, 0.5]]})
    gaps = []
    for dt in (2e-2, 5e-3, 1.25e-3):
        opts = dict(SMALL, dt=aligned_dt(TAU, dt))
        (Yf, _), _ = solve(model, COS2, beta, seed=2, method="fast", **opts)
        (Ym, _), _ = solve(model, COS2, beta, seed=2, method="matrix", **opts)
        gaps.append(np.max(np.abs(Yf.values - Ym.values)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_linear_feedback_converges_to_the_shifted_periodic_orbit():
    g = 0.2
    field = builtin_field("cosine_forcing", {"c": 1.0, "gain": g})
    model = LinearModel([[-1.0]])
    (Y, rep), _ = solve(model, field, None, H=30.0)
    a = 1.0 - g
    t = Y.times
    exact = (a * np.cos(t) + np.sin(t)) / (a * a + 1.0)
    assert rep.converged and rep.iterations > 2
    assert np.max(np.abs(Y.values[0] - exact)) < 1e-5


def test_anderson_reaches_the_same_fixed_point_in_fewer_iterations():
    field = builtin_field("cosine_forcing", {"c": 1.0, "gain": 0.4})
    model = LinearModel([[-1.0]])
    (Yp, rp), _ = solve(model, field, None, H=30.0)
    (Ya, ra), _ = solve(model, field, None, H=30.0, anderson=3)
    assert ra.iterations < rp.iterations
    assert np.max(np.abs(Ya.values - Yp.values)) < 1e-6


def test_divergent_iteration_raises_with_history():
    field = builtin_field("cosine_forcing", {"c": 1.0, "gain": 30.0})
    model = LinearModel([[-1.0]])
    with pytest.raises(MaxIterExceeded) as info:
        solve(model, field, None, max_iter=15, damping=1.0)
    err = info.value
    assert len(err.residuals) == 15
    assert all(b > a for a, b in zip(err.residuals, err.residuals[1:]))
    assert err.report is not None and not err.report.converged
    assert isinstance(err.iterate, GridFunction)


def test_solves_are_reproducible_and_reports_serialise():
    model = LinearModel([[-1.0]], [[[1.0]]])
    (Y1, r1), _ = solve(model, COS, None, seed=4)
    (Y2, r2), _ = solve(model, COS, None, seed=4)
    assert np.array_equal(Y1.values, Y2.values)
    assert r1.dumps() == r2.dumps()
    payload = json.loads(r1.dumps())
    assert payload["converged"] and "wall_time" not in payload
    assert Y1.to_csv().splitlines()[0] == "t,y1"


def test_apply_M_on_zero_is_the_forcing_integral():
    model = LinearModel([[-1.0]])
    c = cfg()
    d = build_dichotomy(model)
    path = solver_path(c, model, d, 0, period=TAU)
    op, _, t_steps, h_steps = build_operator(model, COS, None, path, c, d)
    Y0 = GridFunction(op.grid, np.zeros((1, op.n)))
    MY = apply_M(Y0, model, COS, path, d, c)
    core = slice(h_steps, h_steps + 2 * t_steps + 1)
    t = op.grid.times[core]
    assert np.max(np.abs(MY.values[0, core] - 0.5 * (np.cos(t) + np.sin(t)))) < 1e-5


def test_pullback_matches_the_solver_for_contracting_problems():
    model = LinearModel([[-1.0]], [[[0.5]]])
    (Y, _), path = solve(model, COS, None, seed=5, H=20.0)
    c = dataclasses.replace(cfg(), H=20.0)
    x, gap = pullback_solve(model, COS, None, path, 0.0, 3, c, integrator="semiflow")
    assert gap < 1e-6
    assert x[0] == pytest.approx(Y.at(0.0)[0], abs=1e-6)
    with pytest.raises(NotDissipative):
        pullback_solve(LinearModel(np.diag([-1.0, 2.0])), COS2, None, path, 0.0, 2)


def test_weighted_norm():
    t = np.array([-2.0, 0.0, 2.0])
    v = np.array([[1.0, 0.5, 1.0]])
    assert weighted_sup_norm((t, v), 0.1) == pytest.approx(max(0.5, math.exp(-0.4)))
