import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpsolve.errors import NonGridShift, OffGrid, WindowExceeded
from rpsolve.paths import (TimeGrid, cameron_martin_shift, coarsen, increment, read_path_csv, sample_path, shift,
                           write_path_csv, zero_path)


def grid(lo=-2.0, hi=3.0, dt=0.01):
    return TimeGrid.spanning(lo, hi, dt)


def test_sampling_is_deterministic_per_seed():
    a = sample_path(grid(), 2, 7)
    b = sample_path(grid(), 2, 7)
    c = sample_path(grid(), 2, 8)
    assert np.array_equal(a.raw, b.raw)
    assert not np.array_equal(a.raw, c.raw)


def test_increments_agree_across_overlapping_windows():
    wide = sample_path(grid(-5.0, 5.0), 1, 3)
    narrow = sample_path(grid(-1.0, 2.0), 1, 3)
    i = wide.grid.index_of(-1.0)
    assert np.allclose(wide.increments[:, i : i + narrow.grid.n_steps], narrow.increments, rtol=0, atol=1e-14)


def test_increment_statistics_match_brownian_motion():
    p = sample_path(TimeGrid(0.0, 0.01, 200_000), 1, 0)
    inc = p.increments[0]
    assert abs(inc.mean()) < 4 * np.sqrt(0.01 / inc.size)
    assert abs(inc.var() / 0.01 - 1.0) < 4 * np.sqrt(2.0 / inc.size)


@given(k=st.integers(-150, 150), seed=st.integers(0, 10_000))
def test_shift_translates_increments_bitwise(k, seed):
    p = sample_path(grid(), 1, seed)
    q = shift(p, k * p.grid.dt)
    for t in q.times[:: max(1, q.grid.n_steps // 7)]:
        for u in (0.0, 0.05):
            if q.grid.contains(t + u):
                assert increment(q, t, t + u)[0] == increment(p, t + k * p.grid.dt, t + k * p.grid.dt + u)[0]


@given(a=st.integers(-100, 100), b=st.integers(-100, 100))
def test_shift_composes(a, b):
    p = sample_path(grid(-5.0, 5.0), 1, 1)
    dt = p.grid.dt
    lhs = shift(shift(p, a * dt), b * dt)
    rhs = shift(p, (a + b) * dt)
    t0 = max(lhs.grid.t_start, rhs.grid.t_start)
    t1 = min(lhs.grid.t_end, rhs.grid.t_end)
    assert increment(lhs, t0, t1)[0] == pytest.approx(increment(rhs, t0, t1)[0], abs=1e-12)


def test_non_grid_shift_and_window_errors():
    p = sample_path(grid(), 1, 0)
    with pytest.raises(NonGridShift):
        shift(p, 0.0037)
    with pytest.raises(WindowExceeded):
        shift(p, 100.0)
    with pytest.raises(WindowExceeded):
        p.window(-10.0, 0.0)
    with pytest.raises(OffGrid):
        p.at(0.0051)


def test_coarsen_keeps_the_path():
    p = sample_path(grid(), 1, 2)
    c = coarsen(p, 5)
    assert c.grid.dt == pytest.approx(0.05)
    assert np.array_equal(c.at(1.0), p.at(1.0))


def test_cameron_martin_shift_adds_a_ramp():
    p = zero_path(grid(0.0, 2.0), 2)
    q = cameron_martin_shift(p, 1, 0.5, 1.0, 0.1)
    assert q.at(0.25)[1] == 0.0
    assert q.at(0.75)[1] == pytest.approx(0.025)
    assert q.at(1.5)[1] == pytest.approx(0.05)
    assert np.all(q.values[0] == 0.0)


def test_csv_round_trip(tmp_path):
    p = sample_path(grid(0.0, 1.0), 2, 4)
    f = tmp_path / "w.csv"
    write_path_csv(p, f)
    q = read_path_csv(f)
    assert np.allclose(q.values, p.values, rtol=0, atol=1e-15)
    assert q.grid.n_steps == p.grid.n_steps
