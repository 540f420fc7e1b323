import json
import math

import numpy as np
import pytest

from rpsolve.errors import ConfigError, UnknownFamily
from rpsolve.ihrie import GridFunction
from rpsolve.paths import TimeGrid
from rpsolve.scenarios import BUILTIN, build_scenario, load_config


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_builtins_build_with_period_aligned_steps(name):
    sc = build_scenario(name)
    q = sc.period / sc.cfg.dt
    assert abs(q - round(q)) < 1e-9
    assert sc.cfg.dt <= BUILTIN[name]["solver"]["dt"]
    assert sc.to_json()["name"] == name


def test_limit_cycle_scenarios_are_reduced_about_the_orbit():
    add = build_scenario("limit_cycle_additive")
    mult = build_scenario("limit_cycle_mult")
    assert add.orbit is not None and add.model.M == 0 and add.channels == 2
    assert np.allclose(add.beta(0.3), 10.0 * np.eye(2))
    assert not mult.model.commutative
    assert np.allclose(mult.beta(0.0), [[10.0, 0.0], [0.0, 0.0]])


def test_overrides_merge_solver_options_key_by_key():
    sc = build_scenario("ou_periodic", {"solver": {"tol": 1e-6}})
    assert sc.cfg.tol == 1e-6 and sc.cfg.H == 20.0
    hyp = build_scenario({"scenario": "hyperbolic_2d", "b": 0.3})
    assert hyp.model.M == 1 and np.allclose(hyp.model.B[0], 0.3 * np.eye(2))


def test_document_errors():
    with pytest.raises(ConfigError):
        build_scenario({"scenario": "ou_periodic", "colour": "red"})
    with pytest.raises(ConfigError):
        build_scenario("no_such_scenario")
    with pytest.raises(UnknownFamily):
        build_scenario({"A": [[-1.0]], "field": {"family": "square_wave"}})
    with pytest.raises(ConfigError):
        build_scenario({"scenario": "ou_periodic", "solver": {"bogus": 1}})
    with pytest.raises(ConfigError):
        build_scenario({"A": [[-1.0]]})


def test_custom_document_and_file_loading(tmp_path):
    doc = {"name": "custom", "A": [[-2.0]], "B": [[[0.5]]], "field": {"family": "cosine_forcing"},
           "solver": {"H": 10.0, "dt": 0.01}, "seeds": [4, 5]}
    f = tmp_path / "s.json"
    f.write_text(json.dumps(doc))
    sc = build_scenario(load_config(f))
    assert sc.seeds == [4, 5] and sc.name == "custom" and sc.cfg.H == 10.0
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_lift_adds_the_orbit():
    sc = build_scenario("limit_cycle_additive")
    grid = TimeGrid(0.0, 0.5, 4)
    Y = sc.lift(GridFunction(grid, np.zeros((2, 5))))
    assert np.allclose(Y.values, [np.cos(grid.times), np.sin(grid.times)])
