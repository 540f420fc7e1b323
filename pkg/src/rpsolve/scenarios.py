"""Built-in scenarios and JSON scenario documents.

A scenario document is a JSON object with the keys

``name``      label used in output file names
``A``         drift matrix (list of rows)
``B``         list of noise matrices (may be empty)
``gamma``     list of additive noise vectors, one per channel (optional)
``field``     ``{"family": ..., "params": {...}}`` for the periodic drift
``noise``     ``{"family": ..., "params": {...}}`` for time-periodic additive noise (optional)
``orbit``     ``{"family": "circle", "radius": r}`` to solve about a periodic orbit (optional)
``solver``    keyword arguments of :class:`SolverConfig`; ``dt`` is snapped to the period
``seeds``     default seed list

A document may instead name a built-in under ``"scenario"`` and override
any of the keys above; nested ``solver`` entries are merged key by key.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cocycle import LinearModel
from .errors import ConfigError, UnknownFamily
from .ihrie import GridFunction, SolverConfig, aligned_dt
from .models import (AdditiveNoise, DeterministicOrbit, PeriodicField, builtin_field, builtin_noise, circle_orbit,
                     reduce_about_orbit)

TWO_PI = 2.0 * math.pi

BUILTIN = {
    "ou_periodic": {
        "A": [[-1.0]], "B": [],
        "field": {"family": "cosine_forcing", "params": {"c": 1.0}},
        "noise": {"family": "sine", "params": {"amplitude": 10.0}},
        "solver": {"T": TWO_PI, "H": 20.0, "dt": 1e-3},
    },
    "mult_linear_scalar": {
        "A": [[-1.0]], "B": [[[10.0]]],
        "field": {"family": "cosine_forcing", "params": {"c": 1.0}},
        # 10 W(u) - u keeps excursions of size ~50 over tens of time units, so short horizons truncate visibly
        "solver": {"T": TWO_PI, "H": 300.0, "dt": 1e-3},
    },
    "hyperbolic_2d": {
        "A": [[-1.0, 0.0], [0.0, 2.0]], "B": [],
        "field": {"family": "cosine_forcing", "params": {"c": 1.0, "dim": 2}},
        "solver": {"T": TWO_PI, "H": 20.0, "dt": 1e-3},
    },
    "limit_cycle_additive": {
        "A": [[-1.0, -1.0], [1.0, -1.0]], "B": [],
        "gamma": [[10.0, 0.0], [0.0, 10.0]],
        "field": {"family": "limit_cycle", "params": {"r1sq": 1e6, "r2sq": 2e6}},
        "orbit": {"family": "circle", "radius": 1.0},
        "solver": {"T": TWO_PI, "H": 20.0, "dt": 1e-3, "max_iter": 50},
    },
    "limit_cycle_mult": {
        "A": [[-1.0, -1.0], [1.0, -1.0]],
        "B": [[[10.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 10.0]]],
        "field": {"family": "limit_cycle", "params": {"r1sq": 1e6, "r2sq": 2e6}},
        "orbit": {"family": "circle", "radius": 1.0},
        "solver": {"T": TWO_PI, "H": 10.0, "dt": 1e-3, "max_iter": 20, "substeps": 8},
    },
    "stiff_feedback": {
        "A": [[-1.0]], "B": [],
        "field": {"family": "cosine_forcing", "params": {"c": 1.0, "gain": 50.0}},
        "solver": {"T": TWO_PI, "H": 20.0, "dt": 1e-2, "max_iter": 200},
    },
}

_KNOWN_KEYS = {"name", "scenario", "A", "B", "gamma", "field", "noise", "orbit", "solver", "seeds", "b"}


@dataclass(eq=False)
class Scenario:
    """A fully built problem: the solver-facing pieces and the original system for simulation."""

    name: str
    period: float
    model: LinearModel
    field: Optional[PeriodicField]
    beta: Optional[AdditiveNoise]
    cfg: SolverConfig
    seeds: list
    raw_field: Optional[PeriodicField] = None
    raw_beta: Optional[AdditiveNoise] = None
    orbit: Optional[DeterministicOrbit] = None
    document: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        counts = [self.model.M] + [b.channels for b in (self.beta, self.raw_beta) if b is not None]
        return max(counts)

    def lift(self, Y: GridFunction) -> GridFunction:
        """Map a solution of the reduced problem back to the original state."""
        if self.orbit is None:
            return Y
        return GridFunction(Y.grid, Y.values + self.orbit.eval(Y.times))

    def to_json(self) -> dict:
        return copy.deepcopy(self.document)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k == "solver" and isinstance(v, dict):
            out.setdefault("solver", {}).update(v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_document(doc: dict) -> dict:
    """Expand a ``{"scenario": name, ...}`` override document against the built-ins."""
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    name = doc.get("scenario")
    if name is not None:
        if name not in BUILTIN:
            raise ConfigError(f"unknown scenario {name!r}; known: {sorted(BUILTIN)}")
        base = dict(BUILTIN[name], name=name)
        doc = _merge(base, {k: v for k, v in doc.items() if k != "scenario"})
    if "A" not in doc or "field" not in doc and "noise" not in doc:
        raise ConfigError("a scenario needs 'A' and at least one of 'field' or 'noise'")
    return doc


def build_scenario(doc_or_name, overrides: dict | None = None) -> Scenario:
    """Build a :class:`Scenario` from a built-in name or a document, applying ``overrides``."""
    doc = {"scenario": doc_or_name} if isinstance(doc_or_name, str) else dict(doc_or_name)
    doc = resolve_document(_merge(doc, overrides or {}))
    try:
        return _build(doc)
    except UnknownFamily:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario document: {exc}") from exc


def _build(doc: dict) -> Scenario:
    A = np.array(doc["A"], dtype=float, ndmin=2)
    d = A.shape[0]
    B = np.array(doc.get("B") or [], dtype=float).reshape(-1, d, d)
    if "b" in doc:  # scalar multiple of the identity as a single noise matrix
        B = np.array([float(doc["b"]) * np.eye(d)]) if float(doc["b"]) else np.zeros((0, d, d))
    model = LinearModel(A, B)
    f = builtin_field(doc["field"]["family"], doc["field"].get("params")) if doc.get("field") else None
    noise = builtin_noise(doc["noise"]["family"], doc["noise"].get("params")) if doc.get("noise") else None
    gamma = doc.get("gamma")
    period = TWO_PI
    for obj in (f, noise):
        if obj is not None:
            period = obj.period
    for obj in (f, noise):
        if obj is not None and abs(obj.period - period) > 1e-12 * period:
            raise ConfigError("field and noise periods differ")
    if gamma is not None and noise is not None:
        raise ConfigError("use either 'gamma' or 'noise', not both")
    raw_beta = noise
    if gamma is not None:
        raw_beta = builtin_noise("constant", {"gamma": gamma})
    orbit = None
    field_, beta = f, raw_beta
    if doc.get("orbit"):
        spec = doc["orbit"]
        if spec.get("family", "circle") != "circle":
            raise UnknownFamily(f"unknown orbit family {spec.get('family')!r}; known: ['circle']")
        orbit = circle_orbit(float(spec.get("radius", 1.0)))
        if f is None:
            raise ConfigError("an orbit needs a drift field")
        g = np.asarray(gamma, dtype=float) if gamma is not None else None
        field_, beta = reduce_about_orbit(A, f, orbit, B if B.size else None, g)
        if not np.any(beta(np.linspace(0.0, period, 64))):
            beta = None
    solver = dict(doc.get("solver", {}))
    solver["dt"] = aligned_dt(period, float(solver.get("dt", 1e-3)))
    try:
        cfg = SolverConfig(**solver)
    except TypeError as exc:
        raise ConfigError(f"invalid solver options: {exc}") from exc
    seeds = [int(s) for s in doc.get("seeds", [0])]
    return Scenario(doc.get("name", "custom"), period, model, field_, beta, cfg, seeds, f, raw_beta, orbit, doc)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
