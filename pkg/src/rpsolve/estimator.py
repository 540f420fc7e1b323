"""scikit-learn style wrapper around :func:`solve_fixed_point`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cocycle import LinearModel, build_dichotomy
from .ihrie import SolverConfig, solve_fixed_point


class RandomPeriodicSolver(BaseEstimator):
    """Random periodic solution of one noise realisation.

    ``fit(path)`` solves the integral equation on the given Brownian path and
    ``predict(t)`` returns the solution at times in the core window, exact on
    grid points and linearly interpolated between them. The constructor takes
    the linear part ``A`` and noise matrices ``B`` plus the periodic drift and
    additive noise objects; the remaining parameters are solver settings.
    """

    def __init__(self, A=None, B=None, field=None, beta=None, T=2.0 * np.pi, H=None, dt=1e-3, tol=1e-8,
                 max_iter=200, damping=None, lam=None, N="auto", anderson=0, method="auto", substeps=1,
                 noise_rule="stratonovich"):
        self.A = A
        self.B = B
        self.field = field
        self.beta = beta
        self.T = T
        self.H = H
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.lam = lam
        self.N = N
        self.anderson = anderson
        self.method = method
        self.substeps = substeps
        self.noise_rule = noise_rule

    def _config(self) -> SolverConfig:
        return SolverConfig(T=self.T, H=self.H, dt=self.dt, tol=self.tol, max_iter=self.max_iter,
                            damping=self.damping, lam=self.lam, N=self.N, anderson=self.anderson,
                            method=self.method, substeps=self.substeps, noise_rule=self.noise_rule)

    def _model(self) -> LinearModel:
        if self.A is None:
            raise ValueError("A is required")
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.zeros((0,) + A.shape) if self.B is None else np.asarray(self.B, dtype=float).reshape((-1,) + A.shape)
        return LinearModel(A, B)

    def fit(self, path, y=None):
        model = self._model()
        cfg = self._config()
        dich = build_dichotomy(model, lam="auto" if cfg.lam is None else cfg.lam)
        solution, report = solve_fixed_point(model, self.field, self.beta, path, cfg, dich)
        self.model_ = model
        self.dichotomy_ = dich
        self.solution_ = solution
        self.report_ = report
        self.n_iter_ = report.iterations
        return self

    def predict(self, t) -> np.ndarray:
        """Solution at ``t`` (scalar or 1-D array): shape ``(d,)`` or ``(len(t), d)``."""
        check_is_fitted(self, "solution_")
        grid_t = self.solution_.times
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr)
        lo, hi = grid_t[0], grid_t[-1]
        slack = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(flat < lo - slack) or np.any(flat > hi + slack):
            raise ValueError(f"times must lie in the core window [{lo}, {hi}]")
        out = np.column_stack([np.interp(flat, grid_t, row) for row in self.solution_.values])
        return out[0] if t_arr.ndim == 0 else out
