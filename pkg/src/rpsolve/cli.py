"""Command-line front end: ``rpsolve solve|simulate|verify|measure|spectrum``.

Every command reads a built-in scenario (``--scenario``) or a JSON document
(``--config``); explicit flags override the document. Outputs go to
``--out`` (default ``.``) with stable names, ``%.17g`` CSV and sorted-key
JSON, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from .cocycle import build_dichotomy, lyapunov_samples
from .errors import ConfigError, MaxIterExceeded, RPSolveError, VerificationFailed
from .ihrie import solve_fixed_point, solver_path
from .integrate import heun_stratonovich
from .paths import TimeGrid, sample_path, zero_path
from .scenarios import BUILTIN, Scenario, build_scenario, load_config
from .verify import (CheckResult, check_random_periodicity, check_semiflow_invariance, invariance_tolerance,
                     report_json)


# ------------------------------------------------------------------ file output


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(header: list, columns: list) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack(columns), fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    return buf.getvalue()


# ------------------------------------------------------------- option handling


def parse_seeds(seed, seeds) -> list:
    """``--seeds`` accepts ``0,3,7`` or a half-open range ``0:100``; ``--seed`` a single value."""
    if seeds:
        out = []
        for part in str(seeds).split(","):
            part = part.strip()
            if ":" in part:
                a, b = part.split(":", 1)
                out.extend(range(int(a), int(b)))
            elif part:
                out.append(int(part))
        return out
    if seed is not None:
        return [int(seed)]
    return None


def parse_floats(text: str) -> list:
    return [float(x) for x in str(text).split(",") if x.strip()]


def load_scenario(scenario, config, dt=None, horizon=None, tol=None) -> Scenario:
    if config:
        doc = load_config(config)
        if scenario:
            doc = dict(doc, scenario=scenario)
    elif scenario:
        doc = {"scenario": scenario}
    else:
        raise click.UsageError("give --scenario or --config")
    solver = {}
    if dt is not None:
        solver["dt"] = dt
    if horizon is not None:
        solver["H"] = horizon
    if tol is not None:
        solver["tol"] = tol
    return build_scenario(doc, {"solver": solver} if solver else None)


def common_options(func):
    opts = [
        click.option("--scenario", type=str, default=None, help=f"built-in: {', '.join(sorted(BUILTIN))}"),
        click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="JSON scenario document"),
        click.option("--seed", type=int, default=None),
        click.option("--seeds", type=str, default=None, help="comma list or range a:b"),
        click.option("--dt", type=float, default=None),
        click.option("--horizon", type=float, default=None, help="integration horizon H"),
        click.option("--tol", type=float, default=None),
        click.option("--out", "out", type=click.Path(file_okay=False), default=".", show_default=True),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def covering_grid(t_end: float, dt: float) -> TimeGrid:
    """Grid from 0 with step ``dt`` whose last point is the first at or beyond ``t_end``."""
    return TimeGrid(0.0, dt, max(1, math.ceil(t_end / dt - 1e-9)))


def _seeds_for(sc: Scenario, seed, seeds) -> list:
    return parse_seeds(seed, seeds) or list(sc.seeds)


# ---------------------------------------------------------------------- commands


@click.group()
def main():
    """Random periodic solutions of periodically forced SDEs with linear multiplicative noise."""


def _solve_one(sc: Scenario, seed: int):
    dich = build_dichotomy(sc.model, lam="auto" if sc.cfg.lam is None else sc.cfg.lam)
    path = solver_path(sc.cfg, sc.model, dich, seed, period=sc.period, channels=sc.channels)
    try:
        Y, report = solve_fixed_point(sc.model, sc.field, sc.beta, path, sc.cfg, dich)
    except MaxIterExceeded as exc:
        return seed, None, exc
    return seed, (sc.lift(Y).to_csv(), report.dumps()), None


def _solve_worker(args):
    doc, seed = args
    return _solve_one(build_scenario(doc), seed)


@main.command()
@common_options
@click.option("--workers", type=int, default=1, show_default=True, help="seed-parallel worker processes")
def solve(scenario, config, seed, seeds, dt, horizon, tol, out, workers):
    """Solve the integral equation per seed; write solution CSV and report JSON."""
    sc = load_scenario(scenario, config, dt, horizon, tol)
    seed_list = _seeds_for(sc, seed, seeds)
    out = Path(out)
    if workers > 1 and len(seed_list) > 1:
        doc = _resolved_document(sc)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_worker, [(doc, s) for s in seed_list]))
    else:
        results = [_solve_one(sc, s) for s in seed_list]
    failure = None
    for s, files, exc in results:  # merged in seed order
        stem = f"{sc.name}_seed{s}"
        if exc is not None:
            if exc.report is not None:
                _atomic_write(out / f"{stem}_report.json", exc.report.dumps())
            click.echo(f"seed {s}: {exc}", err=True)
            failure = failure or exc
            continue
        csv_text, report_text = files
        _atomic_write(out / f"{stem}_solution.csv", csv_text)
        _atomic_write(out / f"{stem}_report.json", report_text)
        click.echo(f"seed {s}: converged")
    if failure is not None:
        raise failure


def _resolved_document(sc: Scenario) -> dict:
    doc = dict(sc.document)
    solver = dict(doc.get("solver", {}), **sc.cfg.to_json())
    solver["N"] = sc.cfg.N
    doc["solver"] = solver
    return doc


@main.command()
@common_options
@click.option("--t-end", "t_end", type=float, default=50.0, show_default=True)
@click.option("--x0", type=str, default=None, help="initial state, comma separated")
def simulate(scenario, config, seed, seeds, dt, horizon, tol, out, t_end, x0):
    """Forward Heun trajectory of the original system plus its noiseless reference."""
    sc = load_scenario(scenario, config, dt, horizon, tol)
    dt_ = sc.cfg.dt
    d = sc.model.d
    if x0 is not None:
        start = np.array(parse_floats(x0))
        if start.shape != (d,):
            raise click.BadParameter(f"expected {d} values", param_hint="--x0")
    elif sc.orbit is not None:
        start = sc.orbit.eval(0.0)
    else:
        start = np.zeros(d)
    grid = covering_grid(t_end, dt_)
    channels = sc.channels
    ref = heun_stratonovich(sc.model, sc.raw_field, sc.raw_beta, zero_path(grid, channels), start, 0.0, grid.t_end)
    for s in _seeds_for(sc, seed, seeds):
        traj = heun_stratonovich(sc.model, sc.raw_field, sc.raw_beta, sample_path(grid, channels, s), start, 0.0,
                                 grid.t_end)
        if d == 1:
            header = ["t", "y", "ref"]
        else:
            header = ["t"] + [f"y{k + 1}" for k in range(d)] + [f"ref{k + 1}" for k in range(d)]
        text = _csv(header, [traj.times, traj.states.T, ref.states.T])
        _atomic_write(Path(out) / f"{sc.name}_seed{s}_simulate.csv", text)
        click.echo(f"seed {s}: {traj.times.size} points")


def verification_checks(sc: Scenario, seed: int) -> list:
    """Semiflow invariance over spans up to two periods, and periodicity under the path shift."""
    cfg = sc.cfg
    dich = build_dichotomy(sc.model, lam="auto" if cfg.lam is None else cfg.lam)
    path = solver_path(cfg, sc.model, dich, seed, period=sc.period, channels=sc.channels)
    Y, report = solve_fixed_point(sc.model, sc.field, sc.beta, path, cfg, dich)
    results = [CheckResult(f"converged[seed={seed}]", report.final_residual, cfg.tol, report.converged,
                           {"iterations": report.iterations, "route": report.route})]
    tol_inv = invariance_tolerance(cfg.dt, dich.gap, report.H)
    T = Y.grid.t_end
    k_tau = path.grid.steps_in(sc.period)
    for s_steps, t_steps in ((-k_tau, k_tau), (0, k_tau // 2), (-k_tau // 4, k_tau // 4)):
        s, t = s_steps * cfg.dt, t_steps * cfg.dt
        if s < -T or t > T:
            continue
        res = check_semiflow_invariance(Y, sc.model, sc.field, sc.beta, path, s, t, substeps=cfg.substeps,
                                        noise_rule=cfg.noise_rule)
        results.append(CheckResult(f"semiflow_invariance[seed={seed},s={s:.6g},t={t:.6g}]", res.rel_residual,
                                   tol_inv, res.rel_residual <= tol_inv,
                                   {"abs": res.abs_residual, "heun_rel": res.heun_rel,
                                    "heun_status": res.heun_status}))
    per = check_random_periodicity(sc.model, sc.field, sc.beta, path, cfg, sc.period)
    results.append(CheckResult(f"random_periodicity[seed={seed}]", per.residual, per.tolerance,
                               per.residual <= per.tolerance, {"points": per.n_points}))
    return results


@main.command()
@common_options
def verify(scenario, config, seed, seeds, dt, horizon, tol, out):
    """Check invariance and periodicity of converged solves; nonzero exit on failure."""
    sc = load_scenario(scenario, config, dt, horizon, tol)
    results = []
    for s in _seeds_for(sc, seed, seeds):
        results.extend(verification_checks(sc, s))
    text = report_json(results) + "\n"
    _atomic_write(Path(out) / f"{sc.name}_verify.json", text)
    for r in results:
        click.echo(f"{'PASS' if r.passed else 'FAIL'} {r.name} value={r.value:.3e} tol={r.tolerance:.3e}")
    if not all(r.passed for r in results):
        raise VerificationFailed("verification failed")


def fit_closed_curve(points: np.ndarray, order: int = 6, n_curve: int = 4096):
    """Least-squares polar Fourier curve about the centroid; returns (curve, distances)."""
    c = points.mean(axis=0)
    rel = points - c
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    r = np.hypot(rel[:, 0], rel[:, 1])

    def design(th):
        cols = [np.ones_like(th)]
        for k in range(1, order + 1):
            cols += [np.cos(k * th), np.sin(k * th)]
        return np.column_stack(cols)

    coef, *_ = np.linalg.lstsq(design(theta), r, rcond=None)
    th = np.linspace(0.0, 2 * math.pi, n_curve, endpoint=False)
    rc = design(th) @ coef
    curve = c + np.column_stack([rc * np.cos(th), rc * np.sin(th)])
    dist = np.min(np.linalg.norm(points[:, None, :] - curve[None, :, :], axis=2), axis=1)
    return curve, dist


@main.command()
@common_options
@click.option("--n", "n_points", type=int, default=400, show_default=True, help="cloud size")
@click.option("--times", type=str, default="0,2,5,20", show_default=True)
@click.option("--box", type=float, default=2.0, show_default=True, help="half-width of the initial box")
@click.option("--radius", type=float, default=0.5, show_default=True, help="curve-fit distance threshold")
def measure(scenario, config, seed, seeds, dt, horizon, tol, out, n_points, times, box, radius):
    """Evolve a uniform cloud under one shared path and snapshot it at the requested times."""
    sc = load_scenario(scenario, config, dt, horizon, tol)
    s = _seeds_for(sc, seed, seeds)[0]
    d = sc.model.d
    snap = sorted(parse_floats(times))
    if not snap or snap[0] < 0:
        raise click.BadParameter("times must be non-negative", param_hint="--times")
    grid = covering_grid(snap[-1], sc.cfg.dt)
    rng = np.random.default_rng([s, 0x5EED])
    cloud0 = rng.uniform(-box, box, size=(d, n_points))
    traj = heun_stratonovich(sc.model, sc.raw_field, sc.raw_beta, sample_path(grid, sc.channels, s), cloud0, 0.0,
                             grid.t_end)
    summary = {"scenario": sc.name, "seed": s, "n": n_points, "box": box, "radius": radius, "snapshots": []}
    for t in snap:
        X = traj.states[..., int(round(t / grid.dt))].T
        name = f"{sc.name}_seed{s}_t{t:g}.csv"
        _atomic_write(Path(out) / name, _csv([f"x{k + 1}" for k in range(d)], [X]))
        spread = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
        entry = {"t": t, "file": name, "mean": X.mean(axis=0).tolist(), "var": X.var(axis=0, ddof=1).tolist(),
                 "spread": spread}
        if d == 2:
            _, dist = fit_closed_curve(X)
            entry.update(within=float(np.mean(dist <= radius)), median_distance=float(np.median(dist)),
                         max_distance=float(np.max(dist)))
        summary["snapshots"].append(entry)
        extra = f" within={entry['within']:.3f}" if "within" in entry else ""
        extra += f" spread={spread:.3g}"
        click.echo(f"t={t:g}{extra}")
    _atomic_write(Path(out) / f"{sc.name}_seed{s}_measure.json", _dump_json(summary))


@main.command()
@common_options
@click.option("--t-end", "t_end", type=float, default=50.0, show_default=True)
@click.option("--paths", "n_paths", type=int, default=200, show_default=True)
def spectrum(scenario, config, seed, seeds, dt, horizon, tol, out, t_end, n_paths):
    """Dichotomy data and finite-time Lyapunov estimates along each coordinate direction."""
    sc = load_scenario(scenario, config, dt, horizon, tol)
    dich = build_dichotomy(sc.model, lam="auto" if sc.cfg.lam is None else sc.cfg.lam)
    seed_list = parse_seeds(seed, seeds) or list(range(n_paths))
    t_end = covering_grid(t_end, sc.cfg.dt).t_end
    d = sc.model.d
    estimates = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        samples = lyapunov_samples(sc.model, seed_list, e, t_end, sc.cfg.dt)
        estimates.append({"direction": e.tolist(), "mean": float(samples.mean()),
                          "stderr": float(samples.std(ddof=1) / math.sqrt(len(samples))) if len(samples) > 1
                          else None})
    payload = {"scenario": sc.name, "commutative": bool(sc.model.commutative), "dichotomy": dich.to_json(),
               "lyapunov": {"T": t_end, "paths": len(seed_list), "estimates": estimates}}
    text = _dump_json(payload)
    _atomic_write(Path(out) / f"{sc.name}_spectrum.json", text)
    click.echo(text, nl=False)


def run(argv=None) -> int:
    """Entry point mapping library errors to their exit codes."""
    try:
        main.main(args=argv, prog_name="rpsolve", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except RPSolveError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exc.exit_code
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return ConfigError.exit_code
    return 0


def console_main() -> None:
    sys.exit(run())
