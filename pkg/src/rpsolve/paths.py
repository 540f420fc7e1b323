"""Two-sided multi-channel Brownian paths on uniform grids and the shift map.

Stream-splitting rule used by :func:`sample_path`
-------------------------------------------------
Every channel ``k`` of a path with integer ``seed`` owns two independent
normal streams, derived as ``SeedSequence(seed, spawn_key=(k, 0))`` for the
steps at non-negative times and ``SeedSequence(seed, spawn_key=(k, 1))`` for
the steps at negative times. When ``t_start`` is an integer multiple of ``dt``
the increment over ``[j*dt, (j+1)*dt]`` is draw ``j`` of the forward stream
for ``j >= 0`` and draw ``-j-1`` of the backward stream for ``j < 0``. Two
windows sampled with the same ``(seed, dt)`` therefore share identical
increments on their overlap, and different seeds or channels never share a
stream. Grids whose start is not aligned to ``dt`` index steps from
``t_start`` instead.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NonGridShift, OffGrid, WindowExceeded

_INDEX_TOL = 1e-6


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def spanning(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        """Grid from ``t_start`` to ``t_end``; the span must be a whole number of steps."""
        n = (t_end - t_start) / dt
        k = int(round(n))
        if abs(n - k) > _INDEX_TOL * max(1.0, abs(n)) or k < 1:
            raise ValueError(f"[{t_start}, {t_end}] is not a whole number of steps of {dt}")
        return cls(t_start, dt, k)

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_steps * self.dt

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @cached_property
    def times(self) -> np.ndarray:
        t = self.t_start + self.dt * np.arange(self.n_points)
        t.flags.writeable = False
        return t

    def offset_steps(self):
        """Integer number of steps from time 0 to ``t_start``, or None if unaligned."""
        q = self.t_start / self.dt
        k = int(round(q))
        return k if abs(q - k) <= _INDEX_TOL else None

    def index_of(self, t: float) -> int:
        q = (t - self.t_start) / self.dt
        k = int(round(q))
        if abs(q - k) > _INDEX_TOL:
            raise OffGrid(f"time {t} is not a grid point (dt={self.dt}, t_start={self.t_start})")
        if k < 0 or k > self.n_steps:
            raise OffGrid(f"time {t} lies outside [{self.t_start}, {self.t_end}]")
        return k

    def steps_in(self, s: float) -> int:
        """Number of steps spanned by duration ``s``; raises if ``s`` is not a multiple of dt."""
        q = s / self.dt
        k = int(round(q))
        if abs(q - k) > _INDEX_TOL:
            raise NonGridShift(f"{s} is not an integer multiple of dt={self.dt}")
        return k

    def contains(self, t: float) -> bool:
        return self.t_start - _INDEX_TOL * self.dt <= t <= self.t_end + _INDEX_TOL * self.dt


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Sampled Wiener path.

    ``raw`` holds path values up to an additive constant per channel. Shifted
    paths are slices of the parent's ``raw`` so that increments of a shifted
    path are bitwise equal to the translated increments of the parent.
    ``values`` is the anchored view with value 0 at ``t_start``.
    """

    grid: TimeGrid
    channels: int
    raw: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float)
        if raw.ndim != 2 or raw.shape != (self.channels, self.grid.n_points):
            raise ValueError(
                f"raw must have shape ({self.channels}, {self.grid.n_points}), got {raw.shape}"
            )
        if raw.flags.writeable:
            raw = raw.copy()
            raw.flags.writeable = False
        object.__setattr__(self, "raw", raw)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @cached_property
    def values(self) -> np.ndarray:
        v = self.raw - self.raw[:, :1]
        v.flags.writeable = False
        return v

    @cached_property
    def increments(self) -> np.ndarray:
        """Per-step increments, shape (M, n_steps)."""
        d = np.diff(self.raw, axis=1)
        d.flags.writeable = False
        return d

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    def window(self, a: float, b: float) -> "BrownianPath":
        """Sub-path restricted to ``[a, b]`` (same raw data, no re-sampling)."""
        try:
            i, j = self.grid.index_of(a), self.grid.index_of(b)
        except OffGrid as exc:
            raise WindowExceeded(str(exc)) from exc
        if j <= i:
            raise ValueError("window must have positive length")
        grid = TimeGrid(self.grid.times[i], self.grid.dt, j - i)
        return BrownianPath(grid, self.channels, self.raw[:, i : j + 1], self.seed)

    def covers(self, a: float, b: float) -> bool:
        return self.grid.contains(a) and self.grid.contains(b)

    def require(self, a: float, b: float) -> None:
        if not self.covers(a, b):
            raise WindowExceeded(
                f"path window [{self.grid.t_start}, {self.grid.t_end}] does not cover [{a}, {b}]"
            )


def _normal_stream(seed: int, channel: int, direction: int, count: int) -> np.ndarray:
    if count <= 0:
        return np.empty(0)
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(channel), int(direction)))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(count)


def sample_path(grid: TimeGrid, channels: int, seed: int) -> BrownianPath:
    """Sample a Brownian path following the module's stream-splitting rule."""
    if channels < 0:
        raise ValueError("channels must be non-negative")
    n = grid.n_steps
    k0 = grid.offset_steps()
    if k0 is None:
        k0 = 0
    k1 = k0 + n
    z = np.empty((channels, n))
    for c in range(channels):
        fwd = _normal_stream(seed, c, 0, max(k1, 0))
        bwd = _normal_stream(seed, c, 1, max(-k0, 0))
        steps = np.arange(k0, k1)
        neg = steps < 0
        z[c, neg] = bwd[-steps[neg] - 1]
        z[c, ~neg] = fwd[steps[~neg]]
    raw = np.zeros((channels, n + 1))
    np.cumsum(np.sqrt(grid.dt) * z, axis=1, out=raw[:, 1:])
    return BrownianPath(grid, channels, raw, int(seed))


def zero_path(grid: TimeGrid, channels: int) -> BrownianPath:
    return BrownianPath(grid, channels, np.zeros((channels, grid.n_points)), None)


def shift(path: BrownianPath, s: float) -> BrownianPath:
    """The shifted path t -> W(t+s) - W(s), restricted to the overlap of both windows."""
    g = path.grid
    k = g.steps_in(s)
    if abs(k) >= g.n_steps:
        raise WindowExceeded(f"shift {s} leaves no overlap with a window of length {g.n_steps * g.dt}")
    if k == 0:
        return path
    if k > 0:
        grid = TimeGrid(g.t_start, g.dt, g.n_steps - k)
        raw = path.raw[:, k:]
    else:
        grid = TimeGrid(g.times[-k], g.dt, g.n_steps + k)
        raw = path.raw[:, : g.n_points + k]
    return BrownianPath(grid, path.channels, raw, path.seed)


def increment(path: BrownianPath, s: float, t: float) -> np.ndarray:
    if t < s - _INDEX_TOL * path.grid.dt:
        raise ValueError("increment requires s <= t")
    i, j = path.grid.index_of(s), path.grid.index_of(t)
    return path.raw[:, j] - path.raw[:, i]


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    """Every ``factor``-th grid point of ``path``: the same Brownian path on a coarser grid."""
    factor = int(factor)
    if factor < 1 or path.grid.n_steps % factor:
        raise ValueError("factor must divide the number of steps")
    grid = TimeGrid(path.grid.t_start, path.grid.dt * factor, path.grid.n_steps // factor)
    return BrownianPath(grid, path.channels, path.raw[:, ::factor], path.seed)


def cameron_martin_shift(path: BrownianPath, channel: int, r1: float, r2: float, eps: float) -> BrownianPath:
    """Path plus ``eps`` times the primitive of the indicator of ``[r1, r2]`` on one channel."""
    t = path.times
    bump = np.clip(t - r1, 0.0, max(r2 - r1, 0.0))
    raw = np.array(path.raw, copy=True)
    raw[channel] += eps * bump
    return BrownianPath(path.grid, path.channels, raw, path.seed)


def path_to_csv(path: BrownianPath) -> str:
    header = "t," + ",".join(f"W{k + 1}" for k in range(path.channels))
    data = np.column_stack([path.times, path.values.T])
    buf = io.StringIO()
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=header, comments="")
    return buf.getvalue()


def write_path_csv(path: BrownianPath, filename) -> None:
    with open(filename, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(path_to_csv(path))


def read_path_csv(filename, seed: int | None = None) -> BrownianPath:
    with open(filename, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise ValueError("path CSV must start with a 't' column")
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1)
    grid = TimeGrid(t[0], dt, len(t) - 1)
    return BrownianPath(grid, len(header) - 1, data[:, 1:].T.copy(), seed)
