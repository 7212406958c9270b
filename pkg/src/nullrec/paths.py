"""Time grids, seeded Gaussian increment streams and Brownian paths.

Every random quantity in the package is drawn from a stream identified by
``(master_seed, stream_id, channel)``.  A stream is a numpy ``PCG64``
generator seeded through ``SeedSequence(master_seed, spawn_key=(stream_id,
*channel))``, so a path is a pure function of its seed and never of the
order (or thread) in which an ensemble is generated.

Increments are produced in time blocks.  Drawing ``n`` then ``m`` normals from
a generator yields the same numbers as drawing ``n + m`` at once, which is
what lets the single-path functions and the streaming ensemble code agree
bit for bit.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "SamplePath",
    "SeedSpec",
    "TrajectoryEnsemble",
    "GaussianIncrements",
    "make_grid",
    "sample_brownian",
    "sample_ensemble",
    "brownian_blocks",
    "map_paths",
    "ensemble_seeds",
    "set_default_threads",
    "write_table_csv",
]

# Default block length (time steps) for streamed simulation.
BLOCK = 512

_default_threads = 1


def set_default_threads(n: int) -> None:
    """Cap the worker count used by ensemble generation (``--threads``)."""
    global _default_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _default_threads = int(n)


def get_default_threads() -> int:
    return _default_threads


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = s_0 < ... < s_n = t_end`` with step ``h``."""

    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > self.t0):
            raise ValueError(f"empty time span [{self.t0}, {self.t_end}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def h(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def node(self, k: int) -> float:
        if not 0 <= k <= self.n_steps:
            raise IndexError(k)
        return self.t0 + k * self.h

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.h

    def index_of(self, t: float) -> int:
        """Index of the node closest to ``t``."""
        k = int(round((t - self.t0) / self.h))
        if not 0 <= k <= self.n_steps:
            raise ValueError(f"time {t} outside grid [{self.t0}, {self.t_end}]")
        return k

    def refine(self, m: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.t_end, self.n_steps * int(m))

    def same_as(self, other: "TimeGrid") -> bool:
        return (self.t0, self.t_end, self.n_steps) == (other.t0, other.t_end, other.n_steps)


def make_grid(t0: float, t_end: float, n_steps: int) -> TimeGrid:
    """Uniform grid on ``[t0, t_end]`` with ``n_steps`` steps.

    Raises
    ------
    ValueError
        If ``t_end <= t0`` or ``n_steps < 1``.
    """
    return TimeGrid(float(t0), float(t_end), int(n_steps))


@dataclass(frozen=True)
class SeedSpec:
    """Identifier of an independent random stream.

    ``channel`` distinguishes several drivers belonging to the same path
    (for instance the fast and slow Brownian motions); use :meth:`child`.
    """

    master_seed: int
    stream_id: int = 0
    channel: tuple = ()

    def __post_init__(self):
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    def child(self, *channel: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.stream_id, self.channel + tuple(channel))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.stream_id, *self.channel)
        )
        return np.random.Generator(np.random.PCG64(ss))


def ensemble_seeds(master_seed: int, n_paths: int, channel: tuple = ()) -> list[SeedSpec]:
    """Seeds for paths ``0..n_paths-1`` (path ``k`` uses ``stream_id = k``)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    return [SeedSpec(int(master_seed), k, tuple(channel)) for k in range(n_paths)]


class GaussianIncrements:
    """Blockwise ``N(0, h)`` increments, one independent stream per path.

    ``draw(n)`` returns an array of shape ``(n_paths, n, dim)``.
    """

    def __init__(self, seeds: Sequence[SeedSpec], dim: int, h: float):
        self._gens = [s.generator() for s in seeds]
        self.dim = int(dim)
        self.scale = math.sqrt(h)

    def draw(self, n: int) -> np.ndarray:
        out = np.empty((len(self._gens), n, self.dim))
        for i, g in enumerate(self._gens):
            g.standard_normal(out=out[i])
        out *= self.scale
        return out


def brownian_blocks(
    grid: TimeGrid, seeds: Sequence[SeedSpec], dim: int = 1, block: int = BLOCK
) -> Iterator[tuple[int, np.ndarray]]:
    """Stream Brownian paths in time blocks.

    Yields ``(k0, w)`` where ``w`` has shape ``(n_paths, nb + 1, dim)`` and
    holds the values at nodes ``k0 .. k0 + nb`` (the first node repeats the
    last node of the previous block).
    """
    inc = GaussianIncrements(seeds, dim, grid.h)
    carry = np.zeros((len(seeds), dim))
    k0 = 0
    while k0 < grid.n_steps:
        nb = min(block, grid.n_steps - k0)
        w = np.empty((len(seeds), nb + 1, dim))
        w[:, 0] = carry
        w[:, 1:] = inc.draw(nb)
        # sequential summation from the carried value: identical to a
        # single cumsum over the whole path
        np.cumsum(w, axis=1, out=w)
        yield k0, w
        carry = w[:, -1].copy()
        k0 += nb


@dataclass(frozen=True)
class SamplePath:
    """Values of a ``dim``-dimensional trajectory at every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"path has {v.shape[0]} values for a grid with {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def component(self, i: int = 0) -> np.ndarray:
        return self.values[:, i]

    def to_csv(self, fh=None, comments: dict | None = None) -> str | None:
        cols = ["t"] + [f"x{i + 1}" for i in range(self.dim)]
        table = np.column_stack([self.t, self.values])
        return write_table_csv(fh, cols, table, {**self.meta, **(comments or {})})


@dataclass(frozen=True)
class TrajectoryEnsemble:
    grid: TimeGrid
    values: np.ndarray  # (n_paths, n_nodes, dim)
    seeds: tuple

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def path(self, k: int) -> SamplePath:
        return SamplePath(self.grid, self.values[k], {"seed": self.seeds[k]})


def _brownian_values(grid: TimeGrid, seeds: Sequence[SeedSpec], dim: int) -> np.ndarray:
    out = np.empty((len(seeds), grid.n_nodes, dim))
    for k0, w in brownian_blocks(grid, seeds, dim):
        out[:, k0 : k0 + w.shape[1]] = w
    return out


def sample_brownian(grid: TimeGrid, dim: int, seed: SeedSpec) -> SamplePath:
    """A ``dim``-dimensional Brownian path on ``grid`` started at 0."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    v = _brownian_values(grid, [seed], dim)[0]
    return SamplePath(grid, v, {"seed": f"{seed.master_seed}:{seed.stream_id}"})


def map_paths(
    fn: Callable[[list[SeedSpec]], object],
    seeds: Sequence[SeedSpec],
    threads: int | None = None,
    chunk: int = 1024,
):
    """Apply ``fn`` to chunks of seeds and concatenate results in path order.

    ``fn`` must return an array (or a tuple of arrays) whose leading axis
    indexes its chunk (one row per path, or one row of partial sums).  The
    chunk boundaries depend on ``chunk`` only, never on ``threads``, so any
    reduction over the rows is identical for every thread count.
    """
    threads = threads or _default_threads
    n = len(seeds)
    parts = [list(seeds[i : i + chunk]) for i in range(0, n, chunk)]
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(fn, parts))
    else:
        results = [fn(p) for p in parts]
    if isinstance(results[0], tuple):
        return tuple(np.concatenate(r, axis=0) for r in zip(*results))
    return np.concatenate(results, axis=0)


def sample_ensemble(
    grid: TimeGrid, dim: int, n_paths: int, master_seed: int, threads: int | None = None
) -> TrajectoryEnsemble:
    """``n_paths`` Brownian paths; path ``k`` uses ``SeedSpec(master_seed, k)``."""
    seeds = ensemble_seeds(master_seed, n_paths)
    values = map_paths(lambda s: _brownian_values(grid, s, dim), seeds, threads)
    return TrajectoryEnsemble(grid, values, tuple(seeds))


def write_table_csv(fh, columns: Sequence[str], table: np.ndarray, comments: dict | None = None):
    """Write a numeric table as CSV with ``# key=value`` header comments.

    Floats use 17 significant digits.  If ``fh`` is None the text is returned.
    """
    buf = io.StringIO()
    for k, v in (comments or {}).items():
        buf.write(f"# {k}={v}\n")
    buf.write(",".join(columns) + "\n")
    table = np.atleast_2d(np.asarray(table, dtype=float))
    np.savetxt(buf, table, fmt="%.17g", delimiter=",")
    text = buf.getvalue()
    if fh is None:
        return text
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh, "w", newline="") as f:
            f.write(text)
    else:
        fh.write(text)
    return None
