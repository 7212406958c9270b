"""Euler-Maruyama simulation of the prelimit processes.

Conventions shared by every simulator:

* the fast driver ``W1`` of a path with seed ``s`` is drawn from
  ``s.child(0)`` and the slow driver ``W2`` from ``s.child(1)``, so
  simulators called with the same seed are coupled through common noise;
* the fast state is advanced as ``x_{k+1} = x_k + (phi_k / eps) dW1_k``
  (``phi = 1`` for the unit case, where ``x = W1 / eps``), and the slow state
  as ``Y_{k+1} = Y_k + (b1(Y_k) + b2(x_k, Y_k)) h + sigma(x_k, Y_k) dW2_k``.

Coefficients vary on the ``O(eps)`` spatial scale of ``W1``, so the step
must be of order ``eps**2``; :class:`EpsilonSchedule` encodes the rule
``h <= h_ref * eps**2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .deterministic import OdeSolution
from .errors import BlowUpError
from .paths import (
    BLOCK,
    GaussianIncrements,
    SamplePath,
    SeedSpec,
    TimeGrid,
    ensemble_seeds,
    make_grid,
    map_paths,
)

__all__ = [
    "EpsilonSchedule",
    "CoupledTrajectory",
    "ResolutionWarning",
    "simulate_Y_unit_phi",
    "simulate_pair_general",
    "simulate_J",
    "simulate_Z",
    "deviation",
    "simulate_Y_ensemble",
    "pair_blocks",
    "fast_path",
]

DEFAULT_H_REF = 1e-2


class ResolutionWarning(UserWarning):
    """The time step is too coarse for the fast spatial scale ``eps``."""


@dataclass(frozen=True)
class EpsilonSchedule:
    """Decreasing scale parameters with the step rule ``h(eps) = h_ref * eps**2``."""

    values: tuple
    h_ref: float = DEFAULT_H_REF

    def __post_init__(self):
        v = tuple(float(e) for e in self.values)
        if not v or any(e <= 0 for e in v):
            raise ValueError("epsilon values must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("epsilon schedule must be strictly decreasing")
        if self.h_ref <= 0:
            raise ValueError("h_ref must be positive")
        object.__setattr__(self, "values", v)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def step(self, eps: float) -> float:
        return self.h_ref * eps * eps

    def grid(self, eps: float, t_end: float, t0: float = 0.0) -> TimeGrid:
        """Uniform grid on ``[t0, t_end]`` whose step does not exceed ``h(eps)``."""
        n = math.ceil((t_end - t0) / self.step(eps) - 1e-9)
        return make_grid(t0, t_end, max(n, 1))


def _check_resolution(grid: TimeGrid, eps: float, h_ref: float):
    if grid.h > h_ref * eps * eps * (1 + 1e-9):
        warnings.warn(
            f"step {grid.h:.3g} exceeds h_ref*eps^2 = {h_ref * eps * eps:.3g}; "
            "the fast coefficients are under-resolved",
            ResolutionWarning,
            stacklevel=3,
        )


@dataclass(frozen=True)
class _Block:
    k0: int
    x: np.ndarray  # (p, nb + 1) fast state
    y: np.ndarray  # (p, nb + 1, d) slow state
    dw2: np.ndarray | None  # (p, nb, r)


def pair_blocks(
    cs: CoefficientSet,
    eps: float,
    y0,
    grid: TimeGrid,
    seeds: Sequence[SeedSpec],
    *,
    general: bool = False,
    x0: float = 0.0,
    block: int = BLOCK,
) -> Iterator[_Block]:
    """Stream the Euler-Maruyama pair ``(x, Y)`` for a batch of paths.

    With ``general=False`` the fast state is ``x0 + W1 / eps`` (unit fast
    diffusion); otherwise it follows ``dX = eps^-1 (psi1(Y) + psi2(X, Y)) dW1``.
    Each yielded block holds nodes ``k0 .. k0 + nb``.
    """
    p, d, r, h = len(seeds), cs.dim, cs.noise_dim, grid.h
    inv_eps = 1.0 / eps
    inc1 = GaussianIncrements([s.child(0) for s in seeds], 1, h)
    inc2 = None if cs.sigma_zero else GaussianIncrements([s.child(1) for s in seeds], r, h)
    b1, b2, sig = cs.b1, cs.b2, cs.sigma
    use_b2 = not cs.b2_zero
    x = np.full(p, float(x0))
    Y = np.tile(np.asarray(y0, dtype=float).reshape(1, d), (p, 1))
    k0 = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k0 < grid.n_steps:
            nb = min(block, grid.n_steps - k0)
            dw1 = inc1.draw(nb)[..., 0]
            dw2 = inc2.draw(nb) if inc2 is not None else None
            xs = np.empty((p, nb + 1))
            ys = np.empty((p, nb + 1, d))
            xs[:, 0] = x
            ys[:, 0] = Y
            if not general:
                xs[:, 1:] = inv_eps * dw1
                np.cumsum(xs, axis=1, out=xs)
            for j in range(nb):
                xj = xs[:, j]
                drift = b1(Y)
                if use_b2:
                    drift = drift + b2(xj, Y)
                Ynew = Y + drift * h
                if dw2 is not None:
                    Ynew = Ynew + np.einsum("pdr,pr->pd", sig(xj, Y), dw2[:, j])
                if general:
                    xs[:, j + 1] = xj + (inv_eps * cs.fast_diffusion(xj, Y)) * dw1[:, j]
                Y = Ynew
                ys[:, j + 1] = Y
            tot = ys.sum(axis=(0, 2)) + xs.sum(axis=0)
            if not np.all(np.isfinite(tot)):
                raise BlowUpError(k0 + int(np.argmin(np.isfinite(tot))))
            yield _Block(k0, xs, ys, dw2)
            x = xs[:, -1].copy()
            k0 += nb


def _collect(cs, eps, y0, grid, seed, general, x0):
    X = np.empty(grid.n_nodes)
    Y = np.empty((grid.n_nodes, cs.dim))
    for b in pair_blocks(cs, eps, y0, grid, [seed], general=general, x0=x0):
        X[b.k0 : b.k0 + b.x.shape[1]] = b.x[0]
        Y[b.k0 : b.k0 + b.y.shape[1]] = b.y[0]
    return X, Y


def simulate_Y_unit_phi(
    cs: CoefficientSet, eps: float, y0, grid: TimeGrid, seed: SeedSpec, h_ref: float = DEFAULT_H_REF
) -> SamplePath:
    """Slow component of the system whose fast motion is ``W1 / eps``.

    Warns with :class:`ResolutionWarning` when ``grid.h > h_ref * eps**2``.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite.
    """
    _check_resolution(grid, eps, h_ref)
    _, Y = _collect(cs, eps, y0, grid, seed, False, 0.0)
    return SamplePath(grid, Y, {"eps": eps, "seed": f"{seed.master_seed}:{seed.stream_id}"})


@dataclass(frozen=True)
class CoupledTrajectory:
    grid: TimeGrid
    X: SamplePath
    Y: SamplePath
    eps: float
    seed: SeedSpec

    @property
    def seeds(self) -> tuple[SeedSpec, SeedSpec]:
        return self.seed.child(0), self.seed.child(1)


def simulate_pair_general(
    cs: CoefficientSet,
    eps: float,
    x0: float,
    y0,
    grid: TimeGrid,
    seed: SeedSpec,
    h_ref: float = DEFAULT_H_REF,
) -> CoupledTrajectory:
    """Joint Euler-Maruyama for the state-dependent fast diffusion system."""
    _check_resolution(grid, eps, h_ref)
    X, Y = _collect(cs, eps, y0, grid, seed, True, x0)
    meta = {"eps": eps, "seed": f"{seed.master_seed}:{seed.stream_id}"}
    return CoupledTrajectory(grid, SamplePath(grid, X, meta), SamplePath(grid, Y, meta), eps, seed)


def fast_path(eps: float, grid: TimeGrid, seed: SeedSpec) -> np.ndarray:
    """``W1 / eps`` at every node, accumulated exactly as the pair simulator does."""
    inc = GaussianIncrements([seed.child(0)], 1, grid.h)
    xs = np.empty(grid.n_nodes)
    xs[0] = 0.0
    xs[1:] = (1.0 / eps) * inc.draw(grid.n_steps)[0, :, 0]
    return np.cumsum(xs)


def simulate_J(
    cs: CoefficientSet, eps: float, ode: OdeSolution, grid: TimeGrid, seed: SeedSpec
) -> SamplePath:
    """``dJ = sigma(W1/eps, y(t)) dW2``, ``J(0) = 0``, with the slow argument frozen on ``y``."""
    if not ode.grid.same_as(grid):
        raise ValueError("ode must be computed on the simulation grid")
    d, r = cs.dim, cs.noise_dim
    J = np.zeros((grid.n_nodes, d))
    if not cs.sigma_zero:
        x = fast_path(eps, grid, seed)
        dw2 = GaussianIncrements([seed.child(1)], r, grid.h).draw(grid.n_steps)[0]
        dJ = np.einsum("kdr,kr->kd", cs.sigma(x[:-1], ode.y[:-1]), dw2)
        J[1:] = dJ
        np.cumsum(J, axis=0, out=J)
        if not np.all(np.isfinite(J)):
            raise BlowUpError(int(np.argmin(np.all(np.isfinite(J), axis=1))))
    return SamplePath(grid, J, {"eps": eps, "seed": f"{seed.master_seed}:{seed.stream_id}"})


def simulate_Z(cs: CoefficientSet, J: SamplePath, y0) -> SamplePath:
    """Explicit solution of ``Z(t) = y0 + int_0^t b1(Z) ds + J(t)``."""
    grid, h = J.grid, J.grid.h
    dJ = np.diff(J.values, axis=0)
    Z = np.empty_like(J.values)
    Z[0] = np.asarray(y0, dtype=float)
    cur = Z[0]
    for k in range(grid.n_steps):
        cur = cur + cs.b1(cur) * h + dJ[k]
        if not np.all(np.isfinite(cur)):
            raise BlowUpError(k + 1)
        Z[k + 1] = cur
    return SamplePath(grid, Z, dict(J.meta))


def deviation(Y: SamplePath, ode: OdeSolution, eps: float, order: str = "half") -> SamplePath:
    """``(Y - y) / eps**(1/2)`` (``order="half"``) or ``(Y - y) / eps`` (``order="one"``)."""
    if not Y.grid.same_as(ode.grid):
        raise ValueError("Y and the ODE solution live on different grids")
    scale = {"half": math.sqrt(eps), "one": eps}.get(order)
    if scale is None:
        raise ValueError(f"order must be 'half' or 'one', got {order!r}")
    return SamplePath(Y.grid, (Y.values - ode.y) / scale, {**Y.meta, "order": order})


def _record_index(grid: TimeGrid, record) -> np.ndarray:
    if record is None:
        return np.array([grid.n_steps])
    idx = np.unique(np.asarray(record, dtype=int))
    if idx.size == 0 or idx[0] < 0 or idx[-1] > grid.n_steps:
        raise ValueError("record indices out of range")
    return idx


def simulate_Y_ensemble(
    cs: CoefficientSet,
    eps: float,
    y0,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    record=None,
    *,
    general: bool = False,
    x0: float = 0.0,
    channel: tuple = (0,),
    threads: int | None = None,
) -> dict:
    """Simulate ``n_paths`` trajectories and keep the nodes listed in ``record``.

    Path ``k`` uses ``SeedSpec(master_seed, k, channel)``.  Returns a dict
    with ``index``, ``t``, ``X`` of shape ``(n_paths, m)`` and ``Y`` of shape
    ``(n_paths, m, d)``.
    """
    idx = _record_index(grid, record)
    seeds = ensemble_seeds(master_seed, n_paths, channel)

    def run(chunk):
        X = np.empty((len(chunk), idx.size))
        Y = np.empty((len(chunk), idx.size, cs.dim))
        if idx[0] == 0:
            X[:, 0] = x0
            Y[:, 0] = y0
        for b in pair_blocks(cs, eps, y0, grid, chunk, general=general, x0=x0):
            lo, hi = b.k0 + 1, b.k0 + b.x.shape[1] - 1
            sel = (idx >= lo) & (idx <= hi)
            if sel.any():
                X[:, sel] = b.x[:, idx[sel] - b.k0]
                Y[:, sel] = b.y[:, idx[sel] - b.k0]
        return X, Y

    X, Y = map_paths(run, seeds, threads)
    return {"index": idx, "t": grid.nodes[idx], "X": X, "Y": Y}
