"""The limit objects: the fractional kinetic process and the limit deviations.

``V(t) = W2(L(t, 0))`` is a Brownian motion ``W2`` run on the clock given by
the local time at 0 of an independent Brownian motion ``W1``.  It is built
exactly as defined: ``W1`` is simulated on a fine grid of step ``h_inner``,
its occupation local time is read off at the outer nodes, and ``W2`` is
sampled at those clock values (Gaussian increments with variance ``dL``).
Consequently ``V`` is exactly constant wherever ``L`` is.

The limit deviation solves ``dz = Db1(y) z dt + sqrt(A) dV``, ``z(0) = 0``.
Two constructions are provided and cross-checked:

``variation_of_parameters``
    ``z(t_k) = sum_{j<k} Phi(t_k, t_j) sqrt(A(t_j)) dV_j``
``integral_equation``
    ``z_{k+1} = z_k + Db1(y(t_k)) z_k h + sqrt(A(t_j)) dV_k``

All Stieltjes sums are forward (left endpoint).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .deterministic import (
    DiffusionKernel,
    FundamentalMatrix,
    OdeSolution,
    QuadratureSpec,
    diffusion_kernel,
    drift_integral,
    fundamental_matrix,
)
from .localtime import LocalTimeCurve
from .paths import BLOCK, GaussianIncrements, SamplePath, SeedSpec, TimeGrid, ensemble_seeds, map_paths, write_table_csv
from .timechange import transformed_coefficients

__all__ = [
    "FractionalKineticPath",
    "LimitDeviationPath",
    "sample_V",
    "resample_V",
    "integrate_against_V",
    "integrate_against_dL",
    "sample_zeta0",
    "sample_zeta_tilde0",
    "sample_corollary_pair",
    "V_ensemble",
    "zeta0_ensemble",
    "zeta_tilde0_ensemble",
    "corollary_ensemble",
    "inner_step",
]

CONSTRUCTIONS = ("variation_of_parameters", "integral_equation")


@dataclass(frozen=True)
class FractionalKineticPath:
    """``V`` on ``grid`` together with the objects it is built from.

    ``L`` is the local time at 0 of ``w1`` (outer-grid values), ``w1_fine``
    the fine-grid driving path when it was kept, and ``seed`` the stream
    (``seed.child(0)`` drives ``W1``, ``seed.child(1)`` drives ``W2``).
    """

    grid: TimeGrid
    V: np.ndarray  # (n_nodes, d)
    L: LocalTimeCurve
    w1: np.ndarray  # (n_nodes,)
    h_inner: float
    seed: SeedSpec | None = None
    w1_fine: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.V, axis=0)

    def to_csv(self, fh=None, comments: dict | None = None):
        cols = ["t"] + [f"V{i + 1}" for i in range(self.dim)] + ["L", "W1"]
        table = np.column_stack([self.grid.nodes, self.V, self.L.L, self.w1])
        return write_table_csv(fh, cols, table, {"h_inner": self.h_inner, **(comments or {})})


@dataclass(frozen=True)
class LimitDeviationPath:
    grid: TimeGrid
    zeta: np.ndarray  # (n_nodes, d)
    construction: str
    L: np.ndarray | None = None
    alternate: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.zeta.shape[1]

    @property
    def construction_gap(self) -> float:
        """Sup-norm distance to the other construction (``nan`` if not computed)."""
        if self.alternate is None:
            return math.nan
        return float(np.max(np.abs(self.zeta - self.alternate)))

    def to_csv(self, fh=None, comments: dict | None = None):
        cols = ["t"] + [f"zeta{i + 1}" for i in range(self.dim)]
        parts = [self.grid.nodes, self.zeta]
        if self.L is not None:
            cols.append("L")
            parts.append(self.L)
        return write_table_csv(fh, cols, np.column_stack(parts),
                               {"construction": self.construction, **(comments or {})})


# -- fine-grid local time of the driving Brownian motion --------------------


def inner_step(grid: TimeGrid, h_inner: float | None) -> tuple[int, float]:
    """Refinement factor ``m`` and fine step ``grid.h / m`` for a requested ``h_inner``."""
    if h_inner is None:
        h_inner = grid.h / 10.0
    if h_inner <= 0 or h_inner > grid.h * (1 + 1e-12):
        raise ValueError("h_inner must lie in (0, grid step]")
    m = int(round(grid.h / h_inner))
    if abs(m * h_inner - grid.h) > 1e-9 * grid.h:
        raise ValueError(f"h_inner={h_inner} does not divide the grid step {grid.h}")
    return m, grid.h / m


def _snap(u: np.ndarray):
    """Split fractional fine-grid positions into integer base and fraction."""
    r = np.rint(u)
    exact = np.abs(u - r) <= 1e-9 * np.maximum(1.0, np.abs(u))
    u = np.where(exact, r, u)
    base = np.floor(u).astype(np.int64)
    return base, u - base


def _fine_clock(seeds, h_fine: float, pos: np.ndarray, keep: bool = False, block: int = BLOCK):
    """Occupation local time at 0 and values of fine Brownian paths at ``pos``.

    ``pos`` holds nondecreasing positions in units of the fine step; values at
    non-integer positions are linearly interpolated.  Returns ``(L, W, fine)``
    with ``L, W`` of shape ``(p, len(pos))``.
    """
    p = len(seeds)
    base, frac = _snap(np.asarray(pos, dtype=float))
    n_fine = int(base[-1] + (frac[-1] > 0))
    delta = math.sqrt(h_fine)
    scale = h_fine / (2.0 * delta)
    inc = GaussianIncrements(seeds, 1, h_fine)
    L = np.zeros((p, pos.size))
    W = np.zeros((p, pos.size))
    fine = np.zeros((p, n_fine + 1)) if keep else None
    cw = np.zeros(p)
    cc = np.zeros(p)
    j0 = 0
    while j0 < n_fine:
        nb = min(block, n_fine - j0)
        w = np.empty((p, nb + 1))
        w[:, 0] = cw
        w[:, 1:] = inc.draw(nb)[..., 0]
        np.cumsum(w, axis=1, out=w)
        c = np.empty((p, nb + 1))
        c[:, 0] = cc
        c[:, 1:] = np.abs(w[:, :-1]) <= delta
        np.cumsum(c, axis=1, out=c)
        if keep:
            fine[:, j0 : j0 + nb + 1] = w
        sel = (base >= j0) & ((base < j0 + nb) | ((base == j0 + nb) & (frac == 0)))
        if sel.any():
            i, f = base[sel] - j0, frac[sel]
            i1 = np.minimum(i + 1, nb)
            L[:, sel] = (c[:, i] + f * (c[:, i1] - c[:, i])) * scale
            W[:, sel] = w[:, i] + f * (w[:, i1] - w[:, i])
        cw, cc = w[:, -1].copy(), c[:, -1].copy()
        j0 += nb
    return L, W, fine


def _V_from_L(L: np.ndarray, seeds, dim: int) -> np.ndarray:
    """``W2`` evaluated along the clock ``L`` (shape ``(p, n + 1)``)."""
    dL = np.diff(L, axis=1)
    N = GaussianIncrements(seeds, dim, 1.0).draw(dL.shape[1])
    V = np.zeros((L.shape[0], L.shape[1], dim))
    V[:, 1:] = np.sqrt(dL)[..., None] * N
    np.cumsum(V, axis=1, out=V)
    return V


def sample_V(grid: TimeGrid, dim: int, seed: SeedSpec, h_inner: float | None = None) -> FractionalKineticPath:
    """One path of ``V(t) = W2(L^{W1}(t, 0))`` on ``grid``.

    ``W1`` is simulated with step ``h_inner`` (default ``grid.h / 10``; it
    must divide ``grid.h``) and its local time is the occupation estimate
    with ``delta = sqrt(h_inner)``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    m, hf = inner_step(grid, h_inner)
    pos = np.arange(grid.n_nodes, dtype=float) * m
    L, W, fine = _fine_clock([seed.child(0)], hf, pos, keep=True)
    V = _V_from_L(L, [seed.child(1)], dim)[0]
    curve = LocalTimeCurve(grid, 0.0, L[0], "occupation", math.sqrt(hf))
    for a in (V, W[0], fine[0]):
        a.setflags(write=False)
    return FractionalKineticPath(grid, V, curve, W[0], hf, seed, fine[0])


def resample_V(V: FractionalKineticPath, seed: SeedSpec) -> FractionalKineticPath:
    """Same ``W1`` (and local time), fresh ``W2`` drawn from ``seed``."""
    new = _V_from_L(V.L.L[None, :], [seed], V.dim)[0]
    new.setflags(write=False)
    return FractionalKineticPath(V.grid, new, V.L, V.w1, V.h_inner, seed, V.w1_fine)


def _grid_len(arr, grid: TimeGrid, what: str) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.shape[0] == grid.n_nodes:
        a = a[:-1]
    elif a.shape[0] != grid.n_steps:
        raise ValueError(f"{what} has {a.shape[0]} entries; expected {grid.n_nodes} nodes of the grid")
    return a


def integrate_against_V(phi, V: FractionalKineticPath) -> np.ndarray:
    """Forward Stieltjes sum ``sum_k phi(t_k) (V(t_{k+1}) - V(t_k))``.

    ``phi`` is a sequence of ``d x d`` matrices (or scalars) on the grid of
    ``V``, given at all nodes or at the left endpoints only.
    """
    a = _grid_len(phi, V.grid, "phi")
    dV = V.increments
    if a.ndim == 1:
        return np.einsum("k,kd->d", a, dV)
    return np.einsum("kij,kj->i", a, dV)


def integrate_against_dL(g, L: LocalTimeCurve) -> np.ndarray:
    """Forward Stieltjes sum ``sum_k g(t_k) (L(t_{k+1}) - L(t_k))``."""
    a = _grid_len(g, L.grid, "g")
    return np.einsum("k...,k->...", a, np.diff(L.L))


# -- limit deviations -------------------------------------------------------


def _check_grids(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if not g.same_as(o.grid):
            raise ValueError("inputs live on different grids")
    return g


def _vop(Phi: FundamentalMatrix, forcing: np.ndarray) -> np.ndarray:
    """``z_k = Phi(t_k, 0) sum_{j<k} Phi(t_j, 0)^{-1} forcing_j`` for batched forcing ``(p, n, d)``."""
    p, n, d = forcing.shape
    S = np.zeros((p, n + 1, d))
    S[:, 1:] = np.einsum("kij,pkj->pki", Phi.phi0_inv[:-1], forcing)
    np.cumsum(S, axis=1, out=S)
    return np.einsum("kij,pkj->pki", Phi.phi0, S)


def _stepped(Phi: FundamentalMatrix, forcing: np.ndarray) -> np.ndarray:
    p, n, d = forcing.shape
    h = Phi.grid.h
    z = np.zeros((p, n + 1, d))
    cur = np.zeros((p, d))
    for k in range(n):
        cur = cur + h * (cur @ Phi.generator[k].T) + forcing[:, k]
        z[:, k + 1] = cur
    return z


def _kernel_forcing(kernel: DiffusionKernel, dV: np.ndarray) -> np.ndarray:
    return np.einsum("kij,pkj->pki", kernel.sqrtA[:-1], dV)


def _build(Phi, forcing, construction):
    if construction not in CONSTRUCTIONS:
        raise ValueError(f"construction must be one of {CONSTRUCTIONS}")
    a = _vop(Phi, forcing)
    b = _stepped(Phi, forcing)
    return (a, b) if construction == CONSTRUCTIONS[0] else (b, a)


def sample_zeta0(
    kernel: DiffusionKernel,
    Phi: FundamentalMatrix,
    V: FractionalKineticPath,
    construction: str = "variation_of_parameters",
) -> LimitDeviationPath:
    """Limit deviation driven by ``V``; the other construction is kept as ``alternate``.

    The two constructions differ by ``O(h + max|dV|)`` per path.
    """
    grid = _check_grids(V, kernel, Phi)
    if kernel.A.shape[1] != V.dim:
        raise ValueError("kernel and V have different dimensions")
    forcing = _kernel_forcing(kernel, V.increments[None])
    z, alt = _build(Phi, forcing, construction)
    return LimitDeviationPath(grid, z[0], construction, V.L.L, alt[0])


def _require_drift_only(cs: CoefficientSet):
    if not cs.sigma_zero:
        raise ValueError("the drift-driven limit requires sigma == 0")


def sample_zeta_tilde0(
    cs: CoefficientSet,
    Phi: FundamentalMatrix,
    ode: OdeSolution,
    L: LocalTimeCurve,
    construction: str = "variation_of_parameters",
    x_quad: QuadratureSpec | None = None,
) -> LimitDeviationPath:
    """Limit of ``(Y - y) / eps`` when ``sigma == 0``: ``sum Phi(t, t_k) B(t_k) dL_k``."""
    _require_drift_only(cs)
    grid = _check_grids(ode, Phi, L)
    B = drift_integral(cs, ode, x_quad)
    forcing = (B[:-1] * np.diff(L.L)[:, None])[None]
    z, alt = _build(Phi, forcing, construction)
    return LimitDeviationPath(grid, z[0], construction, L.L, alt[0])


def _corollary_core(cs, ode, Phi, kernel, seeds, h_inner):
    grid = ode.grid
    m, hf = inner_step(grid, h_inner)
    psi_sq = np.asarray(cs.psi1(ode.y), dtype=float) ** 2
    s0 = np.concatenate([[0.0], np.cumsum(0.5 * grid.h * (psi_sq[1:] + psi_sq[:-1]))])
    L, W, _ = _fine_clock([s.child(0) for s in seeds], hf, s0 / hf)
    V = _V_from_L(L, [s.child(1) for s in seeds], ode.dim)
    zeta = _vop(Phi, _kernel_forcing(kernel, np.diff(V, axis=1)))
    return s0, W, L, zeta


def _corollary_setup(cs, ode, grid, x_quad):
    if grid is not None and not grid.same_as(ode.grid):
        raise ValueError("grid must be the grid of the ODE solution")
    tcs = transformed_coefficients(cs)
    Phi = fundamental_matrix(cs, ode)
    kernel = diffusion_kernel(tcs, ode, x_quad)
    return Phi, kernel


def sample_corollary_pair(
    cs: CoefficientSet,
    ode: OdeSolution,
    grid: TimeGrid,
    seed: SeedSpec,
    h_inner: float | None = None,
    x_quad: QuadratureSpec | None = None,
) -> tuple[SamplePath, LimitDeviationPath]:
    """Limit pair ``(X0, zeta0)`` of the system with state-dependent fast diffusion.

    ``X0(t) = W(s0(t))`` with ``s0(t) = int_0^t psi1(y(u))^2 du``; the local
    time of ``X0`` at 0 is ``L^W(s0(t), 0)``, the driving process is
    ``W2(L^{X0}(t, 0))`` and the kernel is the square root of
    ``int sigma sigma^T / (psi1 + psi2)^2 dx``.  ``W`` is simulated with step
    ``grid.h / m`` (``m`` from ``h_inner``), so for ``psi1 == 1``, ``psi2 == 0``
    the output coincides with :func:`sample_V` followed by :func:`sample_zeta0`
    for the same seed.
    """
    Phi, kernel = _corollary_setup(cs, ode, grid, x_quad)
    s0, W, L, z = _corollary_core(cs, ode, Phi, kernel, [seed], h_inner)
    X0 = SamplePath(ode.grid, W[0], {"seed": f"{seed.master_seed}:{seed.stream_id}"})
    return X0, LimitDeviationPath(ode.grid, z[0], "variation_of_parameters", L[0])


# -- ensembles --------------------------------------------------------------


def V_ensemble(
    grid: TimeGrid,
    dim: int,
    n_paths: int,
    master_seed: int,
    h_inner: float | None = None,
    channel: tuple = (),
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """``(V, L)`` for ``n_paths`` paths, shapes ``(p, n_nodes, dim)`` and ``(p, n_nodes)``.

    Path ``k`` is identical to ``sample_V(grid, dim, SeedSpec(master_seed, k, channel), h_inner)``.
    """
    m, hf = inner_step(grid, h_inner)
    pos = np.arange(grid.n_nodes, dtype=float) * m

    def run(chunk):
        L, _, _ = _fine_clock([s.child(0) for s in chunk], hf, pos)
        return _V_from_L(L, [s.child(1) for s in chunk], dim), L

    return map_paths(run, ensemble_seeds(master_seed, n_paths, channel), threads)


def zeta0_ensemble(
    kernel: DiffusionKernel,
    Phi: FundamentalMatrix,
    n_paths: int,
    master_seed: int,
    h_inner: float | None = None,
    record=None,
    channel: tuple = (),
    threads: int | None = None,
) -> dict:
    """Limit deviations at the nodes in ``record`` (default: final node).

    Returns ``zeta`` of shape ``(p, m, d)`` and ``L`` of shape ``(p, m)``.
    """
    grid = _check_grids(kernel, Phi)
    d = kernel.A.shape[1]
    idx = np.array([grid.n_steps]) if record is None else np.unique(np.asarray(record, dtype=int))
    m, hf = inner_step(grid, h_inner)
    pos = np.arange(grid.n_nodes, dtype=float) * m

    def run(chunk):
        L, _, _ = _fine_clock([s.child(0) for s in chunk], hf, pos)
        V = _V_from_L(L, [s.child(1) for s in chunk], d)
        z = _vop(Phi, _kernel_forcing(kernel, np.diff(V, axis=1)))
        return z[:, idx], L[:, idx]

    z, L = map_paths(run, ensemble_seeds(master_seed, n_paths, channel), threads)
    return {"index": idx, "t": grid.nodes[idx], "zeta": z, "L": L}


def zeta_tilde0_ensemble(
    cs: CoefficientSet,
    Phi: FundamentalMatrix,
    ode: OdeSolution,
    n_paths: int,
    master_seed: int,
    h_inner: float | None = None,
    record=None,
    channel: tuple = (),
    threads: int | None = None,
    x_quad: QuadratureSpec | None = None,
) -> dict:
    """Drift-driven limit deviations at the nodes in ``record``; local time from ``W1`` streams."""
    _require_drift_only(cs)
    grid = _check_grids(ode, Phi)
    B = drift_integral(cs, ode, x_quad)
    idx = np.array([grid.n_steps]) if record is None else np.unique(np.asarray(record, dtype=int))
    m, hf = inner_step(grid, h_inner)
    pos = np.arange(grid.n_nodes, dtype=float) * m

    def run(chunk):
        L, _, _ = _fine_clock([s.child(0) for s in chunk], hf, pos)
        z = _vop(Phi, B[None, :-1] * np.diff(L, axis=1)[..., None])
        return z[:, idx], L[:, idx]

    z, L = map_paths(run, ensemble_seeds(master_seed, n_paths, channel), threads)
    return {"index": idx, "t": grid.nodes[idx], "zeta": z, "L": L}


def corollary_ensemble(
    cs: CoefficientSet,
    ode: OdeSolution,
    n_paths: int,
    master_seed: int,
    h_inner: float | None = None,
    record=None,
    channel: tuple = (),
    threads: int | None = None,
    x_quad: QuadratureSpec | None = None,
) -> dict:
    """Batched :func:`sample_corollary_pair`: ``X0``, ``L`` and ``zeta`` at the recorded nodes."""
    Phi, kernel = _corollary_setup(cs, ode, None, x_quad)
    grid = ode.grid
    idx = np.array([grid.n_steps]) if record is None else np.unique(np.asarray(record, dtype=int))

    def run(chunk):
        s0, W, L, z = _corollary_core(cs, ode, Phi, kernel, chunk, h_inner)
        return W[:, idx], L[:, idx], z[:, idx]

    X0, L, z = map_paths(run, ensemble_seeds(master_seed, n_paths, channel), threads)
    return {"index": idx, "t": grid.nodes[idx], "X0": X0, "L": L, "zeta": z}
