"""The unperturbed flow and the deterministic ingredients of the limit.

* :func:`solve_ode` integrates ``y' = b1(y)`` with classical RK4.
* :func:`fundamental_matrix` solves ``d/dt Phi(t, s) = Db1(y(t)) Phi(t, s)``,
  ``Phi(s, s) = I``.  This is the matrix that propagates forcing increments in
  the variation of parameters formula; it reduces to
  ``exp(int_s^t Db1(y(r)) dr)`` only when the generators commute.
* :func:`diffusion_kernel` computes ``A(s) = int_R sigma sigma^T(x, y(s)) dx``
  and its principal square root.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .coefficients import CoefficientSet
from .errors import BlowUpError, IntegrationError, NumericalDegeneracyError
from .paths import TimeGrid, write_table_csv

__all__ = [
    "OdeSolution",
    "FundamentalMatrix",
    "DiffusionKernel",
    "QuadratureSpec",
    "solve_ode",
    "fundamental_matrix",
    "diffusion_kernel",
    "drift_integral",
    "integrate_over_x",
    "truncation_radius",
    "psd_sqrt",
]


@dataclass(frozen=True)
class OdeSolution:
    grid: TimeGrid
    y: np.ndarray  # (n_nodes, d)
    method: str = "rk4"

    @property
    def y0(self) -> np.ndarray:
        return self.y[0]

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    def residual(self, cs: CoefficientSet) -> float:
        """Max deviation from ``y(t) = y0 + int_0^t b1(y(s)) ds`` (trapezoid rule)."""
        f = cs.b1(self.y)
        integral = np.concatenate(
            [np.zeros((1, self.dim)), np.cumsum(0.5 * self.grid.h * (f[1:] + f[:-1]), axis=0)]
        )
        return float(np.max(np.abs(self.y - self.y0 - integral)))


def solve_ode(cs: CoefficientSet, y0, grid: TimeGrid) -> OdeSolution:
    """RK4 solution of ``y' = b1(y)``, ``y(t0) = y0`` on ``grid``.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite.
    """
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if y0.shape != (cs.dim,):
        raise ValueError(f"y0 must have dimension {cs.dim}")
    h = grid.h
    y = np.empty((grid.n_nodes, cs.dim))
    y[0] = y0
    f = cs.b1
    cur = y0
    for k in range(grid.n_steps):
        k1 = f(cur)
        k2 = f(cur + 0.5 * h * k1)
        k3 = f(cur + 0.5 * h * k2)
        k4 = f(cur + h * k3)
        cur = cur + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(cur)):
            raise BlowUpError(k + 1)
        y[k + 1] = cur
    y.setflags(write=False)
    return OdeSolution(grid, y)


@dataclass(frozen=True)
class FundamentalMatrix:
    """``Phi(t_k, 0)`` at every node, with inverses and the generator values.

    ``Phi(t_k, t_j) = Phi(t_k, 0) Phi(t_j, 0)^{-1}`` for ``j <= k``.
    """

    grid: TimeGrid
    phi0: np.ndarray  # (n_nodes, d, d)
    phi0_inv: np.ndarray
    generator: np.ndarray  # Db1(y(t_k))

    def __call__(self, k: int, j: int) -> np.ndarray:
        if j > k:
            raise ValueError("Phi(t, s) is only defined for s <= t")
        if j == k:
            return np.eye(self.phi0.shape[1])
        return self.phi0[k] @ self.phi0_inv[j]

    def propagators(self, k: int) -> np.ndarray:
        """``Phi(t_k, t_j)`` for ``j = 0..k``, shape ``(k + 1, d, d)``."""
        out = np.einsum("ab,jbc->jac", self.phi0[k], self.phi0_inv[: k + 1])
        out[k] = np.eye(self.phi0.shape[1])
        return out


def fundamental_matrix(cs: CoefficientSet, ode: OdeSolution) -> FundamentalMatrix:
    """Matrix RK4 for ``Phi' = Db1(y(t)) Phi`` along ``ode``.

    Raises
    ------
    NumericalDegeneracyError
        If some ``Phi(t_k, 0)`` is numerically singular.
    """
    grid, y = ode.grid, ode.y
    d, h = ode.dim, grid.h
    f, D = cs.b1, cs.Db1
    phi = np.empty((grid.n_nodes, d, d))
    gen = np.asarray(D(y), dtype=float).copy()
    cur = np.eye(d)
    phi[0] = cur
    for k in range(grid.n_steps):
        yk = y[k]
        k1 = f(yk)
        k2 = f(yk + 0.5 * h * k1)
        k3 = f(yk + 0.5 * h * k2)
        K1 = gen[k] @ cur
        K2 = D(yk + 0.5 * h * k1) @ (cur + 0.5 * h * K1)
        K3 = D(yk + 0.5 * h * k2) @ (cur + 0.5 * h * K2)
        K4 = D(yk + h * k3) @ (cur + h * K3)
        cur = cur + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        phi[k + 1] = cur
    if not np.all(np.isfinite(phi)):
        raise NumericalDegeneracyError("fundamental matrix became non-finite")
    cond = np.linalg.cond(phi)
    if np.any(~np.isfinite(cond)) or np.max(cond) > 1e12:
        raise NumericalDegeneracyError(
            f"Phi(t, 0) is numerically singular (condition number {np.max(cond):.3g})"
        )
    inv = np.linalg.inv(phi)
    for a in (phi, inv, gen):
        a.setflags(write=False)
    return FundamentalMatrix(grid, phi, inv, gen)


# -- spatial integrals -----------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for integrals over the fast variable ``x``.

    The real line is truncated to ``[-X, X]`` where the envelope's tail mass
    falls below ``tail_tol``; the truncated integral is computed with adaptive
    Gauss-Kronrod quadrature to ``epsrel``.
    """

    tail_tol: float = 1e-10
    epsrel: float = 1e-10
    epsabs: float = 1e-13
    x_max: float = 1e4


def _tail_mass(env, X: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        right = integrate.quad(lambda t: float(env(np.float64(t))), X, np.inf, limit=200)[0]
        left = integrate.quad(lambda t: float(env(np.float64(t))), -np.inf, -X, limit=200)[0]
    return abs(right) + abs(left)


def truncation_radius(env, spec: QuadratureSpec = QuadratureSpec()) -> float:
    """Smallest ``X = 2^k`` with envelope tail mass outside ``[-X, X]`` below tolerance."""
    X = 1.0
    while _tail_mass(env, X) > spec.tail_tol:
        X *= 2.0
        if X > spec.x_max:
            raise IntegrationError("envelope tail mass does not decay; is it integrable?")
    return X


def integrate_over_x(F, env, spec: QuadratureSpec | None = None) -> np.ndarray:
    """``int_R F(x) dx`` for an array-valued ``F`` dominated by ``env``."""
    spec = spec or QuadratureSpec()
    X = truncation_radius(env, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            res = integrate.quad_vec(F, -X, X, epsrel=spec.epsrel, epsabs=spec.epsabs,
                                     norm="max", limit=2000)
        except integrate.IntegrationWarning as exc:
            raise IntegrationError(str(exc)) from None
    val, err = res[0], res[1]
    if not np.all(np.isfinite(val)):
        raise IntegrationError("spatial integral is not finite")
    return np.asarray(val)


def psd_sqrt(A, tol: float = 1e-10) -> np.ndarray:
    """Principal square root of symmetric PSD matrices (stacked on leading axes).

    Eigenvalues in ``[-tol * scale, 0)`` are clamped to zero; more negative
    eigenvalues raise ``ValueError``.
    """
    A = np.asarray(A, dtype=float)
    S = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, V = np.linalg.eigh(S)
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1, keepdims=True))
    if np.any(w < -tol * scale):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(w), V)


@dataclass(frozen=True)
class DiffusionKernel:
    grid: TimeGrid
    A: np.ndarray  # (n_nodes, d, d)
    sqrtA: np.ndarray

    def to_csv(self, fh=None, comments: dict | None = None):
        d = self.A.shape[1]
        cols = ["t"] + [f"A{i}{j}" for i in range(d) for j in range(d)]
        cols += [f"sqrtA{i}{j}" for i in range(d) for j in range(d)]
        n = self.grid.n_nodes
        table = np.column_stack([self.grid.nodes, self.A.reshape(n, -1), self.sqrtA.reshape(n, -1)])
        return write_table_csv(fh, cols, table, comments)


def diffusion_kernel(
    cs: CoefficientSet, ode: OdeSolution, x_quad: QuadratureSpec | None = None
) -> DiffusionKernel:
    """``A(t_k) = int sigma sigma^T(x, y(t_k)) dx`` and ``sqrt(A(t_k))`` at every node."""
    y = ode.y
    n, d = y.shape
    if cs.sigma_zero:
        A = np.zeros((n, d, d))
    else:
        def F(x):
            s = cs.sigma(np.full(n, x), y)
            return np.einsum("nir,njr->nij", s, s)

        A = integrate_over_x(F, cs.sigma_hat_sq, x_quad)
        A = 0.5 * (A + np.swapaxes(A, 1, 2))
    root = psd_sqrt(A)
    A.setflags(write=False)
    root.setflags(write=False)
    return DiffusionKernel(ode.grid, A, root)


def drift_integral(cs: CoefficientSet, ode: OdeSolution, x_quad: QuadratureSpec | None = None) -> np.ndarray:
    """``B(t_k) = int b2(x, y(t_k)) dx`` at every node, shape ``(n_nodes, d)``."""
    y = ode.y
    n, d = y.shape
    if cs.b2_zero:
        return np.zeros((n, d))
    return integrate_over_x(lambda x: cs.b2(np.full(n, x), y), cs.b_hat, x_quad)
