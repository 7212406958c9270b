"""Random time change reducing a state-dependent fast diffusion to the unit case.

For ``dX = eps^-1 phi(X, Y) dW1`` with ``phi = psi1(y) + psi2(x, y)`` the
clock ``s(t) = int_0^t phi(X(u), Y(u))^2 du`` turns ``eps X`` into a Brownian
motion.  On the new clock the slow equation has coefficients ``b2 / phi^2``
and ``sigma / phi``; :func:`transformed_coefficients` builds that set.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet, l1_norm_envelope
from .deterministic import solve_ode
from .paths import TimeGrid, ensemble_seeds, map_paths, write_table_csv
from .report import VerificationReport
from .sde import pair_blocks
from .stats import loglog_fit

__all__ = [
    "TimeChange",
    "compute_time_change",
    "transformed_coefficients",
    "verify_timechange_limit",
    "cumulative_trapezoid",
]


def cumulative_trapezoid(g: np.ndarray, h: float, start=0.0) -> np.ndarray:
    """``s_0 = start``, ``s_{k+1} = s_k + h (g_k + g_{k+1}) / 2`` along the last axis."""
    g = np.asarray(g, dtype=float)
    out = np.empty(g.shape)
    out[..., 0] = np.asarray(start, dtype=float)
    out[..., 1:] = 0.5 * h * (g[..., 1:] + g[..., :-1])
    return np.cumsum(out, axis=-1)


@dataclass(frozen=True)
class TimeChange:
    """Clock ``s(t_k)`` on ``grid`` and its piecewise-linear inverse.

    ``slope_ok`` records whether every per-step slope lies in
    ``[c1^2 (1 - tol), c2^2 (1 + tol)]``.
    """

    grid: TimeGrid
    s_of_t: np.ndarray
    c1: float
    c2: float
    min_slope: float
    max_slope: float
    slope_ok: bool

    def t_of_s(self, s):
        """Inverse clock by monotone linear interpolation (exact at the nodes)."""
        return np.interp(s, self.s_of_t, self.grid.nodes)

    def to_csv(self, fh=None, comments: dict | None = None):
        return write_table_csv(fh, ["t", "s"], np.column_stack([self.grid.nodes, self.s_of_t]), comments)


def compute_time_change(traj, cs: CoefficientSet, tol: float = 1e-9) -> TimeChange:
    """Trapezoidal clock ``s(t) = int (psi1(Y) + psi2(X, Y))^2 du`` along a coupled trajectory."""
    g = cs.fast_diffusion(traj.X.values[:, 0], traj.Y.values) ** 2
    s = cumulative_trapezoid(g, traj.grid.h)
    slopes = np.diff(s) / traj.grid.h
    lo, hi = float(slopes.min()), float(slopes.max())
    ok = lo >= cs.c1**2 * (1 - tol) and hi <= cs.c2**2 * (1 + tol) and bool(np.all(np.diff(s) > 0))
    s.setflags(write=False)
    return TimeChange(traj.grid, s, cs.c1, cs.c2, lo, hi, ok)


def transformed_coefficients(cs: CoefficientSet) -> CoefficientSet:
    """Coefficients on the new clock: ``b2 / phi^2``, ``sigma / phi``, unit fast diffusion.

    Both envelopes (``b_hat`` and the squared diffusion envelope) are divided
    by ``c1^2``, a valid domination since ``phi >= c1``.  Lipschitz constants
    of the quotients are not tracked.

    Raises
    ------
    ValueError
        If the diffusion envelope is not integrable.
    """
    c1 = cs.c1
    if not c1 > 0:
        raise ValueError("psi1 + psi2 must be bounded below by a positive constant")
    l1_norm_envelope(cs, "sigma_hat_sq")
    phi = cs.fast_diffusion
    b2, sig, bh, sh = cs.b2, cs.sigma, cs.b_hat, cs.sigma_hat_sq

    def b2_new(x, y):
        return b2(x, y) / (phi(x, y) ** 2)[..., None]

    def sigma_new(x, y):
        return sig(x, y) / phi(x, y)[..., None, None]

    scale = lambda v: None if v is None else v / c1**2  # noqa: E731
    return CoefficientSet(
        dim=cs.dim,
        noise_dim=cs.noise_dim,
        b1=cs.b1,
        Db1=cs.Db1,
        b2=None if cs.b2_zero else b2_new,
        sigma=None if cs.sigma_zero else sigma_new,
        b_hat=lambda x: bh(x) / c1**2,
        sigma_hat_sq=lambda x: sh(x) / c1**2,
        lip_b1=cs.lip_b1,
        lip_b2=0.0 if cs.b2_zero else math.inf,
        lip_sigma=0.0 if cs.sigma_zero else math.inf,
        b_hat_l1=scale(cs.b_hat_l1),
        sigma_hat_sq_l1=scale(cs.sigma_hat_sq_l1),
        b1_bounded=cs.b1_bounded,
        name=f"{cs.name}:time_changed",
        params=dict(cs.params),
    )


def _sup_clock_gap(cs, eps, y0, grid, s0, seeds):
    p = len(seeds)
    h = grid.h
    gap = np.zeros(p)
    carry_s = np.zeros(p)
    for b in pair_blocks(cs, eps, y0, grid, seeds, general=True):
        # the carried value enters the cumulative sum first, exactly as in s0
        s = cumulative_trapezoid(cs.fast_diffusion(b.x, b.y) ** 2, h, carry_s)
        k0, nb = b.k0, b.x.shape[1] - 1
        gap = np.maximum(gap, np.max(np.abs(s - s0[k0 : k0 + nb + 1]), axis=1))
        carry_s = s[:, -1].copy()
    return gap


def verify_timechange_limit(
    cs: CoefficientSet,
    ode,
    eps_schedule,
    n_paths: int,
    master_seed: int = 0,
    T: float | None = None,
    threads: int | None = None,
) -> VerificationReport:
    """Monte Carlo ``E sup_t |s_eps(t) - s0(t)|^2`` along the schedule.

    ``s0(t) = int_0^t psi1(y(u))^2 du``.  For every ``eps`` the pair is
    simulated on ``eps_schedule.grid(eps, T)`` starting from ``ode.y0``
    (``T`` defaults to the end of ``ode.grid``).  The report checks that the
    estimates decrease along the schedule; identically zero discrepancies
    (constant fast diffusion) pass trivially.
    """
    t_start = time.perf_counter()
    T = ode.grid.t_end if T is None else float(T)
    est, se, sizes = [], [], []
    for i, eps in enumerate(eps_schedule):
        grid = eps_schedule.grid(eps, T)
        y = solve_ode(cs, ode.y0, grid).y
        s0 = cumulative_trapezoid(np.asarray(cs.psi1(y), dtype=float) ** 2, grid.h)
        seeds = ensemble_seeds(master_seed, n_paths, (i,))
        gap = map_paths(lambda ch: _sup_clock_gap(cs, eps, ode.y0, grid, s0, ch), seeds, threads)
        sq = gap**2
        est.append(float(sq.mean()))
        se.append(float(sq.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan)
        sizes.append(grid.n_steps)
    est_a = np.asarray(est)
    degenerate = bool(np.all(est_a <= 1e-20))
    checks = {"monotone_decrease": degenerate or bool(np.all(np.diff(est_a) < 0))}
    slope = ci = None
    if not degenerate and np.all(est_a > 0) and len(est_a) >= 2:
        slope, ci = loglog_fit(np.asarray(eps_schedule.values), est_a)
    details = {"degenerate": degenerate, "b1_bounded": cs.b1_bounded, "n_steps": sizes}
    return VerificationReport(
        name="timechange_limit",
        params={"entry": cs.name, "eps": list(eps_schedule.values), "T": T, "n_paths": n_paths,
                "h_ref": eps_schedule.h_ref},
        estimates=est,
        se=se,
        slope=slope,
        ci=ci,
        checks=checks,
        details=details,
        provenance={"master_seed": master_seed},
        runtime=time.perf_counter() - t_start,
    )
