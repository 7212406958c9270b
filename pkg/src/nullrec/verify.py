"""Monte Carlo checks of the moment bounds, rates and limit laws.

Every check returns a :class:`~nullrec.report.VerificationReport` whose
``checks`` are pure functions of the estimates and the declared tolerances.
All randomness comes from ``master_seed``; the stream layout is

* prelimit paths for the ``i``-th entry of a schedule: ``SeedSpec(master_seed, k, (i,))``;
* limit samples: ``SeedSpec(master_seed, k, (LIMIT_CHANNEL,))``;
* slow-noise resamples for a fixed fast path: ``SeedSpec(master_seed, k, (RESAMPLE_CHANNEL, path_id))``.

Reductions over paths are done chunk by chunk in path order with chunk
boundaries that do not depend on the thread count, so reports are
reproducible bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .coefficients import CoefficientSet
from .deterministic import diffusion_kernel, fundamental_matrix, solve_ode
from .limit import sample_V, zeta0_ensemble, zeta_tilde0_ensemble
from .paths import (
    GaussianIncrements,
    SeedSpec,
    TimeGrid,
    brownian_blocks,
    ensemble_seeds,
    make_grid,
    map_paths,
    write_table_csv,
)
from .report import VerificationReport
from .sde import EpsilonSchedule, fast_path, pair_blocks, simulate_Y_ensemble
from .stats import EmpiricalLaw, loglog_fit, mean_se

__all__ = [
    "check_lemma_L1_bound",
    "check_lemma_rate",
    "check_reduction",
    "check_char_function",
    "check_weak_convergence",
    "oscillator_demo",
    "OscillatorDemo",
    "abs_normal_moment",
    "gaussian_psi",
    "LIMIT_CHANNEL",
    "RESAMPLE_CHANNEL",
]

LIMIT_CHANNEL = 1000
RESAMPLE_CHANNEL = 2000


def gaussian_psi():
    """``psi(x) = exp(-x^2)`` and its L1 norm ``sqrt(pi)``."""
    return (lambda x: np.exp(-np.square(x))), math.sqrt(math.pi)


def abs_normal_moment(p: float) -> float:
    """``E|N|^p`` for a standard normal ``N``; also ``E L(1, 0)^p`` for Brownian local time."""
    return 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)


def _provenance(master_seed, **kw):
    return {"master_seed": int(master_seed), **kw}


# -- additive functionals of the fast motion ---------------------------------


def _functional_moments(psi, eps, grid, idx, seeds, p):
    """Per-path ``eps^-1 int_0^t psi(W(r)/eps) dr`` (left Riemann sum) at nodes ``idx``."""
    h = grid.h
    n = len(seeds)
    out = np.zeros((n, idx.size))
    carry = np.zeros(n)
    inv = 1.0 / eps
    for k0, wb in brownian_blocks(grid, seeds, 1):
        w = wb[:, :, 0]
        nb = w.shape[1] - 1
        c = np.empty((n, nb + 1))
        c[:, 0] = carry
        c[:, 1:] = psi(inv * w[:, :-1]) * (h * inv)
        np.cumsum(c, axis=1, out=c)
        sel = (idx >= k0) & (idx <= k0 + nb)
        out[:, sel] = c[:, idx[sel] - k0]
        carry = c[:, -1].copy()
    return np.abs(out) ** p


def check_lemma_L1_bound(
    psi,
    psi_l1: float | None = None,
    t_values=(0.25, 0.5, 1.0, 2.0),
    p: float = 1,
    eps_schedule: EpsilonSchedule = EpsilonSchedule((0.2, 0.1, 0.05, 0.025)),
    n_paths: int = 4000,
    master_seed: int = 0,
    limit_t: float = 1.0,
    limit_tol: float = 0.05,
    slope_tol: float = 0.1,
    bound_factor: float = 1.25,
    threads: int | None = None,
) -> VerificationReport:
    """Moments ``E|eps^-1 int_0^t psi(W1(r)/eps) dr|^p`` along the schedule.

    Checks

    * ``uniform_bound``: every moment is at most
      ``bound_factor * E|N|^p * |psi|_1^p * t^(p/2)`` (the small-eps limit
      for nonnegative ``psi`` scaled by ``bound_factor``);
    * ``t_slope``: at the smallest eps the log-log slope in ``t`` is
      ``p/2 +- slope_tol * p``;
    * ``limit_value``: at the smallest eps and ``t = limit_t`` the moment is
      within ``limit_tol`` (relative) of ``|psi|_1^p E L(t, 0)^p``.

    ``psi`` must be vectorised, nonnegative and integrable; ``psi_l1``
    defaults to its quadrature norm.
    """
    t0 = time.perf_counter()
    t_values = tuple(sorted(float(t) for t in t_values))
    if psi_l1 is None:
        psi_l1 = integrate.quad(lambda x: float(psi(np.float64(x))), -np.inf, np.inf, limit=500)[0]
    psi_l1 = float(psi_l1)
    params = {"t": list(t_values), "p": p, "eps": list(eps_schedule.values), "n_paths": n_paths,
              "psi_l1": psi_l1, "h_ref": eps_schedule.h_ref}
    limit = np.array([psi_l1**p * abs_normal_moment(p) * t ** (p / 2) for t in t_values])
    if psi_l1 == 0.0:
        z = [[0.0] * len(t_values) for _ in eps_schedule]
        return VerificationReport("lemma_L1_bound", params, z, z, checks={"uniform_bound": True},
                                  skipped="psi vanishes: every moment is 0",
                                  provenance=_provenance(master_seed))
    T = t_values[-1]
    est, se = [], []
    for i, eps in enumerate(eps_schedule):
        grid = eps_schedule.grid(eps, T)
        idx = np.array([grid.index_of(t) for t in t_values])
        seeds = ensemble_seeds(master_seed, n_paths, (i,))
        m = map_paths(lambda ch: _functional_moments(psi, eps, grid, idx, ch, p), seeds, threads)
        mu, s = mean_se(m)
        est.append(mu.tolist())
        se.append(s.tolist())
    est_a = np.asarray(est)
    bound = bound_factor * limit
    slope, ci = loglog_fit(t_values, est_a[-1])
    k = t_values.index(limit_t) if limit_t in t_values else int(np.argmin(np.abs(np.subtract(t_values, limit_t))))
    rel = float(abs(est_a[-1, k] - limit[k]) / limit[k])
    checks = {
        "uniform_bound": bool(np.all(est_a <= bound[None, :])),
        "t_slope": abs(slope - p / 2) <= slope_tol * p,
        "limit_value": rel <= limit_tol,
    }
    details = {"limit": limit, "normalised": est_a / limit[None, :], "limit_rel_error": rel,
               "limit_t": t_values[k]}
    return VerificationReport("lemma_L1_bound", params, est, se, slope, ci,
                              {"limit": limit_tol, "slope": slope_tol, "bound_factor": bound_factor},
                              checks, details, _provenance(master_seed), time.perf_counter() - t0)


# -- prelimit moment rate ----------------------------------------------------


def _node_moment_sums(cs, eps, y0, grid, ode_y, seeds, p):
    """Row of per-node sums of ``|Y - y|^p`` and ``|Y - y|^(2p)`` over a chunk."""
    s1 = np.zeros(grid.n_nodes)
    s2 = np.zeros(grid.n_nodes)
    for b in pair_blocks(cs, eps, y0, grid, seeds):
        k0, nb = b.k0, b.x.shape[1] - 1
        dev = b.y[:, 1:] - ode_y[k0 + 1 : k0 + nb + 1]
        r = np.sum(dev * dev, axis=-1) ** (p / 2)
        s1[k0 + 1 : k0 + nb + 1] = r.sum(axis=0)
        s2[k0 + 1 : k0 + nb + 1] = (r * r).sum(axis=0)
    return s1[None], s2[None]


def check_lemma_rate(
    cs: CoefficientSet,
    y0,
    T: float,
    p: float = 2,
    eps_schedule: EpsilonSchedule = EpsilonSchedule((0.4, 0.2, 0.1, 0.05)),
    n_paths: int = 2000,
    master_seed: int = 0,
    slope_tol: float = 0.15,
    threads: int | None = None,
) -> VerificationReport:
    """Log-log slope of ``sup_t E|Y_eps(t) - y(t)|^p`` against ``eps``.

    The check asserts ``|slope - p/2| <= slope_tol * p/2``.  Entries without
    perturbation (``b2 == 0`` and ``sigma == 0``) are reported as skipped.
    """
    t0 = time.perf_counter()
    params = {"entry": cs.name, "y0": np.asarray(y0, dtype=float), "T": T, "p": p,
              "eps": list(eps_schedule.values), "n_paths": n_paths, "h_ref": eps_schedule.h_ref}
    if cs.b2_zero and cs.sigma_zero:
        return VerificationReport("lemma_rate", params, checks={"slope": True},
                                  skipped="no perturbation: moments sit at the discretisation floor",
                                  provenance=_provenance(master_seed))
    est, se, argmax = [], [], []
    for i, eps in enumerate(eps_schedule):
        grid = eps_schedule.grid(eps, T)
        y = solve_ode(cs, y0, grid).y
        seeds = ensemble_seeds(master_seed, n_paths, (i,))
        s1, s2 = map_paths(lambda ch: _node_moment_sums(cs, eps, y0, grid, y, ch, p), seeds, threads)
        m1 = s1.sum(axis=0) / n_paths
        m2 = s2.sum(axis=0) / n_paths
        k = int(np.argmax(m1))
        est.append(float(m1[k]))
        se.append(float(math.sqrt(max(m2[k] - m1[k] ** 2, 0.0) * n_paths / (n_paths - 1) / n_paths)))
        argmax.append(float(grid.node(k)))
    slope, ci = loglog_fit(eps_schedule.values, est)
    checks = {"slope": abs(slope - p / 2) <= slope_tol * p / 2}
    return VerificationReport("lemma_rate", params, est, se, slope, ci, {"slope": slope_tol * p / 2},
                              checks, {"expected_slope": p / 2, "sup_attained_at": argmax},
                              _provenance(master_seed), time.perf_counter() - t0)


# -- reduction to the frozen-slow-variable process ---------------------------


def _reduction_sups(cs, eps, y0, grid, ode_y, seeds):
    n, h = len(seeds), grid.h
    sup_yz = np.zeros(n)
    sup_yy = np.zeros(n)
    Z = np.tile(np.asarray(y0, dtype=float), (n, 1))
    b1, sig = cs.b1, cs.sigma
    for b in pair_blocks(cs, eps, y0, grid, seeds):
        k0, nb = b.k0, b.x.shape[1] - 1
        for j in range(nb):
            yk = np.broadcast_to(ode_y[k0 + j], Z.shape)
            Znew = Z + b1(Z) * h
            if b.dw2 is not None:
                Znew = Znew + np.einsum("pdr,pr->pd", sig(b.x[:, j], yk), b.dw2[:, j])
            Z = Znew
            sup_yz = np.maximum(sup_yz, np.sum((b.y[:, j + 1] - Z) ** 2, axis=-1))
        dev = b.y[:, 1:] - ode_y[k0 + 1 : k0 + nb + 1]
        sup_yy = np.maximum(sup_yy, np.max(np.sum(dev * dev, axis=-1), axis=1))
    return sup_yz, sup_yy


def check_reduction(
    cs: CoefficientSet,
    y0,
    T: float,
    eps_schedule: EpsilonSchedule = EpsilonSchedule((0.4, 0.2, 0.1, 0.05)),
    n_paths: int = 1000,
    master_seed: int = 0,
    threads: int | None = None,
) -> VerificationReport:
    """``eps^-1 E sup|Y - Z|^2`` with ``dZ = b1(Z) dt + sigma(W1/eps, y) dW2`` on common noise.

    Checks that this quantity decreases along the schedule (identically zero
    sequences pass) and that at the smallest eps it is below
    ``eps^-1 E sup|Y - y|^2``.
    """
    t0 = time.perf_counter()
    params = {"entry": cs.name, "y0": np.asarray(y0, dtype=float), "T": T,
              "eps": list(eps_schedule.values), "n_paths": n_paths, "h_ref": eps_schedule.h_ref}
    red, ref, red_se = [], [], []
    for i, eps in enumerate(eps_schedule):
        grid = eps_schedule.grid(eps, T)
        y = solve_ode(cs, y0, grid).y
        seeds = ensemble_seeds(master_seed, n_paths, (i,))
        yz, yy = map_paths(lambda ch: _reduction_sups(cs, eps, y0, grid, y, ch), seeds, threads)
        m, s = mean_se(yz / eps)
        red.append(float(m))
        red_se.append(float(s))
        ref.append(float(np.mean(yy) / eps))
    red_a = np.asarray(red)
    identical = bool(np.all(red_a == 0.0))
    checks = {
        "decreasing": identical or bool(np.all(np.diff(red_a) < 0)),
        "below_deviation": identical or red[-1] < ref[-1],
    }
    return VerificationReport("reduction", params, red, red_se, checks=checks,
                              details={"deviation_reference": ref, "identical": identical},
                              provenance=_provenance(master_seed), runtime=time.perf_counter() - t0)


# -- conditional characteristic function -------------------------------------


def check_char_function(
    cs: CoefficientSet,
    ode,
    eps: float,
    t: float,
    lambdas,
    n_W2_resamples: int = 10_000,
    master_seed: int = 0,
    path_id: int = 0,
    n_se: float = 3.0,
    threads: int | None = None,
) -> VerificationReport:
    """Conditional characteristic function of ``eps^-1/2 J(t)`` given the fast path.

    The fast path ``W1`` comes from ``SeedSpec(master_seed, path_id)`` on
    ``ode.grid``; ``W2`` is resampled ``n_W2_resamples`` times.  The exact
    value ``exp(-1/(2 eps) sum_k <sigma sigma^T(W1(t_k)/eps, y(t_k)) lam, lam> h)``
    is compared with the empirical mean of ``exp(i <lam, eps^-1/2 J(t)>)``;
    real and imaginary parts must agree within ``n_se`` standard errors.
    """
    t0 = time.perf_counter()
    grid = ode.grid
    lam = np.atleast_2d(np.asarray(lambdas, dtype=float))
    if lam.shape[1] != cs.dim:
        raise ValueError(f"lambdas must have dimension {cs.dim}")
    seed = SeedSpec(master_seed, path_id)
    kt = grid.index_of(t)
    x = fast_path(eps, grid, seed)[:kt]
    S = cs.sigma(x, ode.y[:kt])  # (kt, d, r)
    Q = (grid.h / eps) * np.einsum("kir,kjr->ij", S, S)
    exact = np.exp(-0.5 * np.einsum("li,ij,lj->l", lam, Q, lam))
    h, r = grid.h, cs.noise_dim
    scale = 1.0 / math.sqrt(eps)

    def run(chunk):
        dw = GaussianIncrements(chunk, r, h).draw(kt)
        return scale * np.einsum("kdr,pkr->pd", S, dw)

    seeds = ensemble_seeds(master_seed, n_W2_resamples, (RESAMPLE_CHANNEL, path_id))
    J = map_paths(run, seeds, threads, chunk=512)
    phase = J @ lam.T  # (n, n_lambda)
    re, re_se = mean_se(np.cos(phase))
    im, im_se = mean_se(np.sin(phase))
    ok_re = np.abs(re - exact) <= n_se * re_se + 1e-12
    ok_im = np.abs(im) <= n_se * im_se + 1e-12
    checks = {f"lambda_{i}": bool(a and b) for i, (a, b) in enumerate(zip(ok_re, ok_im))}
    details = {"lambdas": lam, "exact": exact, "real": re, "imag": im, "real_se": re_se,
               "imag_se": im_se, "conditional_covariance": Q}
    return VerificationReport(
        "char_function",
        {"entry": cs.name, "eps": eps, "t": t, "n_resamples": n_W2_resamples, "n_steps": grid.n_steps},
        re.tolist(), re_se.tolist(), tolerance={"n_se": n_se}, checks=checks, details=details,
        provenance=_provenance(master_seed, path_id=path_id), runtime=time.perf_counter() - t0,
    )


# -- weak convergence -------------------------------------------------------


def _limit_samples(cs, y0, T, idx_t, n_paths, master_seed, h_limit, h_inner, threads):
    n = max(1, int(round(T / h_limit)))
    grid = make_grid(0.0, T, n)
    ode = solve_ode(cs, y0, grid)
    Phi = fundamental_matrix(cs, ode)
    record = [grid.index_of(t) for t in idx_t]
    if cs.sigma_zero:
        out = zeta_tilde0_ensemble(cs, Phi, ode, n_paths, master_seed, h_inner, record,
                                   (LIMIT_CHANNEL,), threads)
    else:
        kernel = diffusion_kernel(cs, ode)
        out = zeta0_ensemble(kernel, Phi, n_paths, master_seed, h_inner, record, (LIMIT_CHANNEL,), threads)
    return out["zeta"]


def check_weak_convergence(
    cs: CoefficientSet,
    y0,
    T: float,
    probe_times=None,
    eps_schedule: EpsilonSchedule = EpsilonSchedule((0.4, 0.2, 0.1, 0.05)),
    n_paths: int = 10_000,
    master_seed: int = 0,
    ks_threshold: float = 0.05,
    second_moment: float | None = None,
    moment_tol: float = 0.10,
    h_limit: float = 1e-3,
    h_inner: float = 2.5e-5,
    threads: int | None = None,
) -> VerificationReport:
    """Two-sample KS distances between prelimit deviations and the limit law.

    With ``sigma != 0`` the prelimit deviation is ``(Y_eps - y) / sqrt(eps)``
    and the limit is driven by the fractional kinetic process; with
    ``sigma == 0`` it is ``(Y_eps - y) / eps`` against the local-time-driven
    limit.  The limit is sampled on a grid of step ``h_limit`` whose local
    times come from Brownian paths of step ``h_inner``.

    Checks

    * ``ks_smallest_eps``: every coordinatewise KS distance at the smallest
      eps and at every probe time is at most ``ks_threshold``;
    * ``ks_trend``: the largest KS distance decreases from the first to the
      last eps and its least-squares trend in ``log eps`` is increasing;
    * ``second_moment``: at the smallest eps and the last probe time,
      ``E|zeta_eps|^2`` is within ``moment_tol`` (relative) of
      ``second_moment`` (default: the limit sample's value).
    """
    t0 = time.perf_counter()
    probe_times = [float(T)] if probe_times is None else [float(t) for t in probe_times]
    params = {"entry": cs.name, "y0": np.asarray(y0, dtype=float), "T": T, "probe_times": probe_times,
              "eps": list(eps_schedule.values), "n_paths": n_paths, "h_ref": eps_schedule.h_ref,
              "h_limit": h_limit, "h_inner": h_inner}
    if cs.b2_zero and cs.sigma_zero:
        z = [0.0] * len(eps_schedule)
        return VerificationReport("weak_convergence", params, z, checks={"ks_smallest_eps": True},
                                  skipped="no perturbation: both laws are degenerate at 0",
                                  provenance=_provenance(master_seed))
    lim = _limit_samples(cs, y0, T, probe_times, n_paths, master_seed, h_limit, h_inner, threads)
    lim_laws = [EmpiricalLaw(lim[:, j], probe_times[j]) for j in range(len(probe_times))]
    ks_all, moments = [], []
    for i, eps in enumerate(eps_schedule):
        grid = eps_schedule.grid(eps, T)
        y = solve_ode(cs, y0, grid).y
        idx = [grid.index_of(t) for t in probe_times]
        ens = simulate_Y_ensemble(cs, eps, y0, grid, master_seed, n_paths, idx, channel=(i,), threads=threads)
        scale = eps if cs.sigma_zero else math.sqrt(eps)
        zeta = (ens["Y"] - y[ens["index"]][None]) / scale
        ks_all.append([EmpiricalLaw(zeta[:, j]).ks(lim_laws[j]).tolist() for j in range(len(probe_times))])
        moments.append(float(np.mean(np.sum(zeta[:, -1] ** 2, axis=-1))))
    ks_a = np.asarray(ks_all)  # (n_eps, n_probe, d)
    worst = ks_a.reshape(len(eps_schedule), -1).max(axis=1)
    trend = np.polyfit(np.log(eps_schedule.values), worst, 1)[0] if len(worst) > 1 else 0.0
    lim_moment = float(np.mean(np.sum(lim[:, -1] ** 2, axis=-1)))
    target = lim_moment if second_moment is None else float(second_moment)
    rel = abs(moments[-1] - target) / target if target > 0 else abs(moments[-1])
    checks = {
        "ks_smallest_eps": bool(np.all(ks_a[-1] <= ks_threshold)),
        "ks_trend": bool(len(worst) == 1 or (worst[-1] < worst[0] and trend > 0)),
        "second_moment": rel <= moment_tol,
    }
    details = {"ks": ks_a, "worst_ks": worst, "ks_strictly_decreasing": bool(np.all(np.diff(worst) < 0)),
               "ks_trend_slope": float(trend), "second_moment_prelimit": moments,
               "second_moment_limit_sample": lim_moment, "second_moment_target": target,
               "second_moment_rel_error": rel}
    return VerificationReport("weak_convergence", params, worst.tolist(), checks=checks,
                              tolerance={"ks": ks_threshold, "moment": moment_tol}, details=details,
                              provenance=_provenance(master_seed), runtime=time.perf_counter() - t0)


# -- the oscillator approximation --------------------------------------------


@dataclass(frozen=True)
class OscillatorDemo:
    grid: TimeGrid
    cos: np.ndarray
    q: np.ndarray
    V: np.ndarray
    L: np.ndarray
    sqrt_eps: float
    sigma_l2: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.q - self.cos)))

    def to_csv(self, fh=None, comments: dict | None = None):
        table = np.column_stack([self.grid.nodes, self.cos, self.q, self.V, self.L])
        meta = {"sqrt_eps": self.sqrt_eps, "sigma_l2": self.sigma_l2, **(comments or {})}
        return write_table_csv(fh, ["t", "cos_t", "q", "V", "L"], table, meta)


def oscillator_demo(
    sqrt_eps: float,
    sigma_l2: float,
    T: float = 2 * math.pi,
    seed: SeedSpec | int = 0,
    n_steps: int = 4000,
    h_inner: float | None = None,
) -> OscillatorDemo:
    """``q(t) = cos t + sqrt(eps) |sigma|_2 int_0^t cos(t - s) dV(s)`` on a uniform grid.

    The integral is evaluated as ``cos t * sum cos(s_k) dV_k + sin t * sum sin(s_k) dV_k``
    with forward sums, so ``q - cos`` is exactly proportional to ``sigma_l2``
    for a fixed seed.
    """
    seed = SeedSpec(int(seed)) if not isinstance(seed, SeedSpec) else seed
    grid = make_grid(0.0, T, n_steps)
    V = sample_V(grid, 1, seed, h_inner)
    s = grid.nodes
    dV = V.increments[:, 0]
    Ic = np.concatenate([[0.0], np.cumsum(np.cos(s[:-1]) * dV)])
    Is = np.concatenate([[0.0], np.cumsum(np.sin(s[:-1]) * dV)])
    c = np.cos(s)
    q = c + (sqrt_eps * sigma_l2) * (c * Ic + np.sin(s) * Is)
    return OscillatorDemo(grid, c, q, V.V[:, 0], V.L.L, float(sqrt_eps), float(sigma_l2))
