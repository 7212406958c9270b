"""
State-dependent fast diffusion and its random clock
===================================================

When the fast motion is ``dX = eps^-1 (psi1(Y) + psi2(X, Y)) dW1`` the clock
``s(t) = int_0^t (psi1 + psi2)^2 du`` turns ``eps X`` into a Brownian motion.
Along a simulated pair this clock is computed, inverted and compared with
its deterministic limit ``s0(t) = int_0^t psi1(y(u))^2 du``.
"""

import numpy as np

import nullrec as nr

cs = nr.build_catalog_entry("gaussian_bump", {"p": 0.7})
print(f"psi1 + psi2 lies in [{cs.c1}, {cs.c2}]")

for eps in (0.4, 0.1):
    grid = nr.EpsilonSchedule((eps,)).grid(eps, 1.0)
    traj = nr.simulate_pair_general(cs, eps, 0.0, [0.2], grid, nr.SeedSpec(8))
    tc = nr.compute_time_change(traj, cs)
    back = tc.t_of_s(tc.s_of_t)
    print(f"eps={eps}: s(1) = {tc.s_of_t[-1]:.4f}, slopes in [{tc.min_slope:.3f}, {tc.max_slope:.3f}], "
          f"round-trip error {np.max(np.abs(back - grid.nodes)):.1e}")

# on the new clock the coefficients are divided by the fast diffusion
tcs = nr.transformed_coefficients(cs)
print(f"transformed envelope L1 norm: {nr.l1_norm_envelope(tcs, 'sigma_hat_sq'):.4f} "
      f"(original {nr.l1_norm_envelope(cs, 'sigma_hat_sq'):.4f} / c1^2)")

ode = nr.solve_ode(cs, [0.2], nr.make_grid(0, 1, 10))
rep = nr.verify_timechange_limit(cs, ode, nr.EpsilonSchedule((0.4, 0.2, 0.1)), 200, master_seed=9)
print(rep.summary())
