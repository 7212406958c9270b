"""
The limit: a Brownian motion run on a local-time clock
======================================================

The rescaled deviation ``(Y - y) / sqrt(eps)`` converges to the solution of
``d zeta = Db1(y) zeta dt + sqrt(A) dV``, where ``V(t) = W2(L^{W1}(t, 0))``
moves only while an independent Brownian motion ``W1`` sits at 0 and
``A = int sigma sigma^T(x, y) dx``.  This script builds ``V``, solves for
``zeta`` in two ways and compares the law with the prelimit deviation.
"""

import math

import numpy as np

import nullrec as nr

cs = nr.build_catalog_entry("oscillator")
grid = nr.make_grid(0, 1, 1000)
ode = nr.solve_ode(cs, [1.0, 0.0], grid)
Phi = nr.fundamental_matrix(cs, ode)
K = nr.diffusion_kernel(cs, ode)
print("A(0) =", np.round(K.A[0], 6), " (sqrt(pi) in the first entry)")

V = nr.sample_V(grid, 2, nr.SeedSpec(5))
dL = np.diff(V.L.L)
print(f"V is frozen on {np.mean(dL == 0):.1%} of the steps; L(1,0) = {V.L.terminal:.4f}")

z = nr.sample_zeta0(K, Phi, V)
print(f"variation of parameters vs stepped equation: sup gap {z.construction_gap:.2e}")

# second moment of the limit at t = 1 against |sigma|_2^2 sqrt(2/pi) = sqrt(2)
ens = nr.zeta0_ensemble(K, Phi, 4000, master_seed=6, h_inner=1e-4)
m2 = np.sum(ens["zeta"][:, 0] ** 2, axis=1).mean()
print(f"E|zeta0(1)|^2 = {m2:.4f}  (closed form {math.sqrt(2):.4f})")

# prelimit deviations at eps = 0.1 against the limit sample
eps = 0.1
sched = nr.EpsilonSchedule((eps,))
g_eps = sched.grid(eps, 1.0)
y = nr.solve_ode(cs, [1.0, 0.0], g_eps).y
pre = nr.simulate_Y_ensemble(cs, eps, [1.0, 0.0], g_eps, 7, 4000)
zeta_eps = (pre["Y"][:, -1] - y[-1]) / math.sqrt(eps)
ks = nr.EmpiricalLaw(zeta_eps).ks(nr.EmpiricalLaw(ens["zeta"][:, 0]))
print(f"coordinatewise KS distance at eps={eps}: {np.round(ks, 4)}")
