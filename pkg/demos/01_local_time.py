"""
Brownian local time from discrete paths
=======================================

The local time ``L(t, 0)`` measures how much time a Brownian path spends
near zero.  Two estimators are compared here: the occupation density
``(2 delta)^-1 Leb{s <= t : |W(s)| <= delta}`` and the Tanaka functional
``|W(t)| - sum sgn(W(t_k)) (W(t_{k+1}) - W(t_k))``.  Their ensemble means
should track ``E L(t, 0) = sqrt(2 t / pi)``.
"""

import math

import numpy as np

import nullrec as nr

# a single path first: both curves start at 0 and only grow near the level
grid = nr.make_grid(0.0, 1.0, 20_000)
path = nr.sample_brownian(grid, 1, nr.SeedSpec(1))
occ = nr.local_time_occupation(path)
tan = nr.local_time_tanaka(path)
print(f"one path: occupation L(1,0) = {occ.terminal:.4f}, tanaka L(1,0) = {tan.terminal:.4f}")

# the occupation curve is exactly flat while the path is away from 0
far = np.abs(path.values[:-1, 0]) > occ.delta
print(f"steps away from the level: {far.mean():.1%}, growth there: {occ.increments[far].sum()}")

# ensemble means at several times against the closed form
rec = [5_000, 10_000, 20_000]
ens = nr.local_time_ensemble(grid, 3000, master_seed=2, record=rec)
t = grid.nodes[rec]
for j, tj in enumerate(t):
    m_occ = ens["occupation"][:, j].mean()
    m_tan = ens["tanaka"][:, j].mean()
    print(f"t={tj:.2f}  occupation {m_occ:.4f}  tanaka {m_tan:.4f}  sqrt(2t/pi) {math.sqrt(2 * tj / math.pi):.4f}")

slope, ci = nr.loglog_fit(t, ens["occupation"].mean(axis=0))
print(f"log-log slope of the mean in t: {slope:.3f} (1/2 expected)")
