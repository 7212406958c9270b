"""
The oscillator approximation in the large-noise regime
======================================================

For the oscillator the limit gives
``q(t) ~ cos t + sqrt(eps) |sigma|_2 int_0^t cos(t - s) dV(s)``.  With
``sqrt(eps) = 0.1`` and ``|sigma|_2 = 100`` the correction is visible on a
plot; the script writes the trajectory to ``oscillator_demo.csv`` for any
plotting tool and checks that the deviation from ``cos t`` is linear in
``|sigma|_2``.
"""

import numpy as np

import nullrec as nr

demo = nr.oscillator_demo(sqrt_eps=0.1, sigma_l2=100.0, seed=2024)
demo.to_csv("oscillator_demo.csv", {"seed": 2024})
print(f"wrote oscillator_demo.csv with {demo.grid.n_nodes} rows")

# V only moves while the driving Brownian motion is at 0, so q follows cos t
# between the jumps in slope of the correction
moving = np.diff(demo.V) != 0
print(f"V moves on {moving.mean():.1%} of the steps; L(2 pi, 0) = {demo.L[-1]:.3f}")

for s in (0.0, 10.0, 100.0):
    d = nr.oscillator_demo(0.1, s, seed=2024)
    print(f"|sigma|_2 = {s:>5}: max |q - cos| = {d.max_deviation:.5f}")
