"""Exponential decay of the level-set ratios for a Rademacher sum on the
dyadic filtration of [0, 1]."""

import numpy as np

from admbmo.filtration import dyadic_filtration
from admbmo.norms import jn_profile, rademacher_sum
from admbmo.space import WeightFamily, build_grid_space

sp = build_grid_space([0, 1], 256, WeightFamily.lebesgue())
filt = dyadic_filtration(sp, 9)
f = rademacher_sum(sp, 8)
prof = jn_profile(f, filt, np.linspace(0.25, 8, 32))

print(f"||f||_BMO = {prof.norm:.4f}, fitted rate {prof.c_hat:.4f}, R^2 {prof.r2:.4f}")
print(f"ratio <= C exp(-rate lambda / ||f||) with C = {prof.domination_constant():.3f}")
for lam, r in prof.rows()[::4]:
    print(f"  lambda {lam:5.2f}  ratio {r:.3e}")
