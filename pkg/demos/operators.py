"""A martingale transform and a Haar shift on a dyadic grid: L2 behaviour,
the atomic Hormander constant and an L-infinity to BMO lower bound."""

import numpy as np

from admbmo import czo
from admbmo.covering import AdmissibleCovering
from admbmo.filtration import AtomicPartition, Filtration, dyadic_filtration
from admbmo.norms import lp_norm
from admbmo.space import WeightFamily, build_grid_space

sp = build_grid_space([0, 1], 64, WeightFamily.lebesgue())
filt = dyadic_filtration(sp, 7)
rng = np.random.default_rng(0)

T = czo.MartingaleTransform(filt, rng.choice([-1.0, 1.0], len(filt.completed())))
f = rng.standard_normal(sp.n_cells)
print(f"martingale transform: ||Tf|| / ||f|| = {lp_norm(T.apply(f), sp, 2) / lp_norm(f, sp, 2):.12f}")

shift = czo.random_haar_shift(czo.HaarSystem(filt), 1, 2, seed=1)
print("Haar shift (1, 2):", czo.lp_ratio_profile(shift, [1.5, 2, 4], trials=200, seed=2))

hilbert = czo.truncated_hilbert(sp)
print(f"Hilbert kernel, atomic Hormander constant {czo.hormander_constant_atomic(hilbert, [filt]):.4f}")
print(f"Hilbert kernel, metric Hormander constant (alpha 2) "
      f"{czo.hormander_constant_metric(hilbert, 2):.4f}")

# two dyadic-like filtrations on 12 cells, offset by two cells
sp12 = build_grid_space([0, 1], 12, WeightFamily.lebesgue())
i = np.arange(12)
s = (i + 2) % 12
fa = Filtration([AtomicPartition(sp12, i // 6, distinguished=0), AtomicPartition(sp12, i // 3),
                 AtomicPartition(sp12, i)])
fb = Filtration([AtomicPartition(sp12, s // 6, distinguished=0), AtomicPartition(sp12, s // 3),
                 AtomicPartition(sp12, i)])
cov = AdmissibleCovering(sp12, fa.first, fb.first, fa, fb)
est = czo.linfty_bmo_estimate(czo.MartingaleTransform(fa, [1, -1, 1]), cov)
print(f"sup ||Tf||_BMO over |f| <= 1: {est.lower_bound:.4f} (exhaustive: {est.exhaustive})")
