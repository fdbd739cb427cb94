"""Operator-valued BMO norms and the tensor identity for E_a E_b on matrix functions."""

import numpy as np

from admbmo import covering as cv
from admbmo import ncbmo as nc
from admbmo.filtration import dyadic_filtration
from admbmo.space import WeightFamily, build_grid_space

sp = build_grid_space([0, 1], 32, WeightFamily.lebesgue())
filt = dyadic_filtration(sp, 6)
F = nc.MatrixFunction.random(sp.n_cells, 3, np.random.default_rng(0))
for side in ("column", "row", "max"):
    print(f"{side:6s} BMO norm {nc.matrix_bmo_norm(F, filt, side=side):.6f}")

cov = cv.corona_covering_finite(0.25, 12)
for m in (1, 2, 3):
    chk = nc.tensor_contraction_check(cov, m)
    print(f"m = {m}: sigma (matrix) {chk.sigma_matrix:.12f}, scalar {chk.sigma_scalar:.12f}")
