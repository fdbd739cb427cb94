"""Build each covering, then print its admissibility constant, the L2
contraction sigma and the exact p = 2 equivalence ratio."""

import math
import warnings

from admbmo import covering as cv
from admbmo import interpolation as ip

warnings.simplefilter("ignore")

builders = {
    "three cells": cv.three_cell_covering,
    "finite corona (zeta 0.25)": lambda: cv.corona_covering_finite(0.25, 12),
    "truncated infinite corona (lambda 5)": lambda: cv.corona_covering_infinite(5, 8),
    "planar doubling construction": lambda: cv.doubling_covering_r2(3, 3),
    "exponential weight, alpha 1": lambda: cv.maximal_cube_covering_exp(1, 1.0),
}

for name, build in builders.items():
    cov = build()
    rep = ip.contraction_norm(cov)
    line = (f"{name:40s} cells {cov.space.n_cells:5d}  c {cov.c_value:.4f}  "
            f"sigma {rep.sigma:.4f} <= sqrt(c) {math.sqrt(cov.c_value):.4f}")
    if cov.space.n_cells <= 2048:
        ex = ip.equivalence_exact_p2(cov, rep.sigma)
        line += f"  ratio {ex.sup_ratio:.4f} <= {ex.bound:.4f}"
    print(line)
