import warnings

import numpy as np
import pytest

from admbmo import covering as cv
from admbmo.filtration import AtomicPartition, Filtration, dyadic_filtration
from admbmo.space import WeightFamily, build_grid_space

ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str):
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


def _build_all():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {
            "three_cell": cv.three_cell_covering(),
            "corona_finite": cv.corona_covering_finite(0.25, 12),
            "corona_infinite": cv.corona_covering_infinite(5, 8),
            "doubling_r2": cv.doubling_covering_r2(3, 3),
            "mu_beta": cv.annuli_covering_mu_beta(1, 30, 2, 5, filtration_levels=2, cell_side=2),
            "exp_alpha_2": cv.maximal_cube_covering_exp(1, 2.0),
            "exp_alpha_1": cv.maximal_cube_covering_exp(1, 1.0),
            "exp_alpha_0.5": cv.maximal_cube_covering_exp(1, 0.5),
        }


@pytest.fixture(scope="session")
def coverings():
    return _build_all()


@pytest.fixture(scope="session")
def small_coverings(coverings):
    return {k: coverings[k] for k in ("three_cell", "corona_finite", "corona_infinite")}


@pytest.fixture(scope="session")
def dyadic32():
    sp = build_grid_space([0, 1], 32, WeightFamily.lebesgue())
    return sp, dyadic_filtration(sp, 6)


@pytest.fixture(scope="session")
def shifted12():
    """Two dyadic-like filtrations on 12 cells, offset by two cells."""
    sp = build_grid_space([0, 1], 12, WeightFamily.lebesgue())
    i = np.arange(12)
    s = (i + 2) % 12
    fa = Filtration([AtomicPartition(sp, i // 6, distinguished=0, label="a"),
                     AtomicPartition(sp, i // 3), AtomicPartition(sp, i)])
    fb = Filtration([AtomicPartition(sp, s // 6, distinguished=0, label="b"),
                     AtomicPartition(sp, s // 3), AtomicPartition(sp, i)])
    return cv.AdmissibleCovering(sp, fa.first, fb.first, fa, fb)
