import itertools

import numpy as np
import pytest

from admbmo.filtration import (AtomicPartition, Filtration, conditional_expectation,
                               dyadic_filtration, intersection_trivial, regularity_constant,
                               validate_refinement)
from admbmo.space import WeightFamily, build_custom_space, build_grid_space


def test_conditional_expectation_examples():
    sp = build_custom_space([1, 1, 1, 1])
    p = AtomicPartition.from_atoms(sp, [[0, 1], [2, 3]])
    np.testing.assert_allclose(conditional_expectation([1, 3, 5, 7], p), [2, 2, 6, 6])
    sp = build_custom_space([0.5, 0.3, 0.2])
    p = AtomicPartition.from_atoms(sp, [[0], [1, 2]])
    np.testing.assert_allclose(conditional_expectation([4, 1, 6], p), [4, 3, 3], rtol=1e-15)


def test_expectation_properties():
    rng = np.random.default_rng(1)
    sp = build_custom_space(rng.uniform(0.1, 1, 20))
    p = AtomicPartition(sp, rng.integers(0, 5, 20))
    f = rng.standard_normal(20)
    e = conditional_expectation(f, p)
    np.testing.assert_allclose(conditional_expectation(e, p), e, atol=1e-14)
    np.testing.assert_allclose(conditional_expectation(np.ones(20), p), 1, atol=1e-15)
    assert sp.weights @ e == pytest.approx(sp.weights @ f, abs=1e-13)
    assert np.all(conditional_expectation(np.abs(f), p) >= 0)
    # L2 contraction and Jensen
    assert sp.weights @ e**2 <= sp.weights @ f**2 + 1e-13
    assert np.all(e**2 <= conditional_expectation(f**2, p) + 1e-13)


def test_tower_property():
    rng = np.random.default_rng(2)
    sp = build_grid_space([0, 1], 16, WeightFamily.exp_decay(1))
    F = dyadic_filtration(sp, 4)
    f = rng.standard_normal(16)
    coarse, fine = F[2], F[4]
    a = conditional_expectation(conditional_expectation(f, fine), coarse)
    b = conditional_expectation(conditional_expectation(f, coarse), fine)
    c = conditional_expectation(f, coarse)
    np.testing.assert_allclose(a, c, atol=1e-14)
    np.testing.assert_allclose(b, c, atol=1e-14)


def test_validate_refinement():
    sp = build_grid_space([0, 1], 8, WeightFamily.lebesgue())
    assert validate_refinement(dyadic_filtration(sp, 2))
    bad = Filtration([AtomicPartition(sp, np.arange(8) // 4), AtomicPartition(sp, (np.arange(8) + 1) // 2 % 4)])
    rep = validate_refinement(bad)
    assert not rep.valid
    assert any(sorted(v["parents"]) == [0, 1] for v in rep.violations)


def test_regularity_examples():
    sp = build_grid_space([0, 1], 16, WeightFamily.lebesgue())
    assert regularity_constant(dyadic_filtration(sp, 5)) == 2.0
    sp = build_custom_space([0.9, 0.1])
    F = Filtration([AtomicPartition.trivial(sp), AtomicPartition.discrete(sp)])
    assert regularity_constant(F) == pytest.approx(10.0)
    with pytest.raises(ValueError, match="no refinement"):
        regularity_constant(Filtration([AtomicPartition.trivial(sp)]))


def test_regularity_is_sharp_constant():
    # E_k|f| <= c E_{k-1}|f| with c = regularity_constant, and no smaller c works
    rng = np.random.default_rng(3)
    sp = build_custom_space(rng.uniform(0.1, 1, 8))
    F = Filtration([AtomicPartition(sp, np.arange(8) // 4), AtomicPartition(sp, np.arange(8) // 2)])
    c = regularity_constant(F)
    worst = 0.0
    for i in range(8):
        f = np.zeros(8)
        f[i] = 1
        num, den = conditional_expectation(f, F[2]), conditional_expectation(f, F[1])
        worst = max(worst, np.max(num[den > 0] / den[den > 0]))
    assert worst == pytest.approx(c, rel=1e-12)


def test_intersection_trivial_examples():
    sp = build_custom_space([1, 1])
    p = AtomicPartition.discrete(sp)
    assert not intersection_trivial(p, p)
    sp = build_custom_space([0.5, 0.3, 0.2])
    pa = AtomicPartition.from_atoms(sp, [[0], [1, 2]])
    pb = AtomicPartition.from_atoms(sp, [[0, 1], [2]])
    assert intersection_trivial(pa, pb)
    assert intersection_trivial(AtomicPartition.trivial(sp), AtomicPartition.discrete(sp))


def _common_sets_brute(pa, pb):
    """Unions of a-atoms that are also unions of b-atoms, other than ∅ and Ω."""
    atoms = pa.atoms
    n = pa.space.n_cells
    for r in range(1, len(atoms)):
        for combo in itertools.combinations(range(len(atoms)), r):
            s = np.zeros(n, dtype=bool)
            for j in combo:
                s[atoms[j]] = True
            if all(s[b].all() or not s[b].any() for b in pb.atoms):
                return True
    return False


def test_intersection_trivial_matches_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(60):
        n = int(rng.integers(2, 12))
        sp = build_custom_space(np.ones(n))
        pa = AtomicPartition(sp, rng.integers(0, 4, n))
        pb = AtomicPartition(sp, rng.integers(0, 4, n))
        assert intersection_trivial(pa, pb) == (not _common_sets_brute(pa, pb))


def test_partition_errors():
    sp = build_custom_space([1, 1, 1])
    with pytest.raises(ValueError):
        AtomicPartition.from_atoms(sp, [[0], [0, 1, 2]])
    with pytest.raises(ValueError):
        AtomicPartition.from_atoms(sp, [[0], [1]])
    with pytest.raises(ValueError):
        conditional_expectation(np.ones(4), AtomicPartition.trivial(sp))
