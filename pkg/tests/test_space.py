import math

import numpy as np
import pytest

from admbmo.space import (MeasureSpace, WeightFamily, build_box_space, build_custom_space,
                          build_grid_space, cells_in_box, total_measure)


def test_uniform_grid():
    sp = build_grid_space([-1, 1], 4, WeightFamily.lebesgue())
    assert sp.n_cells == 4
    np.testing.assert_allclose(sp.weights, 0.5)
    assert total_measure(sp) == 2.0


def test_power_law_weights_at_centers():
    sp = build_grid_space([-2, 2], 4, WeightFamily.power_law(2))
    # cells have unit width, so the weights are the density values min{1, |c|^-2}
    np.testing.assert_allclose(sp.weights, [1 / 1.5**2, 1.0, 1.0, 1 / 1.5**2], rtol=1e-15)
    assert total_measure(sp) == pytest.approx(2 + 2 / 2.25, rel=1e-15)


def test_exp_decay_square():
    sp = build_grid_space([[-1, 1], [-1, 1]], 2, WeightFamily.exp_decay(2))
    np.testing.assert_allclose(sp.weights, math.exp(-0.5), rtol=1e-15)
    assert sp.grid_shape == (2, 2)


def test_power_law_density_at_origin_is_one():
    assert WeightFamily.power_law(30).density(np.zeros((1, 1)))[0] == 1.0


@pytest.mark.parametrize("kw", [dict(kind="power_law", beta=0), dict(kind="exp_decay", alpha=-1),
                                dict(kind="exp_growth", alpha=0), dict(kind="bogus")])
def test_bad_families(kw):
    with pytest.raises(ValueError):
        WeightFamily(**kw)


def test_bad_domain_and_weights():
    with pytest.raises(ValueError):
        build_grid_space([1, 1], 4, WeightFamily.lebesgue())
    with pytest.raises(ValueError):
        build_grid_space([0, 1], 0, WeightFamily.lebesgue())
    with pytest.raises(ValueError):
        build_custom_space([1.0, 0.0])
    with pytest.raises(ValueError):
        build_custom_space([1.0, float("nan")])


def test_refinement_preserves_lebesgue_mass():
    for k in (3, 6, 12):
        assert total_measure(build_grid_space([0, 3], k, WeightFamily.lebesgue())) == pytest.approx(3.0, abs=1e-14)


def test_refinement_changes_mass_slightly_for_smooth_density():
    a = total_measure(build_grid_space([-1, 1], 64, WeightFamily.exp_decay(2)))
    b = total_measure(build_grid_space([-1, 1], 128, WeightFamily.exp_decay(2)))
    # midpoint rule error is O(h^2)
    assert abs(a - b) < 1e-3


def test_box_space_and_cells_in_box():
    sp = build_box_space([[0, 1, 3], [0, 2]], WeightFamily.lebesgue())
    assert sp.n_cells == 2 and sp.grid_shape == (2, 1)
    np.testing.assert_allclose(sp.weights, [2.0, 4.0])
    assert cells_in_box(sp, [0, 0], [1, 2]).tolist() == [0]


def test_box_measure_inside_and_outside():
    sp = build_grid_space([-1, 1], 8, WeightFamily.lebesgue())
    assert sp.box_measure([-0.5], [0.5]) == pytest.approx(1.0)
    # the part outside the domain uses the density
    assert sp.box_measure([-2], [2]) == pytest.approx(4.0)


def test_normalized_copy_and_cells():
    sp = build_custom_space([0.5, 0.3, 0.2])
    assert sp.normalized
    n = build_custom_space([1.0, 3.0]).normalized_copy()
    assert n.normalized and n.weights.tolist() == [0.25, 0.75]
    assert sp.cells[1].weight == 0.3 and sp.cells[1].center is None
    assert not sp.has_geometry
    with pytest.raises(ValueError):
        sp.centers


def test_immutable_weights():
    sp = build_custom_space([1.0, 2.0])
    with pytest.raises(ValueError):
        sp.weights[0] = 5.0
    with pytest.raises(Exception):
        sp.truncated = True
