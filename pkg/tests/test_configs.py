import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbm_yaglom.analytic import C_CEIL, SQRT2
from bbm_yaglom.configs import (
    PointConfiguration, T_of_nu, W_stat, W_weights, Y_value, Z_value, chi, count_N, dominates, eta, max_M,
    shift_config,
)

positions = st.lists(st.floats(0.01, 20.0, allow_nan=False), min_size=1, max_size=30)


def test_configuration_is_sorted_multiset():
    nu = PointConfiguration([3.0, 1.0, 2.0, 1.0])
    assert nu.positions.tolist() == [1.0, 1.0, 2.0, 3.0]
    assert nu == PointConfiguration([1.0, 2.0, 1.0, 3.0])
    assert hash(nu) == hash(PointConfiguration([1.0, 1.0, 3.0, 2.0]))
    assert count_N(nu) == 4 and max_M(nu) == 3.0
    assert nu.tail_count(2.0) == 2
    assert not PointConfiguration()
    with pytest.raises(ValueError):
        nu.positions[0] = 5.0


@pytest.mark.parametrize("bad", [[0.0], [-1.0, 2.0], [math.inf], [math.nan]])
def test_configuration_rejects_bad_positions(bad):
    with pytest.raises(ValueError):
        PointConfiguration(bad)


def test_functionals_need_particles():
    with pytest.raises(ValueError):
        max_M(PointConfiguration())
    with pytest.raises(ValueError):
        chi(PointConfiguration())


def test_chi_and_eta():
    nu = PointConfiguration([1.0, 2.0, 2.0, 4.0])
    c = chi(nu)
    assert c.locations.tolist() == [1.0, 2.0, 4.0]
    assert c.weights.tolist() == [0.25, 0.5, 0.25]
    e = eta(nu)
    w = np.exp(SQRT2 * np.array([1.0, 2.0, 2.0, 4.0]))
    assert e.locations.tolist() == [0.25, 0.5, 1.0]
    assert np.allclose(e.weights, [w[0] / w.sum(), 2 * w[1] / w.sum(), w[3] / w.sum()])
    assert e.total_weight == pytest.approx(1.0)
    assert e.cdf(0.5) == pytest.approx(e.weights[:2].sum())


def test_Z_and_Y_sums():
    nu = PointConfiguration([1.0, 3.0])
    L = 5.0
    z = [SQRT2 * L * math.exp(SQRT2 * (x - L)) * math.sin(math.pi * x / L) for x in (1.0, 3.0)]
    assert Z_value(nu, L) == pytest.approx(sum(z))
    assert Y_value(nu, L) == pytest.approx(sum(x / L * math.exp(SQRT2 * (x - L)) for x in (1.0, 3.0)))
    assert Z_value(PointConfiguration(), L) == 0.0


@settings(max_examples=150, deadline=None)
@given(positions)
def test_T_dichotomy(xs):
    nu = PointConfiguration(xs)
    T = T_of_nu(nu)
    L0 = max_M(nu) + 2.0
    assert C_CEIL * np.cbrt(T) >= L0 * (1 - 1e-12)
    if T == (L0 / C_CEIL) ** 3:
        assert Z_value(nu, L0) <= 0.5
    else:
        assert abs(Z_value(nu, C_CEIL * np.cbrt(T)) - 0.5) <= 1e-8


def test_T_equality_branch_for_single_particle():
    nu = PointConfiguration([1.0])
    assert T_of_nu(nu) == (3.0 / C_CEIL) ** 3


def test_shift_config():
    nu = PointConfiguration([0.5, 1.0, 1.5, 3.0])
    assert shift_config(nu, 1.0).positions.tolist() == [0.5, 2.0]
    with pytest.raises(ValueError):
        shift_config(nu, 0.0)


def test_dominates_examples():
    a = PointConfiguration([1.0, 2.0, 3.0])
    assert dominates(a, PointConfiguration([0.5, 2.5]))
    assert not dominates(PointConfiguration([0.5, 2.5]), a)
    assert not dominates(a, PointConfiguration([3.5]))
    assert dominates(a, PointConfiguration())


@settings(max_examples=200, deadline=None)
@given(positions, positions, st.floats(0.0, 2.0))
def test_dominates_matches_tail_counts(xs, ys, shift):
    a = PointConfiguration(xs)
    b = PointConfiguration(ys)
    levels = np.concatenate([a.positions, b.positions])
    by_tails = all(a.tail_count(y) >= b.tail_count(y) for y in levels)
    assert dominates(a, b) == by_tails
    # moving every particle up preserves domination of the original
    assert dominates(PointConfiguration(np.asarray(xs) + shift), a)
    assert dominates(a, a)


@settings(max_examples=100, deadline=None)
@given(positions, st.floats(0.01, 5.0))
def test_shift_is_dominated(xs, delta):
    nu = PointConfiguration(xs)
    shifted = shift_config(nu, delta)
    assert dominates(nu, shifted)
    assert len(shifted) == int(np.sum(nu.positions > delta))


def test_W_weights():
    x = np.array([-0.5, 1.0])
    assert np.allclose(W_weights(x, 2.0, 2.0), np.exp(2.0 * x + 2.0))
    assert W_stat(PointConfiguration([1.0]), 0.0, 1.5) == pytest.approx(math.exp(1.5))
    with pytest.raises(ValueError):
        W_weights(x, -1.0, 2.0)
