import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bbm_yaglom.analytic import (
    C_CEIL, SQRT2, BoundaryCurve, L_of, SeriesControl, SeriesError, dz_dL, dz_dx, girsanov_tilt,
    hh_asymptotic, q_approx, reference_cdf, reference_density, tau, w_density, w_eigen, w_images, y_weight,
    z_weight,
)

# reference values from a 30-digit mpmath evaluation (image sum, quadrature, numerical derivative)
W_ORACLE = [
    ((1.0, 0.5, 0.5), 0.014383766711652731319),
    ((0.1, 0.3, 0.6), 0.77945675286314306878),
    ((0.01, 0.5, 0.52), 3.9104269397545586021),
    ((2.0, 0.2, 0.9), 0.000018789547230496894035),
]
TAU_ORACLE = [((8.0, 0.0, 4.0), 0.25866164388153767369), ((8.0, 1.0, 7.0), 0.57232400037147571017),
              ((50.0, 0.0, 10.0), 0.16555365723776985273)]


def test_ceiling_constant():
    assert C_CEIL == pytest.approx(2.187553427990652078, rel=1e-15)
    assert L_of(BoundaryCurve(8.0), 0.0) == pytest.approx(4.3751068559813041561, rel=1e-15)


def test_L_endpoints_and_domain():
    curve = BoundaryCurve(8.0)
    assert L_of(curve, 8.0) == 0.0
    assert L_of(curve, 7.0) == pytest.approx(C_CEIL, rel=1e-15)
    with pytest.raises(ValueError):
        L_of(curve, 8.5)
    with pytest.raises(ValueError):
        L_of(curve, -1.0)
    with pytest.raises(ValueError):
        BoundaryCurve(0.0)


@pytest.mark.parametrize("args,want", TAU_ORACLE)
def test_tau_against_oracle(args, want):
    t, r, s = args
    assert tau(BoundaryCurve(t), r, s) == pytest.approx(want, abs=1e-13)


def test_tau_closed_form_matches_quadrature():
    curve = BoundaryCurve(27.0)
    for r, s in [(0.0, 1.0), (2.0, 20.0), (0.0, 26.999)]:
        q, _ = integrate.quad(lambda u: L_of(curve, u) ** -2, r, s, epsabs=1e-14, epsrel=1e-13, limit=200)
        assert abs(tau(curve, r, s) - q) <= 1e-10


def test_tau_domain():
    curve = BoundaryCurve(8.0)
    with pytest.raises(ValueError):
        tau(curve, 2.0, 1.0)
    with pytest.raises(ValueError):
        tau(curve, 0.0, 8.0)


def test_z_weight_values_and_support():
    assert z_weight(1.0, 4.0) == pytest.approx(0.057478384361756337093, rel=1e-13)
    assert z_weight(2.5, 10.0) == pytest.approx(0.00024752063026972850116, rel=1e-13)
    assert z_weight(0.0, 4.0) == 0.0
    assert z_weight(4.0, 4.0) == 0.0
    assert z_weight(5.0, 4.0) == 0.0
    assert y_weight(2.0, 4.0) == pytest.approx(0.5 * math.exp(-2 * SQRT2))


def test_derivatives_against_oracle():
    assert dz_dx(1.0, 4.0) == pytest.approx(0.12643012822046546799, rel=1e-12)
    assert dz_dL(1.0, 4.0) == pytest.approx(-0.07820296899544435273, rel=1e-12)
    with pytest.raises(ValueError):
        dz_dx(0.0, 4.0)
    with pytest.raises(ValueError):
        dz_dL(4.0, 4.0)


@settings(max_examples=200, deadline=None)
@given(L=st.floats(4.0, 40.0), u=st.floats(0.0, 1.0))
def test_derivative_bands(L, u):
    x = 1.0 + u * (L - 3.0)
    z = z_weight(x, L)
    d = dz_dx(x, L)
    assert z * (SQRT2 - math.pi / 4) <= d <= z * (SQRT2 + math.pi / 2)
    assert dz_dL(x, L) <= -z / 8


@settings(max_examples=100, deadline=None)
@given(L=st.floats(4.0, 40.0), u=st.floats(0.0, 1.0))
def test_derivatives_finite_difference(L, u):
    x = 1.0 + u * (L - 3.0)
    h = 1e-6
    fd = (z_weight(x + h, L) - z_weight(x - h, L)) / (2 * h)
    d = dz_dx(x, L)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))
    fd = (z_weight(x, L + h) - z_weight(x, L - h)) / (2 * h)
    d = dz_dL(x, L)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))


@pytest.mark.parametrize("args,want", W_ORACLE)
def test_w_against_oracle(args, want):
    assert w_density(*args) == pytest.approx(want, rel=1e-11, abs=1e-14)
    assert w_images(*args) == pytest.approx(want, rel=1e-11, abs=1e-14)


@settings(max_examples=150, deadline=None)
@given(s=st.floats(0.005, 3.0), x=st.floats(0.001, 0.999), y=st.floats(0.001, 0.999))
def test_w_two_series_agree(s, x, y):
    assert abs(w_eigen(s, x, y) - w_images(s, x, y)) <= 2e-12


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0.01, 3.0), x=st.floats(0.001, 0.999), y=st.floats(0.001, 0.999))
def test_w_symmetry(s, x, y):
    assert abs(w_density(s, x, y) - w_density(s, 1 - x, 1 - y)) <= 1e-12
    assert abs(w_density(s, x, y) - w_density(s, y, x)) <= 1e-12


def test_w_chapman_kolmogorov():
    u, wts = np.polynomial.legendre.leggauss(64)
    u, wts = (u + 1) / 2, wts / 2
    for s, x, y in [(0.5, 0.3, 0.6), (1.2, 0.1, 0.8), (0.4, 0.5, 0.5)]:
        conv = sum(wi * w_density(s / 2, x, ui) * w_density(s / 2, ui, y) for ui, wi in zip(u, wts))
        assert conv == pytest.approx(w_density(s, x, y), abs=1e-8)


def test_w_outside_and_errors():
    assert w_density(1.0, 0.0, 0.5) == 0.0
    assert w_density(1.0, 0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        w_density(0.0, 0.5, 0.5)
    with pytest.raises(SeriesError):
        w_eigen(1e-6, 0.5, 0.5, SeriesControl(n_max=5))


def test_reference_densities_normalized():
    for kind, hi in (("h1", 60.0), ("h2", 1.0)):
        total, _ = integrate.quad(lambda y: reference_density(kind, y), 0, hi, limit=200)
        assert total == pytest.approx(1.0, abs=1e-10)
        assert reference_cdf(kind, hi) == pytest.approx(1.0, abs=1e-12)
    y = np.linspace(0.1, 5, 7)
    assert np.allclose(reference_cdf("h1", y), [integrate.quad(lambda v: reference_density("h1", v), 0, b)[0] for b in y])
    with pytest.raises(ValueError):
        reference_density("h3", 1.0)


def test_hh_asymptotic_value():
    assert hh_asymptotic(1.0, 4.0, 2.0, 0.3) == pytest.approx(0.0020246612442445519481, rel=1e-13)


def test_girsanov_tilt_is_one_at_critical_drift():
    assert girsanov_tilt(SQRT2, 0.0, 3.0, 1.0, 2.0) == 1.0
    assert girsanov_tilt(SQRT2 + 0.1, 0.0, 0.0, 1.0, 1.0) == pytest.approx(1.0)


def test_q_approx_form_and_domain():
    curve = BoundaryCurve(50.0)
    r, s, x, y = 0.0, 10.0, 4.0, 3.0
    Lr, Ls = L_of(curve, r), L_of(curve, s)
    want = (math.exp(SQRT2 * (x - y)) / math.sqrt(Lr * Ls) * w_density(tau(curve, r, s), x / Lr, y / Ls))
    assert q_approx(curve, SQRT2, r, s, x, y) == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        q_approx(curve, 1.0, r, s, x, y)
    with pytest.raises(ValueError):
        q_approx(curve, SQRT2, r, s, Lr + 1, y)
