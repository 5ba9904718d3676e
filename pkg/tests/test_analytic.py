import math

import numpy as np
import pytest
from scipy import integrate

from halfline.analytic import (
    bessel_like_survival,
    bm_survival,
    bm_survival_asymptotic,
    gamma_rate,
    h_transform,
    log_beta,
    log_scale_function,
    scale_function,
    tail_scale,
    two_sided_exit_prob,
    variational_infimum,
)
from halfline.drift import MidSegment, PiecewisePower, PurePower, drift_bound, drift_values
from halfline.errors import DomainError, NumericError, UsageError

GAMMA_HALF_ONE = 0.75 * 2 ** (2 / 3) * math.pi ** (2 / 3)


def test_log_beta_known_values():
    assert log_beta(0.5, 0.5) == pytest.approx(math.log(math.pi))
    assert log_beta(1.5, 0.5) == pytest.approx(math.log(math.pi / 2))
    with pytest.raises(DomainError):
        log_beta(0.0, 1.0)


def test_gamma_rate_half_one():
    assert gamma_rate(0.5, 1.0) == pytest.approx(GAMMA_HALF_ONE, rel=1e-12)
    assert f"{gamma_rate(0.5, 1.0):.4g}" == "2.554"


def test_gamma_rate_homogeneity():
    assert gamma_rate(0.5, 8.0) / gamma_rate(0.5, 1.0) == pytest.approx(16.0, rel=1e-10)


@pytest.mark.parametrize("lam", [2.0, 10.0])
@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("beta", [0.3, 1.0, 4.0])
def test_gamma_rate_scales_in_beta(lam, p, beta):
    ratio = gamma_rate(p, lam * beta) / gamma_rate(p, beta)
    assert ratio == pytest.approx(lam ** (2 / (1 + p)), rel=1e-10)


@pytest.mark.parametrize("p, beta", [(0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_gamma_rate_domain(p, beta):
    with pytest.raises(DomainError):
        gamma_rate(p, beta)


def test_variational_infimum_relation():
    expected = GAMMA_HALF_ONE * 0.5 ** (-1 / 3)
    assert variational_infimum(0.5, 1.0) == pytest.approx(expected, rel=1e-12)
    assert variational_infimum(0.5, 1.0) == pytest.approx(3.2175, abs=1e-4)


def test_tail_scale():
    assert tail_scale(8.0, 0.5) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        tail_scale(0.0, 0.5)


def test_bm_survival():
    assert bm_survival(1.0, 1.0) == pytest.approx(0.6826895, abs=1e-7)
    assert bm_survival(0.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        bm_survival(1.0, 0.0)


def test_bm_survival_asymptotic_for_small_x():
    x, t = 1e-3, 1.0
    assert bm_survival(x, t) == pytest.approx(bm_survival_asymptotic(x, t), rel=1e-6)


def test_bessel_like_survival():
    assert bessel_like_survival(1.0, 1.0, 0.5) == pytest.approx(1 - math.exp(-0.5), rel=1e-12)
    assert bessel_like_survival(1.0, 1.0, 0.5) == pytest.approx(0.393469, abs=1e-6)
    assert bessel_like_survival(1.0, 1.0, 0.0) == pytest.approx(bm_survival(1.0, 1.0), rel=1e-12)
    assert bessel_like_survival(1.0, 1.0, -0.5) == 1.0
    assert bessel_like_survival(1.0, 1.0, -2.0) == 1.0
    with pytest.raises(DomainError):
        bessel_like_survival(1.0, -1.0, 0.5)


def test_scale_function_driftless():
    spec = PurePower(beta=1e-12, p=0.5)
    assert scale_function(spec, 2.0) == pytest.approx(2.0, rel=1e-6)


def test_scale_function_increasing_and_matches_riemann(flat_spec):
    assert scale_function(flat_spec, 2.0) > scale_function(flat_spec, 1.0)
    z = (np.arange(200_000) + 0.5) / 200_000
    riemann = float(np.mean(np.exp(4.0 * np.sqrt(z))))
    assert scale_function(flat_spec, 1.0) == pytest.approx(riemann, rel=1e-6)


def test_scale_function_bessel_case():
    spec = PurePower(beta=0.5, p=1.0)
    # b = -1/(2x): f(x) = x^2 / 2
    assert scale_function(spec, 3.0) == pytest.approx(4.5, rel=1e-8)


def test_scale_function_diverges(flat_spec):
    assert scale_function(flat_spec, 1e3) > 10 * scale_function(flat_spec, 1e2)


def test_log_scale_function_matches_scale_function(flat_spec):
    for x in (0.5, 2.0, 50.0):
        assert log_scale_function(flat_spec, x) == pytest.approx(math.log(scale_function(flat_spec, x)), rel=1e-9)
    assert log_scale_function(flat_spec, 0.0) == -math.inf


def test_scale_function_overflow_is_numeric_error(flat_spec):
    with pytest.raises(NumericError):
        scale_function(flat_spec, 1e5)


def test_two_sided_exit_with_far_upper_level(flat_spec):
    f = [scale_function(flat_spec, v) for v in (0.5, 1.5, 3.0)]
    assert two_sided_exit_prob(flat_spec, 1.5, 0.5, 3.0) == pytest.approx((f[1] - f[2]) / (f[0] - f[2]), rel=1e-9)
    far = two_sided_exit_prob(flat_spec, 1.5, 0.5, 2e3)
    assert math.isfinite(far)
    assert far == pytest.approx(1.0, abs=1e-12)


def test_two_sided_exit():
    spec = PurePower(beta=0.0, p=0.5)
    assert two_sided_exit_prob(spec, 1.0, 0.5, 2.0) == pytest.approx(2 / 3)
    assert two_sided_exit_prob(spec, 0.5 + 1e-9, 0.5, 2.0) == pytest.approx(1.0, abs=1e-8)
    assert two_sided_exit_prob(spec, 2.0 - 1e-9, 0.5, 2.0) == pytest.approx(0.0, abs=1e-8)
    with pytest.raises(UsageError):
        two_sided_exit_prob(spec, 3.0, 0.5, 2.0)
    with pytest.raises(UsageError):
        two_sided_exit_prob(spec, 1.0, 2.0, 0.5)


def test_h_transform_needs_smooth_drift(flat_spec):
    with pytest.raises(UsageError):
        h_transform(flat_spec)


def test_h_transform_pair(bridge_spec):
    pair = h_transform(bridge_spec)
    assert pair.h(1e-12) == pytest.approx(1.0, abs=1e-5)
    xs = np.geomspace(1e-3, 50.0, 400)
    assert np.all(pair.h(xs) > 0)
    for m in (bridge_spec.m1, bridge_spec.m2):
        assert pair.h(m * (1 - 1e-9)) == pytest.approx(pair.h(m * (1 + 1e-9)), rel=1e-7)
    x = 5.0
    far = pair.constant * math.exp(-bridge_spec.beta * x ** (1 - bridge_spec.p) / (1 - bridge_spec.p))
    assert pair.h(x) == pytest.approx(far, rel=1e-10)


def test_h_transform_kills_potential(bridge_spec):
    # h''/2 + V h = 0, with h'' by central differences
    pair = h_transform(bridge_spec)
    e = 1e-4
    for x in (0.2, 0.8, 1.3, 3.0):
        h2 = (pair.h(x + e) - 2 * pair.h(x) + pair.h(x - e)) / e**2
        assert 0.5 * h2 + pair.potential(x) * pair.h(x) == pytest.approx(0.0, abs=1e-5)


def test_potential_non_positive_near_zero_for_positive_alpha(bridge_spec):
    pair = h_transform(bridge_spec)
    xs = np.geomspace(1e-4, 0.1, 50)
    expected = -0.5 * (xs ** -1.0 + 0.5 * xs ** -1.5)
    np.testing.assert_allclose(pair.potential(xs), expected, rtol=1e-12)
    assert np.all(pair.potential(xs) < 0)


def test_h_is_integral_of_drift(bridge_spec):
    pair = h_transform(bridge_spec)
    val, _ = integrate.quad(lambda y: float(drift_values(bridge_spec, np.array([y]))[0]), 0.0, 1.3, points=[0.5])
    assert pair.log_h(1.3) == pytest.approx(val, rel=1e-8)


def test_h_bounded_above_and_below_on_mid_segment(bridge_spec):
    pair = h_transform(bridge_spec)
    m1, m2 = bridge_spec.m1, bridge_spec.m2
    anchor = -bridge_spec.alpha / (1 - bridge_spec.q) * m1 ** (1 - bridge_spec.q)
    spread = drift_bound(bridge_spec) * (m2 - m1)
    h = pair.h(np.linspace(m1, m2, 401))
    assert np.all(np.isfinite(h))
    assert np.all(h >= math.exp(anchor - spread) * (1 - 1e-9))
    assert np.all(h <= math.exp(anchor + spread) * (1 + 1e-9))


@pytest.mark.parametrize("alpha, q", [(1.0, 0.5), (2.0, 0.3), (0.0, 0.5)])
def test_potential_dominated_by_its_part_beyond_m1(alpha, q):
    spec = PiecewisePower(alpha=alpha, q=q, beta=1.0, p=0.5, m1=0.5, m2=2.0, mid=MidSegment(kind="smooth"))
    pair = h_transform(spec)
    xs = np.geomspace(1e-3, 10.0, 500)
    v = pair.potential(xs)
    assert np.all(v <= np.where(xs > spec.m1, v, 0.0))
