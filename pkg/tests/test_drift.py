import numpy as np
import pytest

from halfline.drift import (
    CoefFn,
    MidSegment,
    PiecewisePower,
    PurePower,
    SlowlyVarying,
    SlowVaryFn,
    build,
    dominated_drift,
    dominating_drift,
    drift_bound,
    drift_derivative,
    drift_integral,
    drift_values,
    eval_drift,
    is_smooth,
    log_grid,
    mid_polynomial,
    potter_check,
    potter_threshold,
    sandwich_bounds,
    sandwich_drifts,
)
from halfline.errors import ConstructionError, DomainError, UsageError


def test_eval_drift_outer_and_mid_pieces(flat_spec):
    assert eval_drift(flat_spec, 4.0) == pytest.approx(-0.5)
    assert eval_drift(flat_spec, 0.25) == pytest.approx(-2.0)
    assert eval_drift(flat_spec, 1.5) == 0.0


def test_eval_drift_rejects_non_positive(flat_spec):
    with pytest.raises(DomainError):
        eval_drift(flat_spec, 0.0)
    with pytest.raises(DomainError):
        eval_drift(flat_spec, np.array([1.0, -1.0]))


def test_eval_drift_keeps_array_shape(flat_spec):
    out = eval_drift(flat_spec, np.array([[0.25, 4.0]]))
    assert out.shape == (1, 2)
    assert isinstance(eval_drift(flat_spec, 4.0), float)


def test_build_turns_validation_into_domain_error():
    with pytest.raises(DomainError):
        build(PiecewisePower, alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=2.0, m2=1.0)
    with pytest.raises(DomainError):
        build(PiecewisePower, alpha=1.0, q=1.5, beta=1.0, p=0.5, m1=1.0, m2=2.0)
    with pytest.raises(DomainError):
        build(PiecewisePower, alpha=1.0, q=0.5, beta=-1.0, p=0.5, m1=1.0, m2=2.0)


def test_pure_power_admits_p_one():
    spec = PurePower(beta=0.5, p=1.0)
    assert eval_drift(spec, 2.0) == pytest.approx(-0.25)
    assert not is_smooth(spec)


def test_non_positive_outer_pieces_for_non_negative_alpha(flat_spec):
    xs = log_grid(1e-6, 1e6, 2000)
    outer = (xs <= flat_spec.m1) | (xs >= flat_spec.m2)
    assert np.all(drift_values(flat_spec, xs[outer]) <= 0)


def test_linear_bridge_is_continuous():
    spec = PiecewisePower(alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=1.0, m2=2.0)
    poly = mid_polynomial(spec)
    assert poly(0.0) == pytest.approx(-1.0)
    assert poly(1.0) == pytest.approx(-(2.0**-0.5))


def test_smooth_bridge_matches_values_and_slopes(bridge_spec):
    poly = mid_polynomial(bridge_spec)
    length = bridge_spec.m2 - bridge_spec.m1
    assert poly(0.0) == pytest.approx(eval_drift(bridge_spec, bridge_spec.m1), rel=1e-12)
    assert poly(length) == pytest.approx(eval_drift(bridge_spec, bridge_spec.m2), rel=1e-10)
    assert poly.deriv()(0.0) == pytest.approx(drift_derivative(bridge_spec, bridge_spec.m1), rel=1e-10)
    assert poly.deriv()(length) == pytest.approx(drift_derivative(bridge_spec, bridge_spec.m2), rel=1e-6)
    assert is_smooth(bridge_spec)


def test_drift_bound_covers_mid_segment(bridge_spec):
    xs = np.linspace(bridge_spec.m1, bridge_spec.m2, 97)
    assert np.all(np.abs(drift_values(bridge_spec, xs)) <= drift_bound(bridge_spec) + 1e-12)


def test_drift_integral_exact_pieces(flat_spec):
    # -2 sqrt(x) up to M1 = 1, flat to M2 = 2
    assert drift_integral(flat_spec, 0.25) == pytest.approx(-1.0)
    assert drift_integral(flat_spec, 1.5) == pytest.approx(-2.0)
    expected = -2.0 - 2.0 * (3.0**0.5 - 2.0**0.5)
    assert drift_integral(flat_spec, 3.0) == pytest.approx(expected)


def test_slowly_varying_uses_negative_exponents():
    spec = SlowlyVarying(alpha=CoefFn(limit=1.0), beta=CoefFn(limit=2.0), q=0.5, p=0.5, m1=0.5, m2=2.0)
    assert eval_drift(spec, 4.0) == pytest.approx(-1.0)
    assert eval_drift(spec, 0.25) == pytest.approx(-2.0)


def test_potter_one_holds_with_ratio_one_over_a():
    rep = potter_check(SlowVaryFn(), a=1.01, delta=0.1, m=5.0, sample_pairs=400)
    assert rep.holds
    assert rep.worst_ratio == pytest.approx(1 / 1.01)


@pytest.mark.parametrize("a, delta", [(1.5, 0.05), (3.0, 0.5), (1.001, 1e-3)])
def test_potter_one_holds_everywhere(a, delta):
    assert potter_check(SlowVaryFn(domain="at_zero"), a=a, delta=delta, m=0.1, sample_pairs=100).holds


def test_potter_log_power_holds_far_out():
    ell = SlowVaryFn(kind="log_power", r=1.0)
    assert potter_check(ell, a=2.0, delta=0.1, m=1e6, sample_pairs=2500).holds


def test_potter_detects_regular_variation():
    # log-log linear table: exactly x^0.2 on [1, 1e12]
    ell = SlowVaryFn(kind="table", table_x=(1.0, 1e12), table_y=(1.0, 1e12**0.2))
    rep = potter_check(ell, a=2.0, delta=0.1, m=1.0, sample_pairs=2500)
    assert not rep.holds
    assert rep.worst_ratio > 1.5


def test_potter_threshold_steps_by_decades():
    assert potter_threshold(SlowVaryFn(), a=2.0, delta=0.1) == 1.0
    assert potter_threshold(SlowVaryFn(domain="at_zero"), a=2.0, delta=0.1, start=0.5) == 0.5
    # x^0.2 up to 1e12, flat beyond: the in-table stretch must span at most 2^10
    ell = SlowVaryFn(kind="table", table_x=(1.0, 1e12), table_y=(1.0, 1e12**0.2))
    assert potter_threshold(ell, a=2.0, delta=0.1) == pytest.approx(1e9)
    with pytest.raises(ConstructionError):
        potter_threshold(ell, a=2.0, delta=0.1, decades=1)


def test_potter_argument_errors():
    with pytest.raises(UsageError):
        potter_check(SlowVaryFn(), a=2.0, delta=0.1, m=1.0, sample_pairs=0)
    with pytest.raises(DomainError):
        potter_check(SlowVaryFn(), a=1.0, delta=0.1, m=1.0)
    with pytest.raises(DomainError):
        potter_check(SlowVaryFn(), a=2.0, delta=0.0, m=1.0)


def test_sandwich_bounds_verdicts():
    assert sandwich_bounds(SlowVaryFn(), 0.1, 2.0).holds
    log1 = SlowVaryFn(kind="log_power", r=1.0)
    assert not sandwich_bounds(log1, 0.1, 3.0).holds
    assert not sandwich_bounds(log1, 0.1, 1e6).holds
    assert sandwich_bounds(log1, 0.1, 1e16).holds


def test_sandwich_bounds_at_zero():
    ell = SlowVaryFn(kind="log_power", domain="at_zero", r=1.0)
    rep = sandwich_bounds(ell, 0.1, 1e-16)
    assert rep.holds
    assert rep.grid_hi == 1e-16


def test_sandwich_drifts_degenerate_is_identity():
    spec = SlowlyVarying(alpha=CoefFn(limit=1.0), beta=CoefFn(limit=1.0), q=0.5, p=0.5, m1=0.5, m2=2.0)
    lower, upper = sandwich_drifts(spec, 0.0, 0.0)
    xs = log_grid(1e-4, 1e4, 1000)
    b = drift_values(spec, xs)
    np.testing.assert_allclose(drift_values(lower, xs), b, rtol=1e-12)
    np.testing.assert_allclose(drift_values(upper, xs), b, rtol=1e-12)


def test_sandwich_drifts_order_and_exponents(log_spec):
    lower, upper = sandwich_drifts(log_spec, 0.2, 0.1)
    assert lower.q == pytest.approx(0.7) and upper.q == pytest.approx(0.3)
    assert lower.p == pytest.approx(0.3) and upper.p == pytest.approx(0.7)
    assert lower.beta == pytest.approx(1.1) and upper.beta == pytest.approx(0.9)
    # log x <= x^0.2 only past ~5e5, so M2 moved out
    assert lower.m2 > 1e5
    xs = log_grid(1e-3, 1e9, 1000)
    b = drift_values(log_spec, xs)
    assert np.all(drift_values(lower, xs) <= b)
    assert np.all(drift_values(upper, xs) >= b)


def test_sandwich_drifts_rejects_bad_input(flat_spec, log_spec):
    with pytest.raises(UsageError):
        sandwich_drifts(flat_spec, 0.1, 0.1)
    with pytest.raises(UsageError):
        sandwich_drifts(log_spec, 0.6, 0.1)
    with pytest.raises(UsageError):
        sandwich_drifts(log_spec, 0.1, 1.0)


def test_comparison_drifts_bracket_spec(bridge_spec):
    low = dominated_drift(bridge_spec, widen=2.0)
    high = dominating_drift(bridge_spec, widen=2.0)
    assert low.m1 == pytest.approx(0.25) and high.m2 == pytest.approx(4.0)
    xs = log_grid(1e-4, 1e4, 2000)
    b = drift_values(bridge_spec, xs)
    assert np.all(drift_values(low, xs) <= b + 1e-12)
    assert np.all(drift_values(high, xs) >= b - 1e-12)


def test_dominated_drift_flips_negative_alpha():
    spec = PiecewisePower(alpha=-1.0, q=0.5, beta=1.0, p=0.5, m1=1.0, m2=2.0, mid=MidSegment(kind="constant"))
    low = dominated_drift(spec)
    assert low.alpha == 1.0
    assert eval_drift(low, 0.25) == pytest.approx(-2.0)


def test_comparison_drifts_need_piecewise():
    with pytest.raises(UsageError):
        dominating_drift(PurePower(beta=1.0, p=0.5))
