"""
Drift families for dX = dB + b(X) dt on (0, inf).

Three variants share one evaluation path:

- PiecewisePower: -alpha x^-q on (0, M1], a mid segment on (M1, M2),
  -beta x^-p on [M2, inf)
- PurePower: -beta x^-p everywhere (p = 1 is the Bessel-like case)
- SlowlyVarying: -alpha(x) x^-q l1(x) near 0 and -beta(x) x^-p l2(x) at
  infinity, with l1, l2 slowly varying at 0 and at infinity respectively

All models are frozen pydantic models, so specs are hashable and the
cached helpers below can key on them.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Literal, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import BaseModel, Field, ValidationError, root_validator, validator
from scipy import integrate

from halfline.errors import ConstructionError, DomainError, UsageError

logger = logging.getLogger("halfline.drift")

GRID_POINTS = 1000
POTTER_SPAN = 1.0e6


class _Frozen(BaseModel):
    class Config:
        frozen = True
        extra = "forbid"


# --- building blocks --------------------------------------------------------


class MidSegment(_Frozen):
    kind: Literal["constant", "linear", "smooth"] = "linear"
    level: float = 0.0


class SlowVaryFn(_Frozen):
    """
    A positive function slowly varying at 0 or at infinity.

    log_power is (log x)^r for x > e at infinity and (log 1/x)^r for x < 1/e
    at zero, continued by the constant 1. iter_log is log log in the same
    way. table interpolates (x, y) pairs linearly in log-log coordinates and
    is held constant outside the table.
    """

    kind: Literal["one", "log_power", "iter_log", "table"] = "one"
    domain: Literal["at_zero", "at_infinity"] = "at_infinity"
    r: float = 1.0
    table_x: Tuple[float, ...] = ()
    table_y: Tuple[float, ...] = ()

    @root_validator(skip_on_failure=True)
    def _check_table(cls, values):
        if values["kind"] != "table":
            return values
        xs, ys = values["table_x"], values["table_y"]
        if len(xs) < 2 or len(xs) != len(ys):
            raise ValueError("table needs at least two (x, y) pairs of equal length")
        if any(v <= 0 for v in xs) or any(v <= 0 for v in ys):
            raise ValueError("table abscissae and values must be positive")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("table abscissae must be strictly increasing")
        return values


class CoefFn(_Frozen):
    """Bounded coefficient c(x) = limit + amp / (1 + x); c(x) -> limit at infinity."""

    limit: float
    amp: float = 0.0


# --- drift variants ---------------------------------------------------------


class PiecewisePower(_Frozen):
    variant: Literal["piecewise"] = "piecewise"
    alpha: float
    q: float = Field(..., gt=0.0, lt=1.0)
    beta: float = Field(..., gt=0.0)
    p: float = Field(..., gt=0.0, lt=1.0)
    m1: float = Field(..., gt=0.0)
    m2: float
    mid: MidSegment = MidSegment()

    @validator("m2")
    def _m2_above_m1(cls, v, values):
        if "m1" in values and not v > values["m1"]:
            raise ValueError("m2 must exceed m1")
        return v


class PurePower(_Frozen):
    variant: Literal["pure"] = "pure"
    beta: float
    p: float = Field(..., gt=0.0, le=1.0)


class SlowlyVarying(_Frozen):
    variant: Literal["slowly_varying"] = "slowly_varying"
    alpha: CoefFn
    beta: CoefFn
    q: float = Field(..., gt=0.0, lt=1.0)
    p: float = Field(..., gt=0.0, lt=1.0)
    ell1: SlowVaryFn = SlowVaryFn(domain="at_zero")
    ell2: SlowVaryFn = SlowVaryFn(domain="at_infinity")
    m1: float = Field(..., gt=0.0)
    m2: float
    mid: MidSegment = MidSegment()

    @validator("m2")
    def _m2_above_m1(cls, v, values):
        if "m1" in values and not v > values["m1"]:
            raise ValueError("m2 must exceed m1")
        return v

    @validator("beta")
    def _beta_positive(cls, v):
        # beta(x) must stay positive on (0, inf): check both ends of its range
        if v.limit <= 0 or v.limit + v.amp <= 0:
            raise ValueError("beta coefficient must be positive with positive limit")
        return v

    @validator("ell1")
    def _ell1_at_zero(cls, v):
        if v.domain != "at_zero":
            raise ValueError("ell1 must be slowly varying at zero")
        return v

    @validator("ell2")
    def _ell2_at_infinity(cls, v):
        if v.domain != "at_infinity":
            raise ValueError("ell2 must be slowly varying at infinity")
        return v


DriftSpec = Union[PiecewisePower, PurePower, SlowlyVarying]


def build(model: type, **fields) -> DriftSpec:
    """Construct a drift model, turning validation failures into DomainError."""
    try:
        return model(**fields)
    except ValidationError as e:
        raise DomainError(f"invalid {model.__name__}: {e}") from e


# --- slowly varying functions -----------------------------------------------


def eval_slow(ell: SlowVaryFn, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if ell.kind == "one":
        return np.ones_like(x)
    if ell.kind == "table":
        lx = np.log(np.asarray(ell.table_x))
        ly = np.log(np.asarray(ell.table_y))
        return np.exp(np.interp(np.log(x), lx, ly))

    # distance from the singular end, measured in log units
    if ell.domain == "at_infinity":
        lx = np.log(x)
    else:
        lx = -np.log(x)
    if ell.kind == "log_power":
        return np.maximum(lx, 1.0) ** ell.r
    return np.log(np.maximum(lx, math.e))


def eval_coef(c: CoefFn, x) -> np.ndarray:
    return c.limit + c.amp / (1.0 + np.asarray(x, dtype=float))


# --- outer pieces -----------------------------------------------------------


def _near_zero(spec: DriftSpec, x: np.ndarray) -> np.ndarray:
    if isinstance(spec, PiecewisePower):
        return -spec.alpha * x ** (-spec.q)
    if isinstance(spec, SlowlyVarying):
        return -eval_coef(spec.alpha, x) * x ** (-spec.q) * eval_slow(spec.ell1, x)
    return -spec.beta * x ** (-spec.p)


def _far(spec: DriftSpec, x: np.ndarray) -> np.ndarray:
    if isinstance(spec, SlowlyVarying):
        return -eval_coef(spec.beta, x) * x ** (-spec.p) * eval_slow(spec.ell2, x)
    return -spec.beta * x ** (-spec.p)


def _near_zero_slope(spec: DriftSpec, x: float) -> float:
    if isinstance(spec, PiecewisePower):
        return spec.alpha * spec.q * x ** (-spec.q - 1.0)
    return _central_diff(lambda y: _near_zero(spec, y), x)


def _far_slope(spec: DriftSpec, x: float) -> float:
    if isinstance(spec, PiecewisePower):
        return spec.beta * spec.p * x ** (-spec.p - 1.0)
    return _central_diff(lambda y: _far(spec, y), x)


def _central_diff(fn, x: float, rel: float = 1.0e-5) -> float:
    h = rel * x
    pts = np.array([x - 2 * h, x - h, x + h, x + 2 * h])
    f = fn(pts)
    return float((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h))


@lru_cache(maxsize=256)
def mid_polynomial(spec: DriftSpec) -> Polynomial:
    """Mid segment as a polynomial in z = x - M1 on [0, M2 - M1]."""
    mid = spec.mid
    if mid.kind == "constant":
        return Polynomial([mid.level])

    length = spec.m2 - spec.m1
    y0 = float(_near_zero(spec, np.array(spec.m1)))
    y1 = float(_far(spec, np.array(spec.m2)))
    if mid.kind == "linear":
        return Polynomial([y0, (y1 - y0) / length])

    # cubic Hermite: values and one-sided slopes matched at both junctions
    d0 = _near_zero_slope(spec, spec.m1)
    d1 = _far_slope(spec, spec.m2)
    secant = (y1 - y0) / length
    c2 = (3 * secant - 2 * d0 - d1) / length
    c3 = (d0 + d1 - 2 * secant) / length**2
    return Polynomial([y0, d0, c2, c3])


def _has_mid(spec: DriftSpec) -> bool:
    return not isinstance(spec, PurePower)


# --- public evaluation ------------------------------------------------------


def drift_values(spec: DriftSpec, x: np.ndarray) -> np.ndarray:
    """Vectorized b(x) without the domain check; callers guarantee x > 0."""
    x = np.asarray(x, dtype=float)
    if not _has_mid(spec):
        return _far(spec, x)

    out = np.empty_like(x)
    low = x <= spec.m1
    high = x >= spec.m2
    mid = ~(low | high)
    out[low] = _near_zero(spec, x[low])
    out[high] = _far(spec, x[high])
    out[mid] = mid_polynomial(spec)(x[mid] - spec.m1)
    return out


def eval_drift(spec: DriftSpec, x):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"drift is defined on (0, inf); got x={x!r}")
    out = drift_values(spec, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def drift_derivative(spec: DriftSpec, x):
    """b'(x), one-sided (from the right) at the junctions."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"drift is defined on (0, inf); got x={x!r}")
    xs = np.atleast_1d(arr)

    if isinstance(spec, PurePower):
        out = spec.beta * spec.p * xs ** (-spec.p - 1.0)
    elif isinstance(spec, PiecewisePower):
        out = np.empty_like(xs)
        low = xs <= spec.m1
        high = xs >= spec.m2
        mid = ~(low | high)
        out[low] = spec.alpha * spec.q * xs[low] ** (-spec.q - 1.0)
        out[high] = spec.beta * spec.p * xs[high] ** (-spec.p - 1.0)
        out[mid] = mid_polynomial(spec).deriv()(xs[mid] - spec.m1)
    else:
        out = np.array([_central_diff(lambda y: drift_values(spec, y), v) for v in xs])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _drift_integral_scalar(spec: DriftSpec, x: float) -> float:
    if isinstance(spec, PurePower):
        if spec.p == 1.0:
            # not integrable at 0: measured from x = 1 instead
            return -spec.beta * math.log(x)
        return -spec.beta * x ** (1.0 - spec.p) / (1.0 - spec.p)

    if isinstance(spec, PiecewisePower):
        def low_part(v: float) -> float:
            return -spec.alpha * v ** (1.0 - spec.q) / (1.0 - spec.q)

        def high_part(v: float) -> float:
            return -spec.beta * (v ** (1.0 - spec.p) - spec.m2 ** (1.0 - spec.p)) / (1.0 - spec.p)
    else:
        def low_part(v: float) -> float:
            val, _ = integrate.quad(lambda y: float(_near_zero(spec, np.array(y))), 0.0, v, limit=200)
            return val

        def high_part(v: float) -> float:
            val, _ = integrate.quad(lambda y: float(_far(spec, np.array(y))), spec.m2, v, limit=200)
            return val

    if x <= spec.m1:
        return low_part(x)
    at_m1 = low_part(spec.m1)
    poly = mid_polynomial(spec).integ()
    if x < spec.m2:
        return at_m1 + poly(x - spec.m1)
    at_m2 = at_m1 + poly(spec.m2 - spec.m1)
    return at_m2 + high_part(x)


def drift_integral(spec: DriftSpec, x):
    """
    Integral of b from 0 to x (exact on the power-law and polynomial pieces).

    For PurePower with p = 1 the drift is not integrable at 0 and the
    integral is taken from 1; only differences of it are meaningful there.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"drift is defined on (0, inf); got x={x!r}")
    out = np.array([_drift_integral_scalar(spec, float(v)) for v in np.atleast_1d(arr)])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


@lru_cache(maxsize=256)
def drift_bound(spec: DriftSpec) -> float:
    """max |b| on [M1, M2]; for PurePower, on [1/2, 2]."""
    lo, hi = (spec.m1, spec.m2) if _has_mid(spec) else (0.5, 2.0)
    xs = np.linspace(lo, hi, 4 * GRID_POINTS + 1)
    return float(np.max(np.abs(drift_values(spec, xs))))


def is_smooth(spec: DriftSpec) -> bool:
    """True when b is C^1 on (0, inf), which the h-transform needs."""
    if isinstance(spec, PurePower):
        return spec.p < 1.0
    return isinstance(spec, PiecewisePower) and spec.mid.kind == "smooth"


def with_mid(spec: DriftSpec, mid: MidSegment) -> DriftSpec:
    if not _has_mid(spec):
        raise UsageError("PurePower drifts have no mid segment")
    return type(spec)(**{**spec.dict(), "mid": mid.dict()})


def log_grid(lo: float, hi: float, n: int = GRID_POINTS) -> np.ndarray:
    return np.geomspace(lo, hi, n)


# --- Potter bounds and sandwich envelopes -----------------------------------


class PotterReport(_Frozen):
    holds: bool
    worst_ratio: float
    grid_lo: float
    grid_hi: float
    grid_points: int


class SandwichReport(_Frozen):
    holds: bool
    worst_lower: float
    worst_upper: float
    grid_lo: float
    grid_hi: float
    grid_points: int


def _sample_range(ell: SlowVaryFn, m: float, span: float) -> Tuple[float, float]:
    if m <= 0:
        raise DomainError(f"threshold M must be positive, got {m}")
    if ell.domain == "at_infinity":
        return m, m * span
    return m / span, m


def potter_check(
    ell: SlowVaryFn,
    a: float,
    delta: float,
    m: float,
    sample_pairs: int = 40_000,
    span: float = POTTER_SPAN,
) -> PotterReport:
    """
    Check l(y)/l(x) <= A max((y/x)^d, (y/x)^-d) on all pairs of a log grid
    beyond M. worst_ratio is the largest l(y) / (A l(x) max(...)); the bound
    holds on the grid iff it is <= 1.
    """
    if not a > 1.0 or not delta > 0.0:
        raise DomainError(f"Potter check needs A > 1 and delta > 0 (A={a}, delta={delta})")
    if sample_pairs < 1:
        raise UsageError("potter_check needs at least one sample pair")

    lo, hi = _sample_range(ell, m, span)
    k = max(int(math.ceil(math.sqrt(sample_pairs))), 1)
    xs = log_grid(lo, hi, k) if k > 1 else np.array([lo])
    ls = eval_slow(ell, xs)

    log_ratio = np.abs(np.log(xs)[None, :] - np.log(xs)[:, None])
    bound = a * np.exp(delta * log_ratio) * ls[:, None]
    ratios = ls[None, :] / bound
    worst = float(np.max(ratios))
    return PotterReport(
        holds=worst <= 1.0 + 1e-12,
        worst_ratio=worst,
        grid_lo=lo,
        grid_hi=hi,
        grid_points=k,
    )


def potter_threshold(ell: SlowVaryFn, a: float, delta: float, start: float = 1.0, decades: int = 24) -> float:
    """First M (stepping by decades away from `start`) where potter_check holds."""
    step = 10.0 if ell.domain == "at_infinity" else 0.1
    m = start
    for _ in range(decades + 1):
        if potter_check(ell, a, delta, m, sample_pairs=2500).holds:
            return m
        m *= step
    raise ConstructionError(f"no Potter threshold within {decades} decades of {start}")


def sandwich_bounds(
    ell: SlowVaryFn, delta: float, m: float, n: int = GRID_POINTS, span: float = POTTER_SPAN
) -> SandwichReport:
    """x^-d <= l(x) <= x^d beyond M at infinity; x^d <= l(x) <= x^-d below M at zero."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    lo, hi = _sample_range(ell, m, span)
    xs = log_grid(lo, hi, n)
    ls = eval_slow(ell, xs)
    sign = 1.0 if ell.domain == "at_infinity" else -1.0
    lower = xs ** (-sign * delta)
    upper = xs ** (sign * delta)

    # log-margins: negative means the envelope is violated
    worst_lower = float(np.min(np.log(ls) - np.log(lower)))
    worst_upper = float(np.min(np.log(upper) - np.log(ls)))
    return SandwichReport(
        holds=worst_lower >= 0 and worst_upper >= 0,
        worst_lower=worst_lower,
        worst_upper=worst_upper,
        grid_lo=lo,
        grid_hi=hi,
        grid_points=n,
    )


def _coef_range(c: CoefFn, lo: float, hi: float) -> Tuple[float, float]:
    # limit + amp/(1+x) is monotone in x
    ends = (float(eval_coef(c, lo)), float(eval_coef(c, hi)))
    return min(ends), max(ends)


def sandwich_drifts(
    spec: SlowlyVarying,
    delta: float,
    eps: float,
    max_decades: int = 24,
    n: int = GRID_POINTS,
) -> Tuple[PiecewisePower, PiecewisePower]:
    """
    Pure power-law envelopes lower <= spec <= upper.

    Near 0, |x^-q l1(x)| lies between x^-(q-d) and x^-(q+d) once l1 obeys its
    sandwich bounds below M1; at infinity x^-p l2(x) lies between x^-(p+d)
    and x^-(p-d) beyond M2, and beta(x) stays within beta0 +- eps there. M1
    and M2 are pushed outward a decade at a time until all of that holds.
    """
    if not isinstance(spec, SlowlyVarying):
        raise UsageError("sandwich_drifts needs a SlowlyVarying spec")
    if delta < 0 or eps < 0:
        raise DomainError("delta and eps must be non-negative")
    if not (0 < spec.q - delta and spec.q + delta < 1 and 0 < spec.p - delta and spec.p + delta < 1):
        raise UsageError(f"delta={delta} pushes an exponent outside (0, 1)")
    beta0 = spec.beta.limit
    if not beta0 - eps > 0:
        raise UsageError(f"eps={eps} makes beta0 - eps non-positive")

    m1, m2 = spec.m1, spec.m2
    for _ in range(max_decades + 1):
        if _envelope_ok(spec, delta, eps, m1, m2):
            break
        m1 = m1 / 10.0 if not _near_ok(spec, delta, m1) else m1
        m2 = m2 * 10.0 if not _far_ok(spec, delta, eps, m2) else m2
    else:
        raise ConstructionError(
            f"sandwich bounds fail after moving M1, M2 by {max_decades} decades (M1={m1:g}, M2={m2:g})"
        )
    moved = (m1, m2) != (spec.m1, spec.m2)
    if moved:
        logger.warning(f"sandwich_drifts moved junctions to M1={m1:g}, M2={m2:g}")

    a_lo, a_hi = _coef_range(spec.alpha, 0.0, m1)
    # the x^-q l1 factor sits in [x^-(q-d), x^-(q+d)] for x <= M1 <= 1
    q_lower = spec.q + delta if a_hi >= 0 else spec.q - delta
    q_upper = spec.q + delta if a_lo <= 0 else spec.q - delta

    if moved or spec.mid.kind == "smooth":
        bs = drift_values(spec, log_grid(m1, m2, 4 * n + 1))
        # grid extremes, padded for what falls between grid points
        pad = 1e-4 * (1.0 + float(np.max(np.abs(bs))))
        mid_lower = MidSegment(kind="constant", level=float(np.min(bs)) - pad)
        mid_upper = MidSegment(kind="constant", level=float(np.max(bs)) + pad)
    else:
        mid_lower = mid_upper = spec.mid

    common = dict(m1=m1, m2=m2)
    lower = build(
        PiecewisePower, alpha=a_hi, q=q_lower, beta=beta0 + eps, p=spec.p - delta, mid=mid_lower, **common
    )
    upper = build(
        PiecewisePower, alpha=a_lo, q=q_upper, beta=beta0 - eps, p=spec.p + delta, mid=mid_upper, **common
    )

    xs = log_grid(min(m1, spec.m1) / 100.0, max(m2, spec.m2) * 100.0, n)
    b = drift_values(spec, xs)
    tol = 1e-12 * np.maximum(1.0, np.abs(b))
    bad = (drift_values(lower, xs) > b + tol) | (drift_values(upper, xs) < b - tol)
    if np.any(bad):
        raise ConstructionError(
            f"envelope ordering fails at {int(bad.sum())} of {n} grid points (first x={xs[bad][0]:g})"
        )
    return lower, upper


def _near_ok(spec: SlowlyVarying, delta: float, m1: float) -> bool:
    if m1 > 1.0:
        return False
    if delta == 0:
        return spec.ell1.kind == "one"
    return sandwich_bounds(spec.ell1, delta, m1).holds


def _far_ok(spec: SlowlyVarying, delta: float, eps: float, m2: float) -> bool:
    if m2 < 1.0:
        return False
    lo, hi = _coef_range(spec.beta, m2, math.inf)
    if lo < spec.beta.limit - eps or hi > spec.beta.limit + eps:
        return False
    if delta == 0:
        return spec.ell2.kind == "one"
    return sandwich_bounds(spec.ell2, delta, m2).holds


def _envelope_ok(spec: SlowlyVarying, delta: float, eps: float, m1: float, m2: float) -> bool:
    return _near_ok(spec, delta, m1) and _far_ok(spec, delta, eps, m2)


# --- comparison drifts ------------------------------------------------------


def _extremes(spec: PiecewisePower, lo: float, hi: float) -> Tuple[float, float]:
    """min and max of b on [lo, hi]; the outer pieces are monotone, so ends and mid critical points suffice."""
    pts = [lo, hi, spec.m1, spec.m2]
    poly = mid_polynomial(spec)
    for root in poly.deriv().roots():
        if abs(root.imag) < 1e-12 and 0.0 < root.real < spec.m2 - spec.m1:
            pts.append(spec.m1 + float(root.real))
    xs = np.array(sorted(v for v in pts if lo <= v <= hi))
    vals = drift_values(spec, xs)
    # the mid polynomial's one-sided limit at M1
    vals = np.append(vals, poly(0.0))
    return float(np.min(vals)), float(np.max(vals))


def _widened(spec: DriftSpec, widen: float) -> Tuple[float, float]:
    if not isinstance(spec, PiecewisePower):
        raise UsageError("comparison drifts are built from PiecewisePower specs")
    if not widen >= 1.0:
        raise DomainError(f"widen must be >= 1, got {widen}")
    return spec.m1 / widen, spec.m2 * widen


def _check_order(low: DriftSpec, high: DriftSpec, lo: float, hi: float, n: int) -> None:
    xs = log_grid(lo / 100.0, hi * 100.0, n)
    a, b = drift_values(low, xs), drift_values(high, xs)
    bad = a > b + 1e-12 * np.maximum(1.0, np.abs(b))
    if np.any(bad):
        raise ConstructionError(f"comparison drift ordering fails at x={xs[bad][0]:g}")


def dominating_drift(spec: PiecewisePower, widen: float = 2.0, n: int = GRID_POINTS) -> PiecewisePower:
    """
    b~ >= b: the outer pieces of spec moved out to M1/widen and M2*widen,
    with the mid segment held at the maximum of b over the widened interval.
    """
    m1, m2 = _widened(spec, widen)
    _, top = _extremes(spec, m1, m2)
    upper = build(
        PiecewisePower,
        **{**spec.dict(), "m1": m1, "m2": m2, "mid": MidSegment(kind="constant", level=top).dict()},
    )
    _check_order(spec, upper, m1, m2, n)
    return upper


def dominated_drift(spec: PiecewisePower, widen: float = 2.0, n: int = GRID_POINTS) -> PiecewisePower:
    """b~ <= b: -|alpha| x^-q near 0, mid segment held at the minimum of b over the widened interval."""
    m1, m2 = _widened(spec, widen)
    bottom, _ = _extremes(spec, m1, m2)
    alpha = abs(spec.alpha)
    lower = build(
        PiecewisePower,
        **{
            **spec.dict(),
            "alpha": alpha,
            "m1": m1,
            "m2": m2,
            "mid": MidSegment(kind="constant", level=bottom).dict(),
        },
    )
    _check_order(lower, spec, m1, m2, n)
    return lower
