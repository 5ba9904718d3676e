"""
Closed-form and quadrature quantities: rate constants, BM and Bessel-like
survival, the scale function and the h-transform pair used by the
Feynman-Kac estimator.
"""

import logging
import math
import warnings
from typing import Iterable, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import integrate, special

from halfline.drift import (
    DriftSpec,
    PiecewisePower,
    PurePower,
    drift_derivative,
    drift_integral,
    drift_values,
    is_smooth,
)
from halfline.errors import DomainError, NumericError, UsageError

logger = logging.getLogger("halfline.analytic")

QUAD_EPSREL = 1.0e-9
QUAD_LIMIT = 500
SHIFT_POINTS = 256
MAX_LOG = float(np.log(np.finfo(float).max))


def log_beta(a: float, b: float) -> float:
    if not (a > 0 and b > 0):
        raise DomainError(f"log_beta needs a > 0 and b > 0 (a={a}, b={b})")
    return float(special.betaln(a, b))


def _check_rate_args(p: float, beta: float) -> None:
    if not (0 < p < 1) or not beta > 0:
        raise DomainError(f"rate constants need 0 < p < 1 and beta > 0 (p={p}, beta={beta})")


def gamma_rate(p: float, beta: float) -> float:
    """
    Exponential rate of the survival tail, log P(tau > t) ~ -gamma t^((1-p)/(1+p)).

    gamma = 1/2 p^(-2p/(1+p)) beta^(2/(1+p)) [B(1/2, b) + B(3/2, b)] B(1/2, b)^(-(1-p)/(1+p))
    with b = (1-p)/(2p).
    """
    _check_rate_args(p, beta)
    b = (1.0 - p) / (2.0 * p)
    lb_half = log_beta(0.5, b)
    lb_three_halves = log_beta(1.5, b)
    log_gamma = (
        math.log(0.5)
        - (2.0 * p / (1.0 + p)) * math.log(p)
        + (2.0 / (1.0 + p)) * math.log(beta)
        + float(np.logaddexp(lb_half, lb_three_halves))
        - ((1.0 - p) / (1.0 + p)) * lb_half
    )
    return math.exp(log_gamma)


def variational_infimum(p: float, beta: float) -> float:
    """
    Closed-form infimum of the path functional F over (0, 1]-paths from 0.

    The minimizer is the symmetric arc that leaves 0 and returns to it,
    and its value is gamma_rate(p, beta) (1-p)^(-(1-p)/(1+p)).
    """
    _check_rate_args(p, beta)
    return gamma_rate(p, beta) * (1.0 - p) ** (-(1.0 - p) / (1.0 + p))


def tail_scale(t: float, p: float) -> float:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    return t ** (-(1.0 - p) / (1.0 + p))


def bm_survival(x: float, t: float) -> float:
    """P_x(tau_0 > t) for standard Brownian motion (reflection principle)."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if x <= 0:
        return 0.0
    return float(special.erf(x / math.sqrt(2.0 * t)))


def bm_survival_asymptotic(x: float, t: float) -> float:
    """Leading large-t term 2x / sqrt(2 pi t) of bm_survival."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    return max(x, 0.0) * 2.0 / math.sqrt(2.0 * math.pi * t)


def bessel_like_survival(x: float, t: float, beta: float) -> float:
    """
    P_x(tau_0 > t) for dX = dB - beta/X dt.

    Equals the regularized lower incomplete gamma P(beta + 1/2, x^2 / 2t);
    for beta <= -1/2 the origin is never reached and the result is 1.
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if x <= 0:
        return 0.0
    if beta <= -0.5:
        return 1.0
    return float(special.gammainc(beta + 0.5, x * x / (2.0 * t)))


# --- scale function ---------------------------------------------------------


def _pieces(spec: DriftSpec, x: float) -> Iterable[Tuple[float, float]]:
    cuts = [0.0]
    if isinstance(spec, PurePower):
        cuts += [c for c in (1.0,) if c < x]
    else:
        cuts += [c for c in (spec.m1, spec.m2) if c < x]
    cuts.append(x)
    return zip(cuts, cuts[1:])


def _quad(fn, a: float, b: float, what: str) -> float:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(fn, a, b, epsrel=QUAD_EPSREL, epsabs=0.0, limit=QUAD_LIMIT)
    issues = [w for w in caught if issubclass(w.category, integrate.IntegrationWarning)]
    if issues or not math.isfinite(val):
        raise NumericError(
            f"{what} quadrature did not converge",
            {"interval": (a, b), "value": val, "abs_error": err, "warning": str(issues[0].message) if issues else ""},
        )
    return val


def _check_scale_args(spec: DriftSpec, x: float) -> None:
    if x < 0:
        raise DomainError(f"scale function needs x >= 0, got {x}")
    if isinstance(spec, PurePower) and spec.p == 1.0 and 2.0 * spec.beta <= -1.0:
        # z^(2 beta) is not integrable at 0
        raise DomainError(f"scale function diverges at 0 for PurePower(beta={spec.beta}, p=1)")


def log_scale_function(spec: DriftSpec, x: float) -> float:
    """
    log f(x). The integrand exp(-2 int_0^z b) is divided by its largest value
    on a grid of (0, x] before quadrature, so nothing overflows for large x.
    """
    _check_scale_args(spec, x)
    if x == 0:
        return -math.inf

    grid = np.linspace(x / SHIFT_POINTS, x, SHIFT_POINTS)
    shift = float(np.max(-2.0 * drift_integral(spec, grid)))
    if not (isinstance(spec, PurePower) and spec.p == 1.0):
        shift = max(shift, 0.0)

    def integrand(z: float) -> float:
        if z <= 0:
            return 0.0 if _integrand_vanishes_at_zero(spec) else math.exp(-shift)
        return math.exp(-2.0 * drift_integral(spec, z) - shift)

    total = sum(_quad(integrand, a, b, "scale function") for a, b in _pieces(spec, x))
    return shift + math.log(total)


def scale_function(spec: DriftSpec, x: float) -> float:
    """
    f(x) = int_0^x exp(-2 int_0^z b) dz, the scale function vanishing at 0.

    The inner integral is exact on every power-law piece; the outer one is
    adaptive quadrature, split at the junctions.
    """
    log_f = log_scale_function(spec, x)
    if log_f > MAX_LOG:
        raise NumericError("scale function overflows a float", {"x": x, "log_scale": log_f})
    return math.exp(log_f)


def _integrand_vanishes_at_zero(spec: DriftSpec) -> bool:
    return isinstance(spec, PurePower) and spec.p == 1.0 and spec.beta > 0


def two_sided_exit_prob(spec: DriftSpec, x: float, r1: float, r2: float) -> float:
    """
    P_x(X reaches r1 before r2) = (f(x) - f(r2)) / (f(r1) - f(r2)), taken as
    a ratio of expm1 terms in log f so that large r2 stays finite.
    """
    if not (0 < r1 < x < r2):
        raise UsageError(f"exit probability needs 0 < r1 < x < r2 (r1={r1}, x={x}, r2={r2})")
    l1, lx, l2 = (log_scale_function(spec, v) for v in (r1, x, r2))
    return math.expm1(lx - l2) / math.expm1(l1 - l2)


# --- h-transform ------------------------------------------------------------


class HTransformPair(BaseModel):
    """
    h(x) = exp(int_0^x b) and V = -(b^2 + b')/2, so that h''/2 + V h = 0.

    `constant` is C in h(x) = C exp(-beta x^(1-p) / (1-p)) beyond M2.
    """

    spec: DriftSpec
    constant: float

    class Config:
        frozen = True

    def log_h(self, x):
        return drift_integral(self.spec, x)

    def h(self, x):
        return np.exp(self.log_h(x))

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        b = drift_values(self.spec, np.atleast_1d(x))
        db = np.atleast_1d(drift_derivative(self.spec, np.atleast_1d(x)))
        out = -0.5 * (b * b + db)
        return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def h_transform(spec: DriftSpec) -> HTransformPair:
    if not is_smooth(spec):
        raise UsageError("h_transform needs a C^1 drift (smooth mid segment or PurePower with p < 1)")
    if isinstance(spec, PiecewisePower):
        m2 = spec.m2
        log_c = drift_integral(spec, m2) + spec.beta * m2 ** (1.0 - spec.p) / (1.0 - spec.p)
    else:
        log_c = 0.0
    return HTransformPair(spec=spec, constant=math.exp(log_c))
