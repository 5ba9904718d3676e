"""
Path functional F(w) = b^2/2 int |w|^-2p + b/(1-p) |w(1)|^(1-p) + 1/2 int w'^2
on paths over [0, 1] starting at 0, its J part, and a discrete minimizer.

Two quadratures are available:

- midpoint: singular term at cell midpoints, kinetic term by forward
  differences
- power: each cell is taken linear in w^(1+p), and both integrals are then
  exact; c u^(1/(1+p)) is reproduced without error
"""

import logging
import math
from pathlib import Path as PathLib
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, validator
from scipy import linalg, optimize, special

from halfline import report
from halfline.analytic import log_beta
from halfline.errors import DomainError, NonConvergenceError, UsageError
from halfline.mc import TiltProfile

logger = logging.getLogger("halfline.variational")

Scheme = Literal["midpoint", "power"]

FLOOR = 1.0e-8
ARMIJO = 1.0e-4
MIN_STEP = 1.0e-14
STALL_SLACK = 100.0


class Path(BaseModel):
    values: Tuple[float, ...]

    class Config:
        frozen = True

    @validator("values")
    def _pinned_at_zero(cls, v):
        if len(v) < 2:
            raise ValueError("a path needs at least two grid values")
        if v[0] != 0.0:
            raise ValueError("paths start at 0")
        return v

    @property
    def n(self) -> int:
        return len(self.values) - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def make_path(values) -> Path:
    try:
        return Path(values=tuple(float(v) for v in values))
    except ValidationError as e:
        raise DomainError(f"invalid path: {e}") from e


class FunctionalValue(BaseModel):
    total: float
    singular_term: float
    boundary_term: float
    kinetic_term: float
    scheme: Scheme


class MinimizeResult(BaseModel):
    path: Path
    value: float
    iterations: int
    converged: bool
    value_log: List[float]
    gradient_norm: float
    stationarity: float


def _check_params(p: float, beta: float) -> None:
    if not 0 < p < 1 or not beta > 0:
        raise DomainError(f"F needs 0 < p < 1 and beta > 0 (p={p}, beta={beta})")


# --- quadratures ------------------------------------------------------------


def _cell_mean(a: np.ndarray, b: np.ndarray, r: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean of w^-r over each cell [a, b] and its partials in a and b.

    Cells with |b - a| <= 1e-6 mid use the second-order expansion about
    the midpoint instead of the difference quotient.
    """
    d = b - a
    m = 0.5 * (a + b)
    close = np.abs(d) <= 1e-6 * m
    k = r * (r + 1.0) / 24.0

    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(close, m**-r * (1.0 + k * (d / m) ** 2), (b ** (1.0 - r) - a ** (1.0 - r)) / ((1.0 - r) * d))
        lead = -0.5 * r * m ** (-r - 1.0)
        skew = 2.0 * k * d * m ** (-r - 2.0)
        d_b = np.where(close, lead + skew, (b**-r - mean) / d)
        d_a = np.where(close, lead - skew, (mean - a**-r) / d)
    return mean, d_a, d_b


def _power_parts(w: np.ndarray, p: float, beta: float) -> Tuple[float, float, float]:
    n = w.size - 1
    h = 1.0 / n
    r = 2.0 * p / (1.0 + p)
    s = 1.0 / (1.0 + p)
    z = w ** (1.0 + p)
    mean, _, _ = _cell_mean(z[:-1], z[1:], r)
    d = np.diff(z)
    kinetic = 0.5 * s * s * float(np.sum(d * d * mean)) / h
    singular = 0.5 * beta * beta * h * float(np.sum(mean))
    boundary = beta * w[-1] ** (1.0 - p) / (1.0 - p)
    return singular, boundary, kinetic


def _midpoint_parts(w: np.ndarray, p: float, beta: float) -> Tuple[float, float, float]:
    n = w.size - 1
    h = 1.0 / n
    mids = 0.5 * (w[:-1] + w[1:])
    singular = 0.5 * beta * beta * h * float(np.sum(mids ** (-2.0 * p)))
    kinetic = 0.5 * float(np.sum(np.diff(w) ** 2)) / h
    boundary = beta * w[-1] ** (1.0 - p) / (1.0 - p)
    return singular, boundary, kinetic


def evaluate_F(path: Path, p: float, beta: float, scheme: Scheme = "midpoint") -> FunctionalValue:
    _check_params(p, beta)
    w = path.array()
    if np.any(w[1:-1] <= 0) or w[-1] < 0:
        raise DomainError("interior path values must be positive")
    parts = _power_parts(w, p, beta) if scheme == "power" else _midpoint_parts(w, p, beta)
    singular, boundary, kinetic = parts
    return FunctionalValue(
        total=singular + boundary + kinetic,
        singular_term=singular,
        boundary_term=boundary,
        kinetic_term=kinetic,
        scheme=scheme,
    )


def evaluate_J(path: Path, p: float, beta: float, scheme: Scheme = "midpoint") -> float:
    """F without its kinetic part."""
    val = evaluate_F(path, p, beta, scheme)
    return val.singular_term + val.boundary_term


def _power_value_grad(w: np.ndarray, p: float, beta: float) -> Tuple[float, np.ndarray]:
    """Power-scheme F and its gradient in the path values (index 0 excluded)."""
    n = w.size - 1
    h = 1.0 / n
    r = 2.0 * p / (1.0 + p)
    s = 1.0 / (1.0 + p)
    z = w ** (1.0 + p)
    mean, d_a, d_b = _cell_mean(z[:-1], z[1:], r)
    d = np.diff(z)

    kin = 0.5 * s * s / h
    sing = 0.5 * beta * beta * h
    value = kin * float(np.sum(d * d * mean)) + sing * float(np.sum(mean)) + beta * w[-1] ** (1.0 - p) / (1.0 - p)

    with np.errstate(divide="ignore", invalid="ignore"):
        grad_z = np.zeros_like(z)
        grad_z[1:] += kin * (2.0 * d * mean + d * d * d_b) + sing * d_b
        grad_z[:-1] += kin * (-2.0 * d * mean + d * d * d_a) + sing * d_a

        grad = grad_z[1:] * (1.0 + p) * w[1:] ** p
        grad[-1] += beta * w[-1] ** (-p)
    # no finite one-sided derivative at an endpoint sitting on 0
    if w[-1] == 0.0:
        grad[-1] = 0.0
    return value, grad


# --- minimizer --------------------------------------------------------------


def _sobolev_bands(n: int) -> np.ndarray:
    """(1/h) tridiag(-1, 2, -1) on nodes 1..n, Neumann row at the free end."""
    h = 1.0 / n
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0 / h
    ab[1, :] = 2.0 / h
    ab[1, -1] = 1.0 / h
    ab[2, :-1] = -1.0 / h
    return ab


def _initial_path(n: int, p: float, beta: float, init: str) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n + 1)
    if init == "power":
        shape = u ** (1.0 / (1.0 + p))
    elif init == "linear":
        shape = u
    else:
        raise UsageError(f"unknown initialization {init!r}")

    def objective(log_c: float) -> float:
        w = np.maximum(math.exp(log_c) * shape, FLOOR)
        w[0] = 0.0
        return _power_value_grad(w, p, beta)[0]

    found = optimize.minimize_scalar(objective, bounds=(-8.0, 8.0), method="bounded")
    w = np.maximum(math.exp(found.x) * shape, FLOOR)
    w[0] = 0.0
    return w


def _lower_bounds(n: int) -> np.ndarray:
    """Floor on nodes 1..n; the free endpoint may come down to 0 itself."""
    lower = np.full(n, FLOOR)
    lower[-1] = 0.0
    return lower


def _projected_direction(bands: np.ndarray, w: np.ndarray, grad: np.ndarray, lower: np.ndarray):
    """
    Sobolev gradient restricted to the nodes off their bound.

    A node sitting on its bound with the gradient pushing it further down is
    pinned: its row and column of the kinetic operator become the identity
    and its right-hand side 0.
    """
    active = (w[1:] <= lower) & (grad >= 0.0)
    rhs = np.where(active, 0.0, grad)
    if not active.any():
        return linalg.solve_banded((1, 1), bands, rhs), active, rhs

    ab = bands.copy()
    idx = np.flatnonzero(active)
    ab[1, idx] = 1.0
    ab[0, idx] = 0.0
    ab[2, idx] = 0.0
    right = idx[idx + 1 < ab.shape[1]]
    ab[0, right + 1] = 0.0
    left = idx[idx > 0]
    ab[2, left - 1] = 0.0
    return linalg.solve_banded((1, 1), ab, rhs), active, rhs


def _settle_endpoint(w: np.ndarray, value: float, grad: np.ndarray, p: float, beta: float):
    """
    Re-optimize the free endpoint alone, the other nodes held fixed.

    Only the last cell and the boundary term depend on w(1), so the scalar
    search runs on those; candidates (including w(1) = 0) are then checked on
    the full functional and kept only when F does not go up.
    """
    n = w.size - 1
    h = 1.0 / n
    r = 2.0 * p / (1.0 + p)
    s = 1.0 / (1.0 + p)
    za = np.array([w[-2] ** (1.0 + p)])

    def last_cell(end: float) -> float:
        zb = np.array([end ** (1.0 + p)])
        mean = float(_cell_mean(za, zb, r)[0][0])
        d = float(zb[0] - za[0])
        return 0.5 * s * s * d * d * mean / h + 0.5 * beta * beta * h * mean + beta * end ** (1.0 - p) / (1.0 - p)

    found = optimize.minimize_scalar(
        last_cell, bounds=(0.0, 2.0 * max(w[-1], w[-2])), method="bounded", options={"xatol": 1e-14}
    )
    for end in (float(found.x), 0.0):
        trial = w.copy()
        trial[-1] = end
        trial_value, trial_grad = _power_value_grad(trial, p, beta)
        if trial_value <= value:
            w, value, grad = trial, trial_value, trial_grad
    return w, value, grad


def minimize_F(
    p: float,
    beta: float,
    n: int = 2048,
    tol: float = 1.0e-7,
    max_iters: int = 20_000,
    init: str = "power",
) -> MinimizeResult:
    """
    Minimize the power-scheme F over grid paths with w(0) = 0 and w(1) free.

    Projected descent along the gradient in the discrete H^1 metric, with
    Armijo backtracking, the floor w >= 1e-8 on interior nodes and w(1) >= 0.
    After each accepted step the endpoint is re-optimized on its own.

    Converged means the H^1 norm of the projected gradient, relative to
    1 + |F|, is at most tol. A line search that stalls counts as converged
    only within 100 tol; otherwise, as when max_iters runs out, the result
    is returned with converged=False and a warning is logged.
    """
    _check_params(p, beta)
    if n < 64:
        raise UsageError(f"minimize_F needs n >= 64, got {n}")

    w = _initial_path(n, p, beta, init)
    bands = _sobolev_bands(n)
    lower = _lower_bounds(n)
    value, grad = _power_value_grad(w, p, beta)
    values = [value]
    step = 1.0
    converged = False
    iterations = 0

    while True:
        direction, active, free_grad = _projected_direction(bands, w, grad, lower)
        stationarity = math.sqrt(max(float(free_grad @ direction), 0.0)) / (1.0 + abs(value))
        if stationarity <= tol:
            converged = True
            break
        if iterations == max_iters:
            logger.warning(
                f"minimize_F(p={p}, beta={beta}, n={n}) stopped after {max_iters} iterations, "
                f"stationarity {stationarity:.3g}"
            )
            break
        iterations += 1

        direction = np.where(active, 0.0, direction)
        while True:
            trial = w.copy()
            trial[1:] = np.maximum(w[1:] - step * direction, lower)
            trial_value, trial_grad = _power_value_grad(trial, p, beta)
            if trial_value <= value - ARMIJO * float(free_grad @ (w[1:] - trial[1:])):
                break
            step *= 0.5
            if step < MIN_STEP:
                break

        if step < MIN_STEP:
            converged = stationarity <= STALL_SLACK * tol
            if not converged:
                logger.warning(
                    f"minimize_F(p={p}, beta={beta}, n={n}) line search stalled at iteration {iterations}, "
                    f"stationarity {stationarity:.3g}"
                )
            break

        w, value, grad = _settle_endpoint(trial, trial_value, trial_grad, p, beta)
        values.append(value)
        step = min(1.0, 2.0 * step)

    logger.info(
        f"minimize_F(p={p}, beta={beta}, n={n}): F={value:.10g} after {iterations} iterations, "
        f"stationarity {stationarity:.3g}"
    )
    return MinimizeResult(
        path=make_path(w),
        value=value,
        iterations=iterations,
        converged=converged,
        value_log=values,
        gradient_norm=float(np.max(np.abs(free_grad))),
        stationarity=stationarity,
    )


def exact_minimizer(p: float, beta: float, n: int) -> Path:
    """
    The continuum minimizer of F on the grid: a symmetric arc leaving 0 and
    returning to it, w' = +-beta sqrt(w^-2p - m^-2p) with peak m.
    """
    _check_params(p, beta)
    b = (1.0 - p) / (2.0 * p)
    peak = (beta * p / ((1.0 - p) * math.exp(log_beta(0.5, b)))) ** (1.0 / (1.0 + p))
    u = np.linspace(0.0, 1.0, n + 1)
    half = np.minimum(u, 1.0 - u)
    level = special.betaincinv(b + 1.0, 0.5, np.clip(2.0 * half, 0.0, 1.0))
    w = peak * level ** (1.0 / (2.0 * p))
    w[0] = 0.0
    return make_path(w)


def optimal_tilt(
    p: float,
    beta: float,
    n: int,
    t: float,
    delta: float = 0.05,
    control: str = "track",
    tol: float = 1.0e-7,
    max_iters: int = 20_000,
    result: Optional[MinimizeResult] = None,
) -> TiltProfile:
    """Wrap the minimizer as a tilt profile for a horizon t."""
    result = result or minimize_F(p, beta, n=n, tol=tol, max_iters=max_iters)
    if not result.converged:
        raise NonConvergenceError(
            "minimizer did not converge; no tilt profile",
            {"iterations": result.iterations, "value": result.value},
        )
    try:
        return TiltProfile(values=result.path.values, p=p, t=t, delta=delta, control=control)
    except ValidationError as e:
        raise UsageError(f"invalid tilt profile: {e}") from e


def dump_path(path: Path, out) -> PathLib:
    """Write a grid path as CSV (u, omega)."""
    return report.write_csv(report.path_rows(path.grid, path.values), "path", out)
