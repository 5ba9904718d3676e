"""
Monte Carlo survival estimators.

All schemes share one chunked Euler-Maruyama loop with
- adaptive steps dt = clamp(dt_scale * x^2, dt_floor, dt_max),
- absorption at `absorb_at` plus a Brownian-bridge crossing test,
- drift increments capped at drift_cap * sqrt(dt),
and differ only in what each lane carries: a hit time, a Feynman-Kac
weight, a likelihood ratio or a second coupled copy.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, conint, confloat, root_validator, validator
from scipy import optimize

from halfline import rng
from halfline.analytic import h_transform
from halfline.drift import DriftSpec, drift_values, log_grid
from halfline.errors import DomainError, NumericError, UsageError
from halfline.report import trajectory_rows, write_csv
from halfline.settings import SEED, WORKERS

logger = logging.getLogger("halfline.mc")

Scheme = Literal["direct", "feynman_kac", "tilted"]

EXPONENT_LO = 1.0e-6
EXPONENT_HI = 1.0 - 1.0e-6


class SimConfig(BaseModel):
    n_paths: conint(ge=1) = 10_000
    dt_max: confloat(gt=0) = 1.0e-3
    dt_floor: confloat(gt=0) = 1.0e-7
    dt_scale: confloat(gt=0) = 0.1
    absorb_at: confloat(gt=0) = 1.0e-6
    bridge_correction: bool = True
    drift_cap: confloat(gt=0) = 10.0
    horizon: confloat(gt=0) = 100.0
    seed: int = SEED
    workers: conint(ge=1) = WORKERS
    chunk_size: conint(ge=1) = rng.CHUNK_SIZE
    max_iterations: conint(ge=1) = 20_000_000

    class Config:
        frozen = True
        extra = "forbid"

    @root_validator(skip_on_failure=True)
    def _floor_below_max(cls, values):
        if values["dt_floor"] > values["dt_max"]:
            raise ValueError("dt_floor must not exceed dt_max")
        return values


class SimReport(BaseModel):
    n_paths: int
    lane_steps: int = 0
    capped_steps: int = 0
    floor_steps: int = 0
    bridge_kills: int = 0
    censored: int = 0
    warnings: List[str] = []


class SurvivalEstimate(BaseModel):
    p_hat: confloat(ge=0, le=1)
    stderr: confloat(ge=0)
    n_paths: int
    t: float
    x0: float
    scheme: Scheme
    report: SimReport


class ExitEstimate(BaseModel):
    p_hat: confloat(ge=0, le=1)
    stderr: confloat(ge=0)
    n_paths: int
    x0: float
    r1: float
    r2: float
    report: SimReport


class CouplingReport(BaseModel):
    violation_fraction: float
    violations: int
    samples: int
    max_gap: float
    report: SimReport


class RateFitResult(BaseModel):
    rate_hat: float
    exponent_hat: confloat(gt=0, lt=1)
    residual_rms: float
    points_used: int
    dropped: int = 0


class PathRecord(BaseModel):
    path_index: int
    hit_time: float
    endpoint: float
    censored: bool
    times: List[float] = []
    values: List[float] = []


class TiltProfile(BaseModel):
    """
    Deterministic shift for the tilted estimator.

    `values` is a non-negative path g on the uniform grid of [0, 1], shifted
    to g + delta. On [0, t] the target path is L (g + delta)(s / t) with
    L = t^(1/(1+p)) = sqrt(t / eps); `shift` adds the drift L/t g'(s/t),
    `track` also cancels b along the target path so the mean motion
    follows it.
    """

    values: Tuple[float, ...]
    p: confloat(gt=0, lt=1)
    t: confloat(gt=0)
    delta: confloat(gt=0) = 0.05
    control: Literal["shift", "track"] = "track"

    class Config:
        frozen = True
        extra = "forbid"

    @validator("values")
    def _non_negative(cls, v):
        if len(v) < 2:
            raise ValueError("tilt profile needs at least two grid values")
        if not all(math.isfinite(g) for g in v):
            raise ValueError("tilt profile values must be finite")
        if min(v) < 0.0:
            raise ValueError("g must be non-negative so that g + delta >= delta > 0")
        return v

    @property
    def scale(self) -> float:
        return self.t ** (1.0 / (1.0 + self.p))

    @property
    def cells(self) -> int:
        return len(self.values) - 1

    @property
    def slopes(self) -> np.ndarray:
        """g' on each grid cell by forward differences."""
        return np.diff(np.asarray(self.values)) * self.cells

    def cell_drift(self, spec: DriftSpec) -> np.ndarray:
        """Added drift on each of the `cells` equal time cells of [0, t]."""
        g = np.asarray(self.values)
        theta = (self.scale / self.t) * self.slopes
        if self.control == "track":
            target = self.scale * (0.5 * (g[:-1] + g[1:]) + self.delta)
            theta = theta - drift_values(spec, target)
        return theta


def make_tilt(values, p: float, t: float, delta: float = 0.05, control: str = "track") -> TiltProfile:
    try:
        return TiltProfile(values=tuple(float(v) for v in values), p=p, t=t, delta=delta, control=control)
    except ValidationError as e:
        raise UsageError(f"invalid tilt profile: {e}") from e


def zero_tilt(p: float, t: float, cells: int = 64, delta: float = 0.05) -> TiltProfile:
    return make_tilt((0.0,) * (cells + 1), p=p, t=t, delta=delta, control="shift")


# --- chunk kernel -----------------------------------------------------------


@dataclass(frozen=True)
class _ChunkTask:
    mode: str
    spec: DriftSpec
    x0: float
    horizon: float
    cfg: SimConfig
    chunk: int
    lanes: int
    spec_high: Optional[DriftSpec] = None
    r1: float = 0.0
    r2: float = math.inf
    tilt: Optional[TiltProfile] = None
    only_lane: Optional[int] = None
    coupling_tol: float = 1.0e-12


@dataclass
class _ChunkResult:
    hit_time: np.ndarray
    endpoint: np.ndarray
    log_weight: np.ndarray
    exit_low: np.ndarray
    lane_steps: int = 0
    capped: int = 0
    floored: int = 0
    bridge_kills: int = 0
    violations: int = 0
    samples: int = 0
    max_gap: float = -math.inf
    trajectory: List[Tuple[float, float]] = field(default_factory=list)


def _step_sizes(x: np.ndarray, t: np.ndarray, horizon: float, cfg: SimConfig) -> Tuple[np.ndarray, int]:
    raw = cfg.dt_scale * x * x
    floored = int(np.count_nonzero(raw < cfg.dt_floor))
    dt = np.clip(raw, cfg.dt_floor, cfg.dt_max)
    return np.minimum(dt, horizon - t), floored


def _drift_step(spec: DriftSpec, x: np.ndarray, dt: np.ndarray, cfg: SimConfig) -> Tuple[np.ndarray, int]:
    inc = drift_values(spec, x) * dt
    cap = cfg.drift_cap * np.sqrt(dt)
    capped = int(np.count_nonzero(np.abs(inc) > cap))
    return np.clip(inc, -cap, cap), capped


def _crossed(x_old: np.ndarray, x_new: np.ndarray, dt: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Bridge test: a lane that stayed positive still touched 0 w.p. exp(-2 x x' / dt)."""
    return u < np.exp(-2.0 * x_old * np.maximum(x_new, 0.0) / dt)


def _run_chunk(task: _ChunkTask) -> _ChunkResult:
    if task.mode == "coupled":
        return _run_coupled(task)
    if task.mode == "two_sided":
        return _run_two_sided(task)

    cfg = task.cfg
    lanes = task.lanes
    streams = rng.ChunkStreams(cfg.seed, task.chunk, lanes)

    x = np.full(lanes, task.x0, dtype=float)
    t = np.zeros(lanes)
    hit = np.full(lanes, math.inf)
    log_w = np.zeros(lanes)
    alive = np.ones(lanes, dtype=bool)
    if task.only_lane is not None:
        alive[:] = False
        alive[task.only_lane] = True
    res = _ChunkResult(hit, x, log_w, np.zeros(lanes, dtype=bool))

    pair = h_transform(task.spec) if task.mode == "feynman_kac" else None
    theta_cells = task.tilt.cell_drift(task.spec) if task.mode == "tilted" else None
    cell_len = task.horizon / task.tilt.cells if task.mode == "tilted" else math.inf
    finish = task.horizon * (1.0 - 1e-12)

    if task.only_lane is not None:
        res.trajectory.append((0.0, task.x0))

    for iteration in range(cfg.max_iterations):
        if not alive.any():
            break
        z, u = streams.step()
        idx = np.flatnonzero(alive)
        xa, ta = x[idx], t[idx]
        dt, floored = _step_sizes(xa, ta, task.horizon, cfg)
        res.floored += floored

        if theta_cells is not None:
            cell = np.minimum((ta / cell_len + 1e-9).astype(int), task.tilt.cells - 1)
            dt = np.minimum(dt, (cell + 1) * cell_len - ta)
            dt = np.maximum(dt, 1e-15)

        dw = np.sqrt(dt) * z[idx]
        if pair is None:
            inc, capped = _drift_step(task.spec, xa, dt, cfg)
            res.capped += capped
        else:
            inc = 0.0
        if theta_cells is not None:
            theta = theta_cells[cell]
            inc = inc + theta * dt
            log_w[idx] += -theta * dw - 0.5 * theta * theta * dt

        xn = xa + inc + dw
        tn = ta + dt
        dead = xn <= cfg.absorb_at
        if cfg.bridge_correction:
            bridged = ~dead & _crossed(xa, xn, dt, u[idx])
            res.bridge_kills += int(np.count_nonzero(bridged))
            dead |= bridged

        if pair is not None:
            keep = ~dead
            v_old = pair.potential(xa[keep])
            v_new = pair.potential(xn[keep])
            log_w[idx[keep]] += 0.5 * (v_old + v_new) * dt[keep]

        res.lane_steps += idx.size
        hit[idx[dead]] = tn[dead]
        x[idx] = np.where(dead, 0.0, xn)
        t[idx] = tn
        alive[idx[dead | (tn >= finish)]] = False

        if task.only_lane is not None:
            res.trajectory.append((float(tn[0]), float(x[task.only_lane])))
    else:
        raise NumericError(
            "path simulation did not finish", {"chunk": task.chunk, "iterations": cfg.max_iterations}
        )

    if pair is not None:
        survived = np.isinf(hit)
        if task.only_lane is not None:
            survived[np.arange(lanes) != task.only_lane] = False
        log_w[survived] += pair.log_h(x[survived]) - pair.log_h(task.x0)
    return res


def _run_two_sided(task: _ChunkTask) -> _ChunkResult:
    cfg = task.cfg
    lanes = task.lanes
    r1, r2 = task.r1, task.r2
    streams = rng.ChunkStreams(cfg.seed, task.chunk, lanes)

    x = np.full(lanes, task.x0, dtype=float)
    t = np.zeros(lanes)
    hit = np.full(lanes, math.inf)
    low = np.zeros(lanes, dtype=bool)
    alive = np.ones(lanes, dtype=bool)
    res = _ChunkResult(hit, x, np.zeros(lanes), low)

    for iteration in range(cfg.max_iterations):
        if not alive.any():
            break
        z, u = streams.step()
        idx = np.flatnonzero(alive)
        xa, ta = x[idx], t[idx]
        dt, floored = _step_sizes(xa, ta, task.horizon, cfg)
        res.floored += floored
        inc, capped = _drift_step(task.spec, xa, dt, cfg)
        res.capped += capped

        xn = xa + inc + np.sqrt(dt) * z[idx]
        tn = ta + dt
        out_low = xn <= r1
        out_high = xn >= r2
        if cfg.bridge_correction:
            inside = ~(out_low | out_high)
            p_low = np.exp(-2.0 * (xa - r1) * np.maximum(xn - r1, 0.0) / dt)
            p_high = np.exp(-2.0 * (r2 - xa) * np.maximum(r2 - xn, 0.0) / dt)
            ua = u[idx]
            bridged_low = inside & (ua < p_low)
            bridged_high = inside & ~bridged_low & (ua > 1.0 - p_high)
            res.bridge_kills += int(np.count_nonzero(bridged_low | bridged_high))
            out_low |= bridged_low
            out_high |= bridged_high

        exited = out_low | out_high
        res.lane_steps += idx.size
        hit[idx[exited]] = tn[exited]
        low[idx[out_low]] = True
        x[idx] = xn
        t[idx] = tn
        alive[idx[exited | (tn >= task.horizon)]] = False
    else:
        raise NumericError("exit simulation did not finish", {"chunk": task.chunk})
    return res


def _run_coupled(task: _ChunkTask) -> _ChunkResult:
    """Two drifts driven by the same normals, uniforms and step sizes."""
    cfg = task.cfg
    lanes = task.lanes
    streams = rng.ChunkStreams(cfg.seed, task.chunk, lanes)

    x_lo = np.full(lanes, task.x0, dtype=float)
    x_hi = np.full(lanes, task.x0, dtype=float)
    t = np.zeros(lanes)
    hit = np.full(lanes, math.inf)
    alive_lo = np.ones(lanes, dtype=bool)
    alive_hi = np.ones(lanes, dtype=bool)
    res = _ChunkResult(hit, x_lo, np.zeros(lanes), np.zeros(lanes, dtype=bool))
    finish = task.horizon * (1.0 - 1e-12)

    for iteration in range(cfg.max_iterations):
        active = alive_lo | alive_hi
        if not active.any():
            break
        z, u = streams.step()
        idx = np.flatnonzero(active)
        lo_live, hi_live = alive_lo[idx], alive_hi[idx]
        ta = t[idx]

        # shared step: the finer of the two live copies
        nearest = np.minimum(np.where(lo_live, x_lo[idx], np.inf), np.where(hi_live, x_hi[idx], np.inf))
        dt, floored = _step_sizes(nearest, ta, task.horizon, cfg)
        res.floored += floored
        dw = np.sqrt(dt) * z[idx]
        ua = u[idx]
        tn = ta + dt

        for xs, live_all, spec in ((x_lo, alive_lo, task.spec), (x_hi, alive_hi, task.spec_high)):
            sub = idx[live_all[idx]]
            if sub.size == 0:
                continue
            pos = live_all[idx]
            xa = xs[sub]
            inc, capped = _drift_step(spec, xa, dt[pos], cfg)
            res.capped += capped
            xn = xa + inc + dw[pos]
            dead = xn <= cfg.absorb_at
            if cfg.bridge_correction:
                bridged = ~dead & _crossed(xa, xn, dt[pos], ua[pos])
                res.bridge_kills += int(np.count_nonzero(bridged))
                dead |= bridged
            xs[sub] = np.where(dead, 0.0, xn)
            live_all[sub[dead]] = False
            res.lane_steps += sub.size

        newly = lo_live & ~alive_lo[idx]
        hit[idx[newly]] = tn[newly]

        compared = idx[lo_live]
        gap = x_lo[compared] - x_hi[compared]
        res.samples += compared.size
        res.violations += int(np.count_nonzero(gap > task.coupling_tol * np.maximum(1.0, np.abs(x_hi[compared]))))
        if compared.size:
            res.max_gap = max(res.max_gap, float(np.max(gap)))

        t[idx] = tn
        done = idx[tn >= finish]
        alive_lo[done] = False
        alive_hi[done] = False
    else:
        raise NumericError("coupled simulation did not finish", {"chunk": task.chunk})
    return res


def _run_tasks(tasks: Sequence[_ChunkTask], workers: int) -> List[_ChunkResult]:
    """Results in chunk order, whatever the worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [_run_chunk(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as executor:
        return list(executor.map(_run_chunk, tasks))


def _tasks(mode: str, spec: DriftSpec, x0: float, horizon: float, cfg: SimConfig, **extra) -> List[_ChunkTask]:
    return [
        _ChunkTask(mode=mode, spec=spec, x0=x0, horizon=horizon, cfg=cfg, chunk=k, lanes=n, **extra)
        for k, (_, n) in enumerate(rng.chunk_bounds(cfg.n_paths, cfg.chunk_size))
    ]


def _report(results: Sequence[_ChunkResult], n_paths: int) -> SimReport:
    report = SimReport(
        n_paths=n_paths,
        lane_steps=sum(r.lane_steps for r in results),
        capped_steps=sum(r.capped for r in results),
        floor_steps=sum(r.floored for r in results),
        bridge_kills=sum(r.bridge_kills for r in results),
    )
    if report.capped_steps:
        msg = f"drift increment capped on {report.capped_steps} of {report.lane_steps} steps"
        logger.warning(msg)
        report.warnings.append(msg)
    return report


def _check_start(x0: float, t: float, cfg: SimConfig) -> None:
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")
    if t > cfg.horizon:
        raise UsageError(f"t={t} is beyond the configured horizon {cfg.horizon}")
    if not x0 > cfg.absorb_at:
        raise UsageError(f"starting point {x0} must lie above absorb_at={cfg.absorb_at}")


def _mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def _clipped(mean: float, report: SimReport, what: str) -> float:
    if 0.0 <= mean <= 1.0:
        return mean
    msg = f"{what} estimate {mean:.6g} clipped to [0, 1]"
    logger.warning(msg)
    report.warnings.append(msg)
    return min(max(mean, 0.0), 1.0)


# --- public API -------------------------------------------------------------


@dataclass
class PathBatch:
    hit_time: np.ndarray
    endpoint: np.ndarray
    report: SimReport

    def survival(self, t: float) -> np.ndarray:
        return (self.hit_time > t).astype(float)


def simulate_paths(spec: DriftSpec, x0: float, cfg: SimConfig, t: Optional[float] = None) -> PathBatch:
    t = cfg.horizon if t is None else t
    _check_start(x0, t, cfg)
    results = _run_tasks(_tasks("direct", spec, x0, t, cfg), cfg.workers)
    return PathBatch(
        hit_time=np.concatenate([r.hit_time for r in results]),
        endpoint=np.concatenate([r.endpoint for r in results]),
        report=_report(results, cfg.n_paths),
    )


def simulate_path(
    spec: DriftSpec, x0: float, cfg: SimConfig, path_index: int, t: Optional[float] = None
) -> PathRecord:
    """One path of a batch, reproduced on its own, with its full trajectory."""
    t = cfg.horizon if t is None else t
    _check_start(x0, t, cfg)
    if not 0 <= path_index < cfg.n_paths:
        raise UsageError(f"path index {path_index} outside 0..{cfg.n_paths - 1}")
    chunk, lane = rng.locate(path_index, cfg.chunk_size)
    _, lanes = rng.chunk_bounds(cfg.n_paths, cfg.chunk_size)[chunk]
    task = _ChunkTask(mode="direct", spec=spec, x0=x0, horizon=t, cfg=cfg, chunk=chunk, lanes=lanes, only_lane=lane)
    res = _run_chunk(task)
    times, values = zip(*res.trajectory)
    hit = float(res.hit_time[lane])
    return PathRecord(
        path_index=path_index,
        hit_time=hit,
        endpoint=float(res.endpoint[lane]),
        censored=math.isinf(hit),
        times=list(times),
        values=list(values),
    )


def estimate_survival(spec: DriftSpec, x0: float, t: float, cfg: SimConfig) -> SurvivalEstimate:
    batch = simulate_paths(spec, x0, cfg, t)
    return _survival_estimate(batch, x0, t)


def survival_curve(spec: DriftSpec, x0: float, times: Sequence[float], cfg: SimConfig) -> List[SurvivalEstimate]:
    """Direct estimates at several horizons from one batch run to max(times)."""
    if not times:
        raise UsageError("survival_curve needs at least one time")
    batch = simulate_paths(spec, x0, cfg, max(times))
    return [_survival_estimate(batch, x0, s) for s in times]


def _survival_estimate(batch: PathBatch, x0: float, t: float) -> SurvivalEstimate:
    mean, stderr = _mean_and_stderr(batch.survival(t))
    report = batch.report.copy(deep=True)
    logger.info(f"direct survival x0={x0} t={t}: p_hat={mean:.6g} +- {stderr:.2g}")
    return SurvivalEstimate(p_hat=mean, stderr=stderr, n_paths=batch.hit_time.size, t=t, x0=x0, scheme="direct", report=report)


def estimate_two_sided(
    spec: DriftSpec, x0: float, r1: float, r2: float, cfg: SimConfig, horizon: float = 1.0e3
) -> ExitEstimate:
    """Frequency of reaching r1 before r2; lanes still inside at `horizon` count as censored."""
    if not (0 < r1 < x0 < r2):
        raise UsageError(f"need 0 < r1 < x0 < r2 (r1={r1}, x0={x0}, r2={r2})")
    results = _run_tasks(_tasks("two_sided", spec, x0, horizon, cfg, r1=r1, r2=r2), cfg.workers)
    report = _report(results, cfg.n_paths)

    low = np.concatenate([r.exit_low for r in results]).astype(float)
    report.censored = int(sum(np.count_nonzero(np.isinf(r.hit_time)) for r in results))
    if report.censored:
        msg = f"{report.censored} paths still inside ({r1}, {r2}) at t={horizon}"
        logger.warning(msg)
        report.warnings.append(msg)
    mean, stderr = _mean_and_stderr(low)
    logger.info(f"two-sided exit x0={x0} ({r1}, {r2}): p_hat={mean:.6g} +- {stderr:.2g}")
    return ExitEstimate(p_hat=mean, stderr=stderr, n_paths=cfg.n_paths, x0=x0, r1=r1, r2=r2, report=report)


def feynman_kac_estimate(spec: DriftSpec, x0: float, t: float, cfg: SimConfig) -> SurvivalEstimate:
    """
    P_x(tau > t) = E_x[exp(int_0^t V(B_s) ds) h(B_t) / h(x); B stays positive]
    with driftless B and (h, V) from h_transform.
    """
    _check_start(x0, t, cfg)
    h_transform(spec)  # fail fast on non-smooth drifts
    results = _run_tasks(_tasks("feynman_kac", spec, x0, t, cfg), cfg.workers)
    report = _report(results, cfg.n_paths)

    hit = np.concatenate([r.hit_time for r in results])
    log_w = np.concatenate([r.log_weight for r in results])
    weights = np.where(np.isinf(hit), np.exp(log_w), 0.0)
    if not np.all(np.isfinite(weights)):
        raise NumericError("Feynman-Kac weights overflowed", {"x0": x0, "t": t})
    mean, stderr = _mean_and_stderr(weights)
    mean = _clipped(mean, report, "Feynman-Kac")
    logger.info(f"Feynman-Kac survival x0={x0} t={t}: p_hat={mean:.6g} +- {stderr:.2g}")
    return SurvivalEstimate(p_hat=mean, stderr=stderr, n_paths=cfg.n_paths, t=t, x0=x0, scheme="feynman_kac", report=report)


def tilted_survival(spec: DriftSpec, x0: float, t: float, tilt: TiltProfile, cfg: SimConfig) -> SurvivalEstimate:
    """Survival to t under the shifted drift, reweighted by the Girsanov likelihood ratio."""
    _check_start(x0, t, cfg)
    if not math.isclose(t, tilt.t, rel_tol=1e-12):
        raise UsageError(f"tilt profile was built for t={tilt.t}, not t={t}")
    results = _run_tasks(_tasks("tilted", spec, x0, tilt.t, cfg, tilt=tilt), cfg.workers)
    report = _report(results, cfg.n_paths)

    hit = np.concatenate([r.hit_time for r in results])
    log_w = np.concatenate([r.log_weight for r in results])
    weights = np.where(np.isinf(hit), np.exp(log_w), 0.0)
    if not np.all(np.isfinite(weights)):
        raise NumericError("likelihood ratios overflowed", {"x0": x0, "t": tilt.t})
    mean, stderr = _mean_and_stderr(weights)
    mean = _clipped(mean, report, "tilted")
    logger.info(f"tilted survival x0={x0} t={tilt.t}: p_hat={mean:.6g} +- {stderr:.2g}")
    return SurvivalEstimate(p_hat=mean, stderr=stderr, n_paths=cfg.n_paths, t=tilt.t, x0=x0, scheme="tilted", report=report)


def coupled_compare(
    spec_low: DriftSpec, spec_high: DriftSpec, x0: float, t: float, cfg: SimConfig, tol: float = 1.0e-12
) -> CouplingReport:
    """Run both drifts on common noise and count steps where X_low > X_high."""
    _check_start(x0, t, cfg)
    xs = log_grid(1e-6, 1e6, 2001)
    lo, hi = drift_values(spec_low, xs), drift_values(spec_high, xs)
    if np.any(lo > hi + tol * np.maximum(1.0, np.abs(hi))):
        bad = xs[lo > hi + tol * np.maximum(1.0, np.abs(hi))][0]
        raise UsageError(f"spec_low exceeds spec_high at x={bad:g}")

    results = _run_tasks(_tasks("coupled", spec_low, x0, t, cfg, spec_high=spec_high, coupling_tol=tol), cfg.workers)
    report = _report(results, cfg.n_paths)
    samples = sum(r.samples for r in results)
    violations = sum(r.violations for r in results)
    fraction = violations / samples if samples else 0.0
    max_gap = max(r.max_gap for r in results)
    logger.info(f"coupled comparison: {violations} violations in {samples} samples")
    return CouplingReport(violation_fraction=fraction, violations=violations, samples=samples, max_gap=max_gap, report=report)


# --- tail fit ---------------------------------------------------------------


class TailSample(BaseModel):
    t: confloat(gt=0)
    log_p: float
    stderr: confloat(ge=0) = 0.0


def _as_samples(samples) -> List[TailSample]:
    out = []
    for s in samples:
        if isinstance(s, TailSample):
            out.append(s)
        elif isinstance(s, SurvivalEstimate):
            log_p = math.log(s.p_hat) if s.p_hat > 0 else -math.inf
            out.append(TailSample(t=s.t, log_p=log_p, stderr=s.stderr))
        else:
            out.append(TailSample(t=s[0], log_p=s[1], stderr=s[2] if len(s) > 2 else 0.0))
    return out


def fit_tail_exponent(samples, p_hint: Optional[float] = None) -> RateFitResult:
    """
    Weighted least squares fit of log p = -c t^a.

    With p_hint the exponent is pinned to (1 - p_hint) / (1 + p_hint)
    and only c is fitted.

    Weights are 1 / sd(log p)^2 with sd(log p) = stderr / p; with no
    stderr all points weigh the same. Without a hint, a is searched on
    (0, 1) and then refined jointly with c, a staying inside (0, 1).
    """
    data = _as_samples(samples)
    kept = [s for s in data if math.isfinite(s.log_p)]
    dropped = len(data) - len(kept)
    if dropped:
        logger.warning(f"tail fit dropped {dropped} samples with p_hat = 0")
    if len({s.t for s in kept}) < 3:
        raise UsageError(f"tail fit needs at least 3 usable samples with distinct t, got {len(kept)}")
    if p_hint is not None and not 0 < p_hint < 1:
        raise DomainError(f"p_hint must lie in (0, 1), got {p_hint}")

    t = np.array([s.t for s in kept])
    y = np.array([s.log_p for s in kept])
    sd = np.array([s.stderr * math.exp(-s.log_p) for s in kept])
    w = 1.0 / sd**2 if np.all(sd > 0) else np.ones_like(y)
    sw = np.sqrt(w)

    def rate_for(a: float) -> float:
        x = t**a
        return float(-np.sum(w * x * y) / np.sum(w * x * x))

    def sse(a: float) -> float:
        return float(np.sum(w * (y + rate_for(a) * t**a) ** 2))

    if p_hint is not None:
        a = (1.0 - p_hint) / (1.0 + p_hint)
        c = rate_for(a)
    else:
        found = optimize.minimize_scalar(sse, bounds=(EXPONENT_LO, EXPONENT_HI), method="bounded", options={"xatol": 1e-12})
        a0 = float(found.x)
        fit = optimize.least_squares(
            lambda v: sw * (y + v[1] * t ** v[0]),
            x0=[a0, rate_for(a0)],
            bounds=([EXPONENT_LO, -np.inf], [EXPONENT_HI, np.inf]),
            method="trf",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        a, c = float(fit.x[0]), float(fit.x[1])

    residual = y + c * t**a
    rms = float(np.sqrt(np.mean(residual**2)))
    logger.info(f"tail fit: rate={c:.6g} exponent={a:.6g} rms={rms:.3g} on {len(kept)} points")
    return RateFitResult(rate_hat=c, exponent_hat=a, residual_rms=rms, points_used=len(kept), dropped=dropped)


def dump_trajectory(record: PathRecord, path) -> Path:
    """Write one simulated path as CSV (step, time, value)."""
    if not record.times:
        raise UsageError(f"path {record.path_index} carries no trajectory")
    return write_csv(trajectory_rows(record.times, record.values), "trajectory", path)
