import argparse
import logging
import math
import sys
import uuid
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Tuple

from pydantic import ValidationError

from halfline import analytic, drift, mc, report, variational
from halfline.config import ExperimentConfig, apply_overrides, load_config
from halfline.drift import CoefFn, DriftSpec, PiecewisePower, PurePower, SlowlyVarying, SlowVaryFn
from halfline.errors import ConfigError, ConstructionError, HalflineError, NonConvergenceError, NumericError, UsageError
from halfline.settings import OUT_DIR

logger = logging.getLogger("halfline.run")

Outcome = Tuple[str, Path]


def _out_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.run.out) if cfg.run.out else OUT_DIR


def _rate_params(spec: DriftSpec) -> Tuple[float, float]:
    """(p, beta) of the far-field power law."""
    if isinstance(spec, SlowlyVarying):
        return spec.p, spec.beta.limit
    if isinstance(spec, PurePower) and spec.p == 1.0:
        raise UsageError("the rate constant needs p < 1")
    return spec.p, spec.beta


# --- subcommands ------------------------------------------------------------


def cmd_rate(cfg: ExperimentConfig) -> Outcome:
    p, beta = _rate_params(cfg.drift)
    gamma = analytic.gamma_rate(p, beta)
    row = {
        "p": p,
        "beta": beta,
        "gamma_rate": gamma,
        "variational_infimum": analytic.variational_infimum(p, beta),
        "t": cfg.run.t,
        "tail_scale": analytic.tail_scale(cfg.run.t, p),
    }
    path = report.write_csv([row], "rate", _out_dir(cfg) / "rate.csv")
    return f"gamma({p:g}, {beta:g}) = {gamma:.4g}", path


def cmd_survival_closed(cfg: ExperimentConfig) -> Outcome:
    law = cfg.analytic
    x0 = cfg.run.x0
    rows = []
    for t in cfg.run.grid:
        if law.law == "bm":
            value, beta = analytic.bm_survival(x0, t), 0.0
            asym = analytic.bm_survival_asymptotic(x0, t)
        else:
            value, beta = analytic.bessel_like_survival(x0, t, law.beta), law.beta
            asym = math.nan
        rows.append({"law": law.law, "x0": x0, "t": t, "beta": beta, "survival": value, "asymptotic": asym})
    path = report.write_csv(rows, "survival_closed", _out_dir(cfg) / "survival_closed.csv")
    last = rows[-1]
    return f"{law.law} survival x0={x0:g} t={last['t']:g}: {last['survival']:.7g}", path


def cmd_survival_mc(cfg: ExperimentConfig) -> Outcome:
    sim = cfg.sim_config()
    estimates = mc.survival_curve(cfg.drift, cfg.run.x0, list(cfg.run.grid), sim)
    out = _out_dir(cfg)
    path = report.write_csv(
        [report.estimate_row(e, sim.dt_max, sim.seed) for e in estimates], "estimates", out / "survival_mc.csv"
    )
    if cfg.run.trajectory is not None:
        record = mc.simulate_path(cfg.drift, cfg.run.x0, sim, cfg.run.trajectory, t=max(cfg.run.grid))
        mc.dump_trajectory(record, out / "trajectory.csv")
    last = estimates[-1]
    return f"direct survival t={last.t:g}: {last.p_hat:.6g} +- {last.stderr:.2g}", path


def cmd_fk_check(cfg: ExperimentConfig) -> Outcome:
    sim = cfg.sim_config()
    x0 = cfg.run.x0
    rows = []
    worst = 0.0
    for t in cfg.run.grid:
        direct = mc.estimate_survival(cfg.drift, x0, t, sim)
        fk = mc.feynman_kac_estimate(cfg.drift, x0, t, sim)
        rows += [report.estimate_row(e, sim.dt_max, sim.seed) for e in (direct, fk)]
        combined = math.hypot(direct.stderr, fk.stderr)
        if combined > 0:
            worst = max(worst, abs(direct.p_hat - fk.p_hat) / combined)
    path = report.write_csv(rows, "estimates", _out_dir(cfg) / "fk_check.csv")
    return f"direct vs Feynman-Kac: worst gap {worst:.2f} combined stderr", path


def cmd_two_sided(cfg: ExperimentConfig) -> Outcome:
    sec = cfg.analytic
    if sec.r1 is None or sec.r2 is None:
        raise ConfigError("two-sided needs r1 and r2 in [analytic]")
    sim = cfg.sim_config()
    x0 = cfg.run.x0
    formula = analytic.two_sided_exit_prob(cfg.drift, x0, sec.r1, sec.r2)
    est = mc.estimate_two_sided(cfg.drift, x0, sec.r1, sec.r2, sim, horizon=sec.horizon)
    row = {
        "x0": x0,
        "r1": sec.r1,
        "r2": sec.r2,
        "p_formula": formula,
        "p_hat": est.p_hat,
        "stderr": est.stderr,
        "n_paths": est.n_paths,
        "censored": est.report.censored,
    }
    path = report.write_csv([row], "two_sided", _out_dir(cfg) / "two_sided.csv")
    return f"P(hit {sec.r1:g} before {sec.r2:g}): formula {formula:.6g}, MC {est.p_hat:.6g} +- {est.stderr:.2g}", path


def _minimize(cfg: ExperimentConfig) -> Tuple[float, float, variational.MinimizeResult]:
    p, beta = _rate_params(cfg.drift)
    vm = cfg.varmin
    result = variational.minimize_F(p, beta, n=vm.n, tol=vm.tol, max_iters=vm.max_iters, init=vm.init)
    if not result.converged and cfg.run.require_converged:
        raise NonConvergenceError(
            "minimize_F did not converge",
            {"iterations": result.iterations, "value": result.value, "stationarity": result.stationarity},
        )
    return p, beta, result


def _tilted(cfg: ExperimentConfig, times) -> List[mc.SurvivalEstimate]:
    sim = cfg.sim_config()
    p, beta, result = _minimize(cfg)
    vm = cfg.varmin
    out = []
    for t in times:
        tilt = variational.optimal_tilt(
            p, beta, vm.n, t, delta=vm.delta, control=vm.control, result=result
        )
        out.append(mc.tilted_survival(cfg.drift, cfg.run.x0, t, tilt, sim))
    return out


def cmd_tilt_mc(cfg: ExperimentConfig) -> Outcome:
    sim = cfg.sim_config()
    estimates = _tilted(cfg, cfg.run.grid)
    path = report.write_csv(
        [report.estimate_row(e, sim.dt_max, sim.seed) for e in estimates], "estimates", _out_dir(cfg) / "tilt_mc.csv"
    )
    last = estimates[-1]
    return f"tilted survival t={last.t:g}: {last.p_hat:.6g} +- {last.stderr:.2g}", path


def cmd_varmin(cfg: ExperimentConfig) -> Outcome:
    p, beta, result = _minimize(cfg)
    gamma = analytic.gamma_rate(p, beta)
    inf_f = analytic.variational_infimum(p, beta)
    row = {
        "p": p,
        "beta": beta,
        "n": cfg.varmin.n,
        "value": result.value,
        "gamma_rate": gamma,
        "variational_infimum": inf_f,
        "gap_to_rate": (result.value - gamma) / gamma,
        "gap_to_infimum": (result.value - inf_f) / inf_f,
        "iterations": result.iterations,
        "converged": result.converged,
        "gradient_norm": result.gradient_norm,
    }
    out = _out_dir(cfg)
    path = report.write_csv([row], "varmin", out / "varmin.csv")
    if cfg.varmin.dump_path:
        variational.dump_path(result.path, out / "varmin_path.csv")
    return (
        f"min F = {result.value:.6g} (closed-form infimum {inf_f:.6g}, gap {row['gap_to_infimum']:+.2%}; "
        f"gamma {gamma:.5g}, gap {row['gap_to_rate']:+.2%})",
        path,
    )


def _comparison_pair(cfg: ExperimentConfig) -> Tuple[DriftSpec, DriftSpec]:
    sec = cfg.compare
    if sec.mode == "sandwich":
        return drift.sandwich_drifts(cfg.drift, sec.delta, sec.eps)
    return drift.dominated_drift(cfg.drift, sec.widen), drift.dominating_drift(cfg.drift, sec.widen)


def cmd_compare(cfg: ExperimentConfig) -> Outcome:
    sim = cfg.sim_config()
    low, high = _comparison_pair(cfg)
    rows = []
    for dt in cfg.compare.dt_grid:
        step_cfg = sim.copy(update={"dt_max": dt, "dt_floor": min(sim.dt_floor, dt)})
        res = mc.coupled_compare(low, high, cfg.run.x0, cfg.run.t, step_cfg)
        rows.append(
            {
                "mode": cfg.compare.mode,
                "dt_max": dt,
                "violation_fraction": res.violation_fraction,
                "violations": res.violations,
                "samples": res.samples,
                "max_gap": res.max_gap,
            }
        )
    path = report.write_csv(rows, "compare", _out_dir(cfg) / "compare.csv")
    fractions = ", ".join(f"{r['violation_fraction']:.3g}" for r in rows)
    return f"{cfg.compare.mode} coupling violation fractions: {fractions}", path


def cmd_tailfit(cfg: ExperimentConfig) -> Outcome:
    sec = cfg.tailfit
    sim = cfg.sim_config()
    if sec.use_tilt:
        estimates = _tilted(cfg, sec.times)
    else:
        estimates = [mc.estimate_survival(cfg.drift, cfg.run.x0, t, sim) for t in sec.times]
    out = _out_dir(cfg)
    report.write_csv(
        [report.estimate_row(e, sim.dt_max, sim.seed) for e in estimates], "estimates", out / "tailfit_estimates.csv"
    )
    fit = mc.fit_tail_exponent(estimates, p_hint=sec.p_hint)
    p, beta = _rate_params(cfg.drift)
    row = {
        "rate_hat": fit.rate_hat,
        "exponent_hat": fit.exponent_hat,
        "residual_rms": fit.residual_rms,
        "points_used": fit.points_used,
        "dropped": fit.dropped,
        "p_hint": sec.p_hint if sec.p_hint is not None else math.nan,
        "gamma_rate": analytic.gamma_rate(p, beta),
    }
    path = report.write_csv([row], "tailfit", out / "tailfit.csv")
    return f"tail fit: rate {fit.rate_hat:.4g} (gamma {row['gamma_rate']:.4g}), exponent {fit.exponent_hat:.4g}", path


def cmd_potter(cfg: ExperimentConfig) -> Outcome:
    sec = cfg.potter
    try:
        ell = sec.ell()
    except ValidationError as e:
        raise ConfigError(f"[potter] {e}") from e
    check = drift.potter_check(ell, sec.a, sec.delta, sec.m, sample_pairs=sec.sample_pairs)
    sandwich = drift.sandwich_bounds(ell, sec.delta, sec.m)
    try:
        threshold = drift.potter_threshold(ell, sec.a, sec.delta, start=sec.m)
    except ConstructionError:
        threshold = math.nan
    row = {
        "kind": ell.kind,
        "domain": ell.domain,
        "r": ell.r,
        "a": sec.a,
        "delta": sec.delta,
        "m": sec.m,
        "holds": check.holds,
        "worst_ratio": check.worst_ratio,
        "sandwich_holds": sandwich.holds,
        "threshold": threshold,
    }
    path = report.write_csv([row], "potter", _out_dir(cfg) / "potter.csv")
    return f"Potter bound {'holds' if check.holds else 'fails'} (worst ratio {check.worst_ratio:.4g})", path


# --- acceptance recipe ------------------------------------------------------


def _check(name: str, value: float, target: float, tolerance: float, passed: bool) -> Dict[str, object]:
    return {"check": name, "value": value, "target": target, "tolerance": tolerance, "passed": bool(passed)}


def _within(name: str, value: float, target: float, tolerance: float) -> Dict[str, object]:
    return _check(name, value, target, tolerance, abs(value - target) <= tolerance)


def acceptance_checks(sim: mc.SimConfig) -> List[Dict[str, object]]:
    """The bundled cross-module experiments, one row per check."""
    rows = []
    gamma = analytic.gamma_rate(0.5, 1.0)
    rows.append(_within("rate_half_one", gamma, 2.5542, 1e-3))
    ratio = analytic.gamma_rate(0.5, 8.0) / gamma
    rows.append(_within("rate_homogeneity", ratio, 16.0, 16.0e-10))

    for p in (0.3, 0.5, 0.7):
        res = variational.minimize_F(p, 1.0, n=2048)
        target = analytic.variational_infimum(p, 1.0)
        rows.append(_within(f"varmin_p{p:g}", res.value, target, 0.01 * target))
    scaled = variational.minimize_F(0.5, 8.0, n=2048).value / variational.minimize_F(0.5, 1.0, n=2048).value
    rows.append(_within("varmin_homogeneity", scaled, 16.0, 0.16))

    driftless = PurePower(beta=0.0, p=0.5)
    est = mc.estimate_survival(driftless, 1.0, 1.0, sim)
    rows.append(_within("bm_survival_mc", est.p_hat, analytic.bm_survival(1.0, 1.0), 3 * est.stderr))
    bessel = PurePower(beta=0.5, p=1.0)
    est = mc.estimate_survival(bessel, 1.0, 1.0, sim)
    rows.append(_within("bessel_survival_mc", est.p_hat, analytic.bessel_like_survival(1.0, 1.0, 0.5), 3 * est.stderr))

    bridge = PiecewisePower(alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=0.5, m2=2.0, mid={"kind": "smooth"})
    direct = mc.estimate_survival(bridge, 1.0, 1.0, sim)
    fk = mc.feynman_kac_estimate(bridge, 1.0, 1.0, sim)
    rows.append(_within("fk_vs_direct", fk.p_hat, direct.p_hat, 3 * math.hypot(direct.stderr, fk.stderr)))

    flat = PiecewisePower(alpha=1.0, q=0.5, beta=1.0, p=0.5, m1=1.0, m2=2.0, mid={"kind": "constant", "level": 0.0})
    formula = analytic.two_sided_exit_prob(flat, 1.5, 0.5, 3.0)
    exit_est = mc.estimate_two_sided(flat, 1.5, 0.5, 3.0, sim)
    rows.append(_within("two_sided", exit_est.p_hat, formula, 3 * exit_est.stderr))

    sv = SlowlyVarying(
        alpha=CoefFn(limit=1.0),
        beta=CoefFn(limit=1.0, amp=0.5),
        q=0.5,
        p=0.5,
        ell2=SlowVaryFn(kind="log_power", domain="at_infinity", r=1.0),
        m1=0.5,
        m2=2.0,
    )
    low, high = drift.sandwich_drifts(sv, 0.2, 0.1)
    fractions = []
    for dt in (1e-2, 1e-3, 1e-4):
        step_cfg = sim.copy(update={"dt_max": dt, "dt_floor": min(sim.dt_floor, dt)})
        fractions.append(mc.coupled_compare(low, high, 1.0, 1.0, step_cfg).violation_fraction)
    rows.append(_check("coupling_finest", fractions[-1], 0.0, 1e-3, fractions[-1] <= 1e-3))
    rows.append(_check("coupling_trend", fractions[0] - fractions[-1], 0.0, 0.0, fractions[0] >= fractions[1] >= fractions[2]))

    pure = PurePower(beta=1.0, p=0.5)
    fit_source = variational.minimize_F(0.5, 1.0, n=512)
    tail_cfg = sim.copy(update={"dt_max": max(sim.dt_max, 1e-2), "horizon": max(sim.horizon, 40.0)})
    estimates = []
    for t in (5.0, 10.0, 20.0, 40.0):
        tilt = variational.optimal_tilt(0.5, 1.0, 512, t, result=fit_source)
        estimates.append(mc.tilted_survival(pure, 1.0, t, tilt, tail_cfg))
    pinned = mc.fit_tail_exponent(estimates, p_hint=0.5)
    rows.append(_within("tailfit_rate", pinned.rate_hat, gamma, 0.25 * gamma))
    free = mc.fit_tail_exponent(estimates)
    rows.append(_check("tailfit_exponent", free.exponent_hat, 1.0 / 3.0, 0.15, 0.2 < free.exponent_hat < 0.5))
    return rows


def cmd_acceptance(cfg: ExperimentConfig) -> Outcome:
    rows = acceptance_checks(cfg.sim_config())
    path = report.write_csv(rows, "acceptance", _out_dir(cfg) / "acceptance.csv")
    failed = [r["check"] for r in rows if not r["passed"]]
    if failed:
        raise NumericError(f"acceptance checks failed; see {path}", {"failed": ",".join(failed)})
    return f"acceptance: {len(rows)}/{len(rows)} checks passed", path


COMMANDS: Dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "rate": cmd_rate,
    "survival-closed": cmd_survival_closed,
    "survival-mc": cmd_survival_mc,
    "fk-check": cmd_fk_check,
    "two-sided": cmd_two_sided,
    "tilt-mc": cmd_tilt_mc,
    "varmin": cmd_varmin,
    "compare": cmd_compare,
    "tailfit": cmd_tailfit,
    "potter": cmd_potter,
    "acceptance": cmd_acceptance,
}


def run(subcommand: str, cfg: ExperimentConfig) -> Outcome:
    cfg.require(subcommand)
    run_id = uuid.uuid4().hex[:12]
    started_at = datetime.utcnow()
    logger.info(f"{subcommand} RUNNING run_id={run_id} started_at={started_at.isoformat()}")
    try:
        summary, path = COMMANDS[subcommand](cfg)
    except Exception:
        logger.exception(f"{subcommand} FAILED run_id={run_id}")
        raise
    elapsed = (datetime.utcnow() - started_at).total_seconds()
    logger.info(f"{subcommand} SUCCESS run_id={run_id} elapsed={elapsed:.1f}s output={path}")
    return summary, path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run a halfline experiment")
    parser.add_argument(
        "subcommand", nargs="?", choices=sorted(COMMANDS), help="overrides [run] subcommand in the config file"
    )
    parser.add_argument("config", type=Path)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", type=str, default=None)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    )

    try:
        cfg = apply_overrides(load_config(args.config), seed=args.seed, workers=args.workers, out=args.out)
        subcommand = args.subcommand or cfg.run.subcommand
        if subcommand is None:
            raise ConfigError(f"{args.config}: no subcommand given and none set in [run]")
        summary, path = run(subcommand, cfg)
    except HalflineError as e:
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        return e.exit_code
    print(f"{summary} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
