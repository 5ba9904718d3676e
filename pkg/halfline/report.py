"""
CSV artifacts.

Every file the runner writes has its column list declared here once;
README documents the same schemas.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import pandas as pd

from halfline.errors import UsageError

FLOAT_FORMAT = "%.17g"

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "estimates": ("scheme", "x0", "t", "p_hat", "stderr", "n_paths", "dt_max", "seed"),
    "trajectory": ("step", "time", "value"),
    "path": ("u", "omega"),
    "rate": ("p", "beta", "gamma_rate", "variational_infimum", "t", "tail_scale"),
    "survival_closed": ("law", "x0", "t", "beta", "survival", "asymptotic"),
    "two_sided": ("x0", "r1", "r2", "p_formula", "p_hat", "stderr", "n_paths", "censored"),
    "varmin": (
        "p",
        "beta",
        "n",
        "value",
        "gamma_rate",
        "variational_infimum",
        "gap_to_rate",
        "gap_to_infimum",
        "iterations",
        "converged",
        "gradient_norm",
    ),
    "compare": ("mode", "dt_max", "violation_fraction", "violations", "samples", "max_gap"),
    "tailfit": ("rate_hat", "exponent_hat", "residual_rms", "points_used", "dropped", "p_hint", "gamma_rate"),
    "potter": ("kind", "domain", "r", "a", "delta", "m", "holds", "worst_ratio", "sandwich_holds", "threshold"),
    "acceptance": ("check", "value", "target", "tolerance", "passed"),
}


def columns(schema: str) -> Tuple[str, ...]:
    try:
        return SCHEMAS[schema]
    except KeyError:
        raise UsageError(f"unknown CSV schema {schema!r}") from None


def frame(rows: Iterable[Mapping[str, object]], schema: str) -> pd.DataFrame:
    cols = columns(schema)
    rows = list(rows)
    for row in rows:
        extra = set(row) - set(cols)
        missing = set(cols) - set(row)
        if extra or missing:
            raise UsageError(
                f"row does not match schema {schema!r} (missing={sorted(missing)}, extra={sorted(extra)})"
            )
    return pd.DataFrame(rows, columns=list(cols))


def write_csv(rows: Iterable[Mapping[str, object]], schema: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame(rows, schema).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_csv(path: Path, schema: str) -> pd.DataFrame:
    """Re-parse an artifact, checking its header against the schema."""
    df = pd.read_csv(path, float_precision="round_trip")
    if tuple(df.columns) != columns(schema):
        raise UsageError(f"{path} does not have the {schema!r} columns: {list(df.columns)}")
    return df


def estimate_row(est, dt_max: float, seed: int) -> Dict[str, object]:
    return {
        "scheme": est.scheme,
        "x0": est.x0,
        "t": est.t,
        "p_hat": est.p_hat,
        "stderr": est.stderr,
        "n_paths": est.n_paths,
        "dt_max": dt_max,
        "seed": seed,
    }


def trajectory_rows(times: Sequence[float], values: Sequence[float]):
    return [{"step": i, "time": s, "value": v} for i, (s, v) in enumerate(zip(times, values))]


def path_rows(grid: Sequence[float], values: Sequence[float]):
    return [{"u": u, "omega": w} for u, w in zip(grid, values)]
