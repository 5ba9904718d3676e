"""
Experiment files.

A flat INI file with one section per concern:

    [drift]    variant, alpha, q, beta, p, m1, m2, mid.kind, mid.level, ...
    [sim]      SimConfig keys
    [run]      subcommand, x0, t, times, out, workers, seed, trajectory,
               require_converged
    [analytic] law, beta, r1, r2, horizon
    [varmin]   n, tol, max_iters, init, delta, control, dump_path
    [tailfit]  times, p_hint, use_tilt
    [potter]   kind, domain, r, table, a, delta, m, sample_pairs
    [compare]  mode, delta, eps, widen, dt_grid

Unknown sections and keys are rejected by name.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ValidationError, confloat, conint, validator

from halfline.drift import (
    DriftSpec,
    PiecewisePower,
    PurePower,
    SlowlyVarying,
    SlowVaryFn,
)
from halfline.errors import ConfigError
from halfline.mc import SimConfig

Subcommand = Literal[
    "rate",
    "survival-closed",
    "survival-mc",
    "fk-check",
    "two-sided",
    "tilt-mc",
    "varmin",
    "compare",
    "tailfit",
    "potter",
    "acceptance",
]

SECTIONS_FOR: Dict[str, Tuple[str, ...]] = {
    "rate": ("drift",),
    "survival-closed": ("analytic",),
    "survival-mc": ("drift", "sim"),
    "fk-check": ("drift", "sim"),
    "two-sided": ("drift", "sim", "analytic"),
    "tilt-mc": ("drift", "sim", "varmin"),
    "varmin": ("drift", "varmin"),
    "compare": ("drift", "sim", "compare"),
    "tailfit": ("drift", "sim", "varmin", "tailfit"),
    "potter": ("potter",),
    "acceptance": (),
}


def _floats(v) -> Tuple[float, ...]:
    if isinstance(v, str):
        return tuple(float(s) for s in v.replace(",", " ").split())
    return tuple(float(s) for s in v)


class _Section(BaseModel):
    class Config:
        extra = "forbid"
        frozen = True


class RunSection(_Section):
    subcommand: Optional[Subcommand] = None
    x0: confloat(gt=0) = 1.0
    t: confloat(gt=0) = 1.0
    times: Tuple[float, ...] = ()
    out: Optional[str] = None
    workers: Optional[conint(ge=1)] = None
    seed: Optional[int] = None
    trajectory: Optional[conint(ge=0)] = None
    require_converged: bool = False

    _split_times = validator("times", pre=True, allow_reuse=True)(_floats)

    @property
    def grid(self) -> Tuple[float, ...]:
        return self.times or (self.t,)


class AnalyticSection(_Section):
    law: Literal["bm", "bessel"] = "bm"
    beta: float = 0.5
    r1: Optional[confloat(gt=0)] = None
    r2: Optional[confloat(gt=0)] = None
    horizon: confloat(gt=0) = 1.0e3


class VarminSection(_Section):
    n: conint(ge=64) = 2048
    tol: confloat(gt=0) = 1.0e-7
    max_iters: conint(ge=1) = 20_000
    init: Literal["power", "linear"] = "power"
    delta: confloat(gt=0) = 0.05
    control: Literal["shift", "track"] = "track"
    dump_path: bool = False


class TailfitSection(_Section):
    times: Tuple[float, ...] = (5.0, 10.0, 20.0, 40.0)
    p_hint: Optional[confloat(gt=0, lt=1)] = None
    use_tilt: bool = True

    _split_times = validator("times", pre=True, allow_reuse=True)(_floats)


class PotterSection(_Section):
    kind: Literal["one", "log_power", "iter_log", "table"] = "one"
    domain: Literal["at_zero", "at_infinity"] = "at_infinity"
    r: float = 1.0
    table: str = ""
    a: float = 2.0
    delta: float = 0.1
    m: float = 1.0e6
    sample_pairs: int = 40_000

    def ell(self) -> SlowVaryFn:
        xs, ys = _table(self.table)
        return SlowVaryFn(kind=self.kind, domain=self.domain, r=self.r, table_x=xs, table_y=ys)


class CompareSection(_Section):
    mode: Literal["sandwich", "dominate"] = "sandwich"
    delta: confloat(ge=0) = 0.2
    eps: confloat(ge=0) = 0.1
    widen: confloat(ge=1) = 2.0
    dt_grid: Tuple[float, ...] = (1.0e-2, 1.0e-3, 1.0e-4)

    _split_grid = validator("dt_grid", pre=True, allow_reuse=True)(_floats)


class ExperimentConfig(BaseModel):
    drift: Optional[Union[PiecewisePower, PurePower, SlowlyVarying]] = None
    sim: Optional[SimConfig] = None
    run: RunSection = RunSection()
    analytic: Optional[AnalyticSection] = None
    varmin: Optional[VarminSection] = None
    tailfit: Optional[TailfitSection] = None
    potter: Optional[PotterSection] = None
    compare: Optional[CompareSection] = None

    class Config:
        frozen = True

    def require(self, subcommand: str) -> "ExperimentConfig":
        if subcommand not in SECTIONS_FOR:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        missing = [s for s in SECTIONS_FOR[subcommand] if s != "sim" and getattr(self, s) is None]
        if missing:
            raise ConfigError(f"{subcommand} needs section(s) {', '.join('[' + s + ']' for s in missing)}")
        return self

    def sim_config(self) -> SimConfig:
        """[sim] with [run] seed/workers applied on top; defaults when [sim] is absent."""
        base = self.sim.dict() if self.sim is not None else {}
        if self.run.seed is not None:
            base["seed"] = self.run.seed
        if self.run.workers is not None:
            base["workers"] = self.run.workers
        return SimConfig(**base)


# --- [drift] ----------------------------------------------------------------

_VARIANTS = {"piecewise": PiecewisePower, "pure": PurePower, "slowly_varying": SlowlyVarying}

_REQUIRED = {
    "piecewise": ("alpha", "q", "beta", "p", "m1", "m2"),
    "pure": ("beta", "p"),
    "slowly_varying": ("alpha", "beta", "q", "p", "m1", "m2"),
}

_OPTIONAL = {
    "piecewise": ("mid.kind", "mid.level"),
    "pure": (),
    "slowly_varying": (
        "mid.kind",
        "mid.level",
        "alpha.amp",
        "beta.amp",
        "ell1.kind",
        "ell1.r",
        "ell1.table",
        "ell2.kind",
        "ell2.r",
        "ell2.table",
    ),
}


def _table(text: str) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """'x:y, x:y, ...' -> (xs, ys)."""
    if not text.strip():
        return (), ()
    pairs = [item.split(":") for item in text.replace(",", " ").split()]
    if any(len(pair) != 2 for pair in pairs):
        raise ConfigError(f"table entries must look like x:y, got {text!r}")
    return tuple(float(x) for x, _ in pairs), tuple(float(y) for _, y in pairs)


def _slow(section: Mapping[str, str], name: str, domain: str) -> Dict[str, object]:
    xs, ys = _table(section.get(f"{name}.table", ""))
    return {
        "kind": section.get(f"{name}.kind", "one"),
        "domain": domain,
        "r": section.get(f"{name}.r", "1"),
        "table_x": xs,
        "table_y": ys,
    }


def drift_from_section(section: Mapping[str, str]) -> DriftSpec:
    variant = section.get("variant")
    if variant is None:
        raise ConfigError("[drift] is missing key 'variant'")
    if variant not in _VARIANTS:
        raise ConfigError(f"[drift] variant must be one of {sorted(_VARIANTS)}, got {variant!r}")

    allowed = {"variant", *_REQUIRED[variant], *_OPTIONAL[variant]}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"[drift] has unknown key(s) {', '.join(unknown)} for variant {variant}")
    missing = [k for k in _REQUIRED[variant] if k not in section]
    if missing:
        raise ConfigError(f"[drift] is missing key(s) {', '.join(missing)}")

    fields: Dict[str, object] = {k: section[k] for k in _REQUIRED[variant]}
    if variant != "pure":
        fields["mid"] = {"kind": section.get("mid.kind", "linear"), "level": section.get("mid.level", "0")}
    if variant == "slowly_varying":
        fields["alpha"] = {"limit": section["alpha"], "amp": section.get("alpha.amp", "0")}
        fields["beta"] = {"limit": section["beta"], "amp": section.get("beta.amp", "0")}
        fields["ell1"] = _slow(section, "ell1", "at_zero")
        fields["ell2"] = _slow(section, "ell2", "at_infinity")

    try:
        return _VARIANTS[variant](**fields)
    except ValidationError as e:
        raise ConfigError(f"[drift] {_describe(e)}") from e


def drift_to_section(spec: DriftSpec) -> Dict[str, str]:
    out = {"variant": spec.variant}
    if isinstance(spec, PurePower):
        out.update(beta=repr(spec.beta), p=repr(spec.p))
        return out
    if isinstance(spec, SlowlyVarying):
        out.update(alpha=repr(spec.alpha.limit), beta=repr(spec.beta.limit))
        out["alpha.amp"] = repr(spec.alpha.amp)
        out["beta.amp"] = repr(spec.beta.amp)
        for name in ("ell1", "ell2"):
            ell = getattr(spec, name)
            out[f"{name}.kind"] = ell.kind
            out[f"{name}.r"] = repr(ell.r)
            if ell.kind == "table":
                out[f"{name}.table"] = ", ".join(f"{x!r}:{y!r}" for x, y in zip(ell.table_x, ell.table_y))
    else:
        out.update(alpha=repr(spec.alpha), beta=repr(spec.beta))
    out.update(q=repr(spec.q), p=repr(spec.p), m1=repr(spec.m1), m2=repr(spec.m2))
    out["mid.kind"] = spec.mid.kind
    out["mid.level"] = repr(spec.mid.level)
    return out


# --- whole file -------------------------------------------------------------

_MODELS = {
    "sim": SimConfig,
    "run": RunSection,
    "analytic": AnalyticSection,
    "varmin": VarminSection,
    "tailfit": TailfitSection,
    "potter": PotterSection,
    "compare": CompareSection,
}


def _describe(e: ValidationError) -> str:
    parts: List[str] = []
    for err in e.errors():
        key = ".".join(str(v) for v in err["loc"])
        if err["type"] == "value_error.missing":
            parts.append(f"missing key '{key}'")
        elif err["type"] == "value_error.extra":
            parts.append(f"unknown key '{key}'")
        else:
            parts.append(f"'{key}': {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    unknown = [s for s in parser.sections() if s != "drift" and s not in _MODELS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {', '.join(unknown)}")

    fields: Dict[str, object] = {}
    if parser.has_section("drift"):
        fields["drift"] = drift_from_section(dict(parser["drift"]))
    for name, model in _MODELS.items():
        if not parser.has_section(name):
            continue
        try:
            fields[name] = model(**dict(parser[name]))
        except ValidationError as e:
            raise ConfigError(f"{source}: [{name}] {_describe(e)}") from e
    return ExperimentConfig(**fields)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), source=str(path))


def apply_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """Command-line flags win over the file."""
    update = {k: v for k, v in (("seed", seed), ("workers", workers), ("out", out)) if v is not None}
    if not update:
        return cfg
    try:
        run = RunSection(**{**cfg.run.dict(), **update})
    except ValidationError as e:
        raise ConfigError(f"override: {_describe(e)}") from e
    return cfg.copy(update={"run": run})
