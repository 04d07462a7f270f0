"""Run configuration: flat key=value files, validation and presets."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "RunConfig",
    "ConfigError",
    "parse_config",
    "serialize_config",
    "preset",
    "preset_names",
]

MODELS = ("slider_unilateral", "slider_bilateral", "ball")
CONTACT_SCHEMES = ("moreau", "ggl_decoupled", "ggl_unified", "ggl_reference")
DAE_SCHEMES = ("dae_pos", "dae_vel", "dae_acc", "dae_ggl")
SCHEMES = CONTACT_SCHEMES + DAE_SCHEMES
FORMATS = ("csv", "json")

MODEL_CONTACTS = {"slider_unilateral": 4, "slider_bilateral": 1, "ball": 1}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


@dataclass
class RunConfig:
    """Fully validated description of one simulation run."""

    model: str
    scheme: str
    dt: float = 1e-5
    t_end: float = 0.5
    epsilon: tuple = (0.1,)
    r_mode: str = "delassus"
    newton_tol: float = 1e-10
    max_iter: int = 50
    active_tol: float = 0.0
    out: str = "."
    format: str = "csv"
    record_stride: int = 10
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = f"{self.model}_{self.scheme}"
        _validate(self)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def _parse_epsilon(text: str) -> tuple:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"epsilon entries must be numbers: {text!r}") from exc
    if not values:
        raise ConfigError("epsilon must contain at least one value")
    return values


def _parse_r_mode(text: str) -> str:
    if text in ("delassus", "unit"):
        return text
    try:
        value = float(text)
    except ValueError as exc:
        raise ConfigError(
            f"r_mode must be 'delassus', 'unit' or a positive number, got {text!r}"
        ) from exc
    if value <= 0.0:
        raise ConfigError("scalar r_mode must be positive")
    return text


_PARSERS = {
    "model": str,
    "scheme": str,
    "dt": float,
    "t_end": float,
    "epsilon": _parse_epsilon,
    "r_mode": _parse_r_mode,
    "newton_tol": float,
    "max_iter": int,
    "active_tol": float,
    "out": str,
    "format": str,
    "record_stride": int,
    "name": str,
}


def _validate(cfg: RunConfig) -> None:
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; expected one of {MODELS}")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}; expected one of {SCHEMES}")
    if cfg.scheme in DAE_SCHEMES and cfg.model != "slider_bilateral":
        raise ConfigError(f"scheme {cfg.scheme} requires model slider_bilateral")
    if cfg.scheme in CONTACT_SCHEMES and cfg.model == "slider_bilateral":
        raise ConfigError(f"scheme {cfg.scheme} requires a contact model")
    if cfg.dt <= 0.0 or cfg.t_end <= 0.0:
        raise ConfigError("dt and t_end must be positive")
    ratio = cfg.t_end / cfg.dt
    if abs(ratio - round(ratio)) > np.finfo(float).eps * ratio:
        raise ConfigError("dt must divide t_end")
    n_expected = MODEL_CONTACTS[cfg.model]
    if len(cfg.epsilon) not in (1, n_expected):
        raise ConfigError(
            f"epsilon needs 1 or {n_expected} values for model {cfg.model}, "
            f"got {len(cfg.epsilon)}"
        )
    if any(e < 0.0 or e > 1.0 for e in cfg.epsilon):
        raise ConfigError("epsilon values must lie in [0, 1]")
    _parse_r_mode(cfg.r_mode)
    if cfg.newton_tol <= 0.0:
        raise ConfigError("newton_tol must be positive")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    if cfg.active_tol < 0.0:
        raise ConfigError("active_tol must be nonnegative")
    if cfg.format not in FORMATS:
        raise ConfigError(f"unknown format {cfg.format!r}; expected one of {FORMATS}")
    if cfg.record_stride < 1:
        raise ConfigError("record_stride must be at least 1")


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines into a validated RunConfig.

    Blank lines and '#' comments are skipped; unknown keys are rejected
    with the offending line number.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, rest = line.partition("=")
        key = key.strip()
        rest = rest.strip()
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](rest)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {rest!r}") from exc
    for required in ("model", "scheme"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    """Flat text form; parse_config(serialize_config(cfg)) == cfg."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "epsilon":
            text = ",".join(repr(float(e)) for e in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"


def _unilateral(scheme, eps, name, full, **overrides):
    return RunConfig(
        model="slider_unilateral",
        scheme=scheme,
        dt=1e-5,
        t_end=4.0 if full else 0.5,
        epsilon=(eps,),
        record_stride=10,
        name=name,
        **overrides,
    )


def _bilateral(scheme, name, full):
    return RunConfig(
        model="slider_bilateral",
        scheme=scheme,
        dt=1e-4,
        t_end=10.0 if full else 5.0,
        epsilon=(0.0,),
        record_stride=10,
        name=name,
    )


_EPS_TAGS = {"eps01": 0.1, "eps04": 0.4, "eps06": 0.6, "eps09": 0.9}


def preset_names() -> tuple:
    names = [f"fig3_{tag}" for tag in _EPS_TAGS]
    names += ["fig5_gaps", "fig6_drift"]
    names += [f"fig9_{tag}" for tag in _EPS_TAGS]
    names += ["fig10_energy"]
    return tuple(names)


def preset(name: str, full: bool = False) -> list:
    """Named experiment configurations; sweeps return several runs.

    Horizons default to a desk-scale 0.5 s for the unilateral runs (4 s
    with ``full``) and 5 s for the bilateral drift study (10 s with
    ``full``).
    """
    group, _, tag = name.partition("_")
    if group == "fig3" and tag in _EPS_TAGS:
        return [_unilateral("moreau", _EPS_TAGS[tag], name, full)]
    if name == "fig5_gaps":
        return [_unilateral("moreau", 0.1, name, full)]
    if name == "fig6_drift":
        return [
            _bilateral(scheme, f"{name}_{scheme}", full)
            for scheme in ("dae_vel", "dae_acc", "dae_ggl")
        ]
    if group == "fig9" and tag in _EPS_TAGS:
        return [_unilateral("ggl_unified", _EPS_TAGS[tag], name, full)]
    if name == "fig10_energy":
        return [
            _unilateral(scheme, 0.1, f"{name}_{scheme}", full)
            for scheme in ("moreau", "ggl_unified", "ggl_reference")
        ]
    raise ConfigError(f"unknown preset {name!r}")
