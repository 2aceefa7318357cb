"""Flat sectioned key-value configuration files.

Grammar (documented in the README): '#' starts a comment, blank lines are
ignored, '[section]' opens a section, 'key = value' assigns within it.
Unknown sections or keys are rejected with line-precise diagnostics, every
domain invariant is checked at parse time, and a canonical re-emission
(sorted keys, 17 significant digits) defines the config hash.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .diagnostics import DiagnosticsSettings
from .errors import ConfigError, ParameterError
from .flow import FlowConfig
from .geometry import ConeData, RadialGrid, VectorFieldData

_SCHEMES = ("semi-implicit-newton", "explicit-adaptive")


@dataclass(frozen=True)
class ContinuationSettings:
    eps_list: tuple[float, ...] = tuple(2.0 ** -j for j in range(2, 9))
    window: tuple[float, float] = (-10.0, 10.0)
    time_samples: tuple[float, ...] = (0.0, 0.5, 1.0)
    cauchy_threshold: float = 1e-3
    threads: int = 1


@dataclass(frozen=True)
class AppConfig:
    flow: FlowConfig
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    continuation: ContinuationSettings = field(default_factory=ContinuationSettings)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int(text: str) -> int:
    return int(text)


def _parse_scheme(text: str) -> str:
    if text not in _SCHEMES:
        raise ValueError(f"scheme must be one of {_SCHEMES}")
    return text


def _parse_float_list(text: str) -> tuple[float, ...]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(float(t) for t in items)


def _parse_span(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError("expected LO:HI")
    return float(parts[0]), float(parts[1])


_SCHEMA = {
    "cone": {
        "lambda": _parse_float,
        "beta": _parse_float,
        "tau0": _parse_float,
        "tau_inf": _parse_float,
    },
    "vector_field": {"c": _parse_float},
    "grid": {"s_min": _parse_float, "s_max": _parse_float, "n": _parse_int},
    "regularization": {
        "epsilon": _parse_float,
        "k": _parse_float,
        "psi_rho": _parse_float,
        "psi_ctilde": _parse_float,
    },
    "flow": {
        "scheme": _parse_scheme,
        "dt_init": _parse_float,
        "dt_max": _parse_float,
        "t_end": _parse_float,
        "c_eps0": _parse_float,
        "newton_tol": _parse_float,
        "rk_tol": _parse_float,
        "positivity_floor": _parse_float,
        "output_cadence": _parse_float,
    },
    "diagnostics": {
        "window_margin": _parse_float,
        "holder_alpha": _parse_float,
        "cone_fit_budget": _parse_float,
    },
    "continuation": {
        "eps_list": _parse_float_list,
        "window": _parse_span,
        "time_samples": _parse_float_list,
        "cauchy_threshold": _parse_float,
        "threads": _parse_int,
    },
}

_DEFAULTS = {
    "cone": {"lambda": 1.0, "beta": 1.0, "tau0": 1.0, "tau_inf": 1.0},
    "vector_field": {"c": 0.0},
    "grid": {"s_min": -30.0, "s_max": 30.0, "n": 2049},
    "regularization": {"epsilon": 0.25, "k": 0.0, "psi_rho": 0.5, "psi_ctilde": 1.0},
    "flow": {
        "scheme": "semi-implicit-newton",
        "dt_init": 2e-3,
        "dt_max": 1e-2,
        "t_end": 1.0,
        "c_eps0": 0.0,
        "newton_tol": 1e-11,
        "rk_tol": 1e-8,
        "positivity_floor": 1e-300,
        "output_cadence": 0.25,
    },
    "diagnostics": {"window_margin": 5.0, "holder_alpha": 0.75, "cone_fit_budget": 0.05},
    "continuation": {
        "eps_list": tuple(2.0 ** -j for j in range(2, 9)),
        "window": (-10.0, 10.0),
        "time_samples": (0.0, 0.5, 1.0),
        "cauchy_threshold": 1e-3,
        "threads": 1,
    },
}


def parse_text(text: str) -> AppConfig:
    values = {sec: dict(defaults) for sec, defaults in _DEFAULTS.items()}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: assignment before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        try:
            values[section][key] = _SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return _build(values)


def _build(values) -> AppConfig:
    try:
        cone = ConeData(
            lam=values["cone"]["lambda"],
            beta=values["cone"]["beta"],
            tau0=values["cone"]["tau0"],
            tau_inf=values["cone"]["tau_inf"],
        )
        vf = VectorFieldData(c=values["vector_field"]["c"])
        grid = RadialGrid(
            s_min=values["grid"]["s_min"],
            s_max=values["grid"]["s_max"],
            n=values["grid"]["n"],
        )
        fl = values["flow"]
        reg = values["regularization"]
        flow = FlowConfig(
            cone=cone,
            vf=vf,
            epsilon=reg["epsilon"],
            k=reg["k"],
            grid=grid,
            scheme=fl["scheme"],
            dt_init=fl["dt_init"],
            dt_max=fl["dt_max"],
            t_end=fl["t_end"],
            c_eps0=fl["c_eps0"],
            newton_tol=fl["newton_tol"],
            rk_tol=fl["rk_tol"],
            positivity_floor=fl["positivity_floor"],
            output_cadence=fl["output_cadence"],
            psi_rho=reg["psi_rho"],
            psi_ctilde=reg["psi_ctilde"],
        )
        if reg["epsilon"] <= 0.0:
            raise ParameterError("regularization epsilon must be positive")
        diag = DiagnosticsSettings(
            window_margin=values["diagnostics"]["window_margin"],
            holder_alpha=values["diagnostics"]["holder_alpha"],
            cone_fit_budget=values["diagnostics"]["cone_fit_budget"],
        )
        cont = ContinuationSettings(
            eps_list=values["continuation"]["eps_list"],
            window=values["continuation"]["window"],
            time_samples=values["continuation"]["time_samples"],
            cauchy_threshold=values["continuation"]["cauchy_threshold"],
            threads=values["continuation"]["threads"],
        )
    except ParameterError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return AppConfig(flow=flow, diagnostics=diag, continuation=cont)


def parse_config(path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    raise TypeError(f"cannot format {value!r}")


def canonical_text(app: AppConfig) -> str:
    """Deterministic re-emission: fixed section order, sorted keys, 17 digits."""
    flow, diag, cont = app.flow, app.diagnostics, app.continuation
    data = {
        "cone": {
            "lambda": flow.cone.lam,
            "beta": flow.cone.beta,
            "tau0": flow.cone.tau0,
            "tau_inf": flow.cone.tau_inf,
        },
        "vector_field": {"c": flow.vf.c},
        "grid": {
            "s_min": flow.grid.s_min,
            "s_max": flow.grid.s_max,
            "n": flow.grid.n,
        },
        "regularization": {
            "epsilon": flow.epsilon,
            "k": flow.k,
            "psi_rho": flow.psi_rho,
            "psi_ctilde": flow.psi_ctilde,
        },
        "flow": {
            "scheme": flow.scheme,
            "dt_init": flow.dt_init,
            "dt_max": flow.dt_max,
            "t_end": flow.t_end,
            "c_eps0": flow.c_eps0,
            "newton_tol": flow.newton_tol,
            "rk_tol": flow.rk_tol,
            "positivity_floor": flow.positivity_floor,
            "output_cadence": flow.output_cadence,
        },
        "diagnostics": {
            "window_margin": diag.window_margin,
            "holder_alpha": diag.holder_alpha,
            "cone_fit_budget": diag.cone_fit_budget,
        },
        "continuation": {
            "eps_list": cont.eps_list,
            "window": f"{cont.window[0]:.17g}:{cont.window[1]:.17g}",
            "time_samples": cont.time_samples,
            "cauchy_threshold": cont.cauchy_threshold,
            "threads": cont.threads,
        },
    }
    lines = ["# coneflow configuration (canonical form)"]
    for section in sorted(data):
        lines.append(f"[{section}]")
        for key in sorted(data[section]):
            lines.append(f"{key} = {_fmt(data[section][key])}")
    return "\n".join(lines) + "\n"


def config_hash(app: AppConfig) -> str:
    return hashlib.sha256(canonical_text(app).encode("utf-8")).hexdigest()
