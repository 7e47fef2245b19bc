"""Flat TOML experiment configuration."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import tomli

from ..elastodynamics.solver import TimeIntegratorConfig
from ..ground_model import MaterialLayer
from ..inversion import BasisConfig


class ConfigError(ValueError):
    pass


LAYOUTS = ("1", "9", "25")


def layout_stations(name: str, explicit=()) -> list[tuple[float, float]]:
    """Surface station coordinates for a named layout."""
    if name == "1":
        return [(300.0, 300.0)]
    if name == "9":
        return [(100.0 + 200 * i, 100.0 + 200 * j) for j in range(3) for i in range(3)]
    if name == "25":
        return [(100.0 + 100 * i, 100.0 + 100 * j) for j in range(5) for i in range(5)]
    if name == "custom":
        return [tuple(map(float, p)) for p in explicit]
    raise ConfigError(f"unknown station layout {name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    # domain and mesh
    domain_x: float = 600.0
    domain_y: float = 600.0
    domain_z: float = 100.0
    h: float = 25.0
    field_nx: int = 120
    field_ny: int = 120
    layer1_vp: float = 1500.0
    layer1_vs: float = 200.0
    layer1_rho: float = 1800.0
    layer2_vp: float = 2000.0
    layer2_vs: float = 600.0
    layer2_rho: float = 2100.0
    # reference ground and survey
    ref_depth: float = 50.0
    ref_width: float = 60.0
    ref_period: float = 400.0
    ref_base: float = 20.0
    ref_meander: float = 100.0
    survey_count: int = 120
    # candidates
    m_list: tuple = (1, 2, 4, 8, 12, 16, 20, 30, 40, 50)
    q_list: tuple = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0)
    smooth_iters: int = 5
    baseline_m: int = 20
    baseline_q: float = 2.0
    subset_count: int = 40
    include_reference: bool = True
    # stations and events
    layouts: tuple = LAYOUTS
    stations: tuple = ()
    events: int = 3
    event_pulses: int = 8
    event_amplitude: float = 0.01
    # basis and solver
    basis_dt: float = 0.1
    pulse_width: float = 0.4
    input_duration: float = 8.0
    dt: float = 0.02
    # the record outlasts the input so late pulses are observed
    steps: int = 450
    newmark_beta: float = 0.25
    newmark_gamma: float = 0.5
    cg_tol: float = 1e-6
    cg_max_iter: int = 500
    preconditioner: str = "fd"
    svd_cutoff: float = 1e-8

    # derived views -------------------------------------------------------
    @property
    def domain(self) -> tuple[float, float, float]:
        return (self.domain_x, self.domain_y, self.domain_z)

    @property
    def layer1(self) -> MaterialLayer:
        return MaterialLayer(self.layer1_vp, self.layer1_vs, self.layer1_rho)

    @property
    def layer2(self) -> MaterialLayer:
        return MaterialLayer(self.layer2_vp, self.layer2_vs, self.layer2_rho)

    @property
    def solver(self) -> TimeIntegratorConfig:
        return TimeIntegratorConfig(self.dt, self.steps, self.newmark_beta, self.newmark_gamma,
                                    self.cg_tol, self.cg_max_iter, self.preconditioner)

    @property
    def basis(self) -> BasisConfig:
        return BasisConfig(self.basis_dt, self.pulse_width, self.input_duration)

    @property
    def duration(self) -> float:
        return self.dt * self.steps

    def layout_names(self) -> list[str]:
        names = list(self.layouts)
        if self.stations and "custom" not in names:
            names.append("custom")
        return names

    def validate(self) -> "ExperimentConfig":
        """Check every derived object up front; raises ConfigError."""
        try:
            self.layer1, self.layer2, self.solver
            basis = self.basis
            basis.stride(self.dt)
            for L in self.domain:
                n = L / self.h
                if abs(n - round(n)) > 1e-6 * n:
                    raise ValueError(f"h={self.h} does not divide extent {L}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        checks = [
            (self.jobs >= 1, "jobs must be >= 1"),
            (self.survey_count >= 1, "survey_count must be >= 1"),
            (len(self.m_list) > 0 and len(self.q_list) > 0, "m_list and q_list must be non-empty"),
            (all(int(m) >= 1 for m in self.m_list), "m_list entries must be >= 1"),
            (all(q > 0 for q in self.q_list), "q_list entries must be positive"),
            (self.baseline_m in self.m_list and any(math.isclose(q, self.baseline_q) for q in self.q_list),
             "baseline (M, q) must be on the candidate grid"),
            (1 <= self.subset_count <= len(self.m_list) * len(self.q_list),
             "subset_count must be between 1 and the candidate grid size"),
            (max(self.m_list) <= self.survey_count, "largest M exceeds the survey point count"),
            (self.events >= 1 and self.event_pulses >= 1, "events and event_pulses must be >= 1"),
            (self.event_amplitude > 0, "event_amplitude must be positive"),
            (self.input_duration <= self.duration + 1e-9, "input_duration exceeds the simulated window"),
            (self.pulse_width >= 2 * self.dt, "pulse_width must span at least two time steps"),
            (0 <= self.svd_cutoff < 1, "svd_cutoff must lie in [0, 1)"),
            (len(self.layout_names()) > 0, "no station layouts"),
            (self.field_nx >= 2 and self.field_ny >= 2, "thickness grid too small"),
            (self.ref_base + self.ref_depth < self.domain_z, "reference channel deeper than the domain"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for name in self.layout_names():
            for x1, x2 in layout_stations(name, self.stations):
                if not (0 <= x1 <= self.domain_x and 0 <= x2 <= self.domain_y):
                    raise ConfigError(f"station ({x1}, {x2}) outside the domain")
        return self

    def digest(self, exclude=("out", "jobs")) -> str:
        d = {k: v for k, v in to_dict(self).items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    default = _TYPES[name].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected an array")
        if name == "stations":
            try:
                return tuple((float(a), float(b)) for a, b in value)
            except (TypeError, ValueError):
                raise ConfigError("stations: expected [[x1, x2], ...]") from None
        if name == "layouts":
            return tuple(str(v) for v in value)
        if name == "m_list":
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                raise ConfigError("m_list: expected integers")
            return tuple(value)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name}: expected numbers")
        return tuple(float(v) for v in value)
    raise ConfigError(f"{name}: unsupported type")


def from_dict(d: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    unknown = sorted(set(d) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    vals = {k: _coerce(k, v) for k, v in d.items()}
    return replace(base or ExperimentConfig(), **vals)


def to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = [list(p) if isinstance(p, tuple) else p for p in v]
    return d


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not allowed ({', '.join(nested)})")
    return from_dict(raw)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError("non-finite config value")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in to_dict(cfg).items())


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(dumps_config(cfg))
