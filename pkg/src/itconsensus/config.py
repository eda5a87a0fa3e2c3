"""Experiment configuration: one YAML file, validated, plus ``key=value`` overrides.

Schema (every key optional; defaults reproduce the published experiment)::

    graph:      n_followers, edges [[i, j, w], ...] (1-based), pinning [b_1..b_N]
    design:     c0, c1, c2, c3, c_z, P (optional fixed matrix, validated)
    schedule:   on_range [lo, hi], off_fraction, grid
    noise:      dim, time_constant, power, correlation_time, seeds (list or null)
    controller: K_gain, rho, sigma_mod, gamma, rbf_range, rbf_per_dim
    plant:      nonlinearity, order, x0_box, x0 (optional [[x_11..x_1n], ...])
    leader:     amplitude, omega, phase
    sim:        dt, horizon, seed, eta0 (optional)
    report:     out_dir, figures, log_noise, runs, l0, band, workers

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .noise import PAPER_SEEDS


class ConfigError(ValueError):
    pass


@dataclass
class GraphCfg:
    n_followers: int = 4
    edges: list = field(default_factory=lambda: [[1, 2, 0.5], [2, 3, 1.0], [3, 4, 0.5]])
    pinning: list = field(default_factory=lambda: [1.0, 1.0, 0.0, 0.0])


@dataclass
class DesignCfg:
    c0: int = 6
    c1: float = 20.0
    c2: float = 10.0
    c3: float = 3.0
    c_z: float = 1.0
    P: Optional[list] = None


@dataclass
class ScheduleCfg:
    on_range: list = field(default_factory=lambda: [0.5, 2.0])
    off_fraction: float = 0.9
    grid: float = 1e-3


@dataclass
class NoiseCfg:
    dim: int = 1
    time_constant: float = 0.1
    power: float = 1.0
    correlation_time: float = 0.1
    seeds: Optional[list] = field(default_factory=lambda: list(PAPER_SEEDS))


@dataclass
class ControllerCfg:
    K_gain: float = 15.0
    rho: float = 1.0
    sigma_mod: float = 0.5
    gamma: float = 10.0
    rbf_range: float = 3.0
    rbf_per_dim: int = 5


@dataclass
class PlantCfg:
    nonlinearity: str = "paper_example"
    order: int = 2
    x0_box: float = 2.0
    x0: Optional[list] = None


@dataclass
class LeaderCfg:
    amplitude: float = 1.0
    omega: float = 0.5
    phase: float = 0.0


@dataclass
class SimCfg:
    dt: float = 1e-3
    horizon: float = 20.0
    seed: int = 0
    eta0: Optional[list] = None


@dataclass
class ReportCfg:
    out_dir: str = "out"
    figures: bool = True
    log_noise: bool = True
    runs: int = 20
    l0: float = 0.1
    band: Optional[float] = None
    workers: int = 1


@dataclass
class SimConfig:
    graph: GraphCfg = field(default_factory=GraphCfg)
    design: DesignCfg = field(default_factory=DesignCfg)
    schedule: ScheduleCfg = field(default_factory=ScheduleCfg)
    noise: NoiseCfg = field(default_factory=NoiseCfg)
    controller: ControllerCfg = field(default_factory=ControllerCfg)
    plant: PlantCfg = field(default_factory=PlantCfg)
    leader: LeaderCfg = field(default_factory=LeaderCfg)
    sim: SimCfg = field(default_factory=SimCfg)

    def replace(self, **sections) -> "SimConfig":
        """Copy with some section fields changed, e.g. ``replace(noise={"power": 0})``."""
        new = copy.deepcopy(self)
        for sec, vals in sections.items():
            obj = getattr(new, sec)
            for k, v in vals.items():
                if not hasattr(obj, k):
                    raise ConfigError(f"unknown key {sec}.{k}")
                setattr(obj, k, v)
        new.validate()
        return new

    def validate(self):
        s, sch, nz = self.sim, self.schedule, self.noise
        if s.dt <= 0:
            raise ConfigError("sim.dt must be positive")
        if s.horizon < 0:
            raise ConfigError("sim.horizon must be non-negative")
        if not 0 <= sch.off_fraction <= 1:
            raise ConfigError(f"schedule.off_fraction must lie in [0, 1], got {sch.off_fraction}")
        lo, hi = sch.on_range
        if not 0 < lo <= hi:
            raise ConfigError("schedule.on_range must satisfy 0 < lo <= hi")
        if not _divides(s.dt, sch.grid):
            raise ConfigError("sim.dt must divide schedule.grid")
        if not _divides(s.dt, nz.correlation_time):
            raise ConfigError("sim.dt must divide noise.correlation_time")
        if nz.seeds is not None and len(nz.seeds) != self.graph.n_followers:
            raise ConfigError("noise.seeds needs one seed per follower")
        if self.plant.order < 1:
            raise ConfigError("plant.order must be >= 1")
        if len(self.graph.pinning) != self.graph.n_followers:
            raise ConfigError("graph.pinning needs one entry per follower")


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    report: ReportCfg = field(default_factory=ReportCfg)


_SECTIONS = {f.name: f.type for f in fields(SimConfig)}


def _divides(small: float, big: float) -> bool:
    r = big / small
    return abs(r - round(r)) < 1e-9 * max(r, 1.0) and round(r) >= 1


def _fill(obj, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {where} must be a mapping")
    names = {f.name for f in fields(obj)}
    for k, v in values.items():
        if k not in names:
            raise ConfigError(f"unknown key {where}.{k}")
        setattr(obj, k, v)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    cfg = ExperimentConfig()
    for sec, values in data.items():
        if sec == "report":
            _fill(cfg.report, values, sec)
        elif sec in _SECTIONS:
            _fill(getattr(cfg.sim, sec), values, sec)
        else:
            raise ConfigError(f"unknown section {sec!r}")
    cfg.sim.validate()
    return cfg


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars/lists."""
    data = copy.deepcopy(data or {})
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        path, raw = item.split("=", 1)
        sec, key = path.split(".", 1)
        data.setdefault(sec, {})[key] = yaml.safe_load(raw)
    return data


def load(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    return from_dict(apply_overrides(data, list(overrides)))


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {sec: dataclasses.asdict(getattr(cfg.sim, sec)) for sec in _SECTIONS}
    out["report"] = dataclasses.asdict(cfg.report)
    return out


def paper_config() -> ExperimentConfig:
    """Published setup, using the published ``P`` as a validated fixture."""
    cfg = ExperimentConfig()
    cfg.sim.design.P = [[22.9454, 3.1623], [3.1623, 3.6280]]
    return cfg
