"""Experiment configuration: YAML in, validated dataclasses out.

Every section maps one-to-one onto a dataclass below; unknown keys are
rejected.  A run manifest (``manifest.yaml``) carries the resolved config
under ``config`` and can be passed back in as a config file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import yaml

from .core import ActionGrid, OptimizerConfig, TimeGrid, WealthGrid, auto_wealth_grid
from .equilibrium import Game, SolverConfig
from .model import ModelParams, UtilitySpec, project_truncated_normal


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    # package defaults, not reference values; see README
    c: float = 0.0005
    r: float = 10.0
    M: float = 1000.0
    eps: float = 0.0
    L: float = 10.0


@dataclass
class UtilitySection:
    kind: str = "crra_sqrt"
    gamma: float = 0.5
    value: float = 0.0
    xs: List[float] = field(default_factory=list)
    us: List[float] = field(default_factory=list)


@dataclass
class TimeSection:
    n: int = 1
    T: int = 300


@dataclass
class GridSection:
    wealth_nodes: int = 512
    action_nodes: int = 128
    # numbers, or "auto" for the worst-case rule from the initial quantiles
    x_min: Union[float, str] = -6.0
    x_max: Union[float, str] = 100.0


@dataclass
class InitialSection:
    mean: float = 10.0
    sd: float = 3.0
    lower: float = 0.0


@dataclass
class SolverSection:
    damping: float = 0.9
    tol: float = 1e-8
    max_iter: int = 5000
    initial_flow: Union[float, List[float]] = 1.0
    scheme: int = 2
    eps_schedule: Optional[List[float]] = None
    refine: bool = True
    tol_frac: float = 1e-6
    max_clamped: float = 1e-6


@dataclass
class SimulationSection:
    N: int = 1000
    seed: int = 0
    mode: str = "validation"
    include_self: bool = False
    # agents on grid nodes (particle version of the forward equation)
    lattice: bool = True
    # "equilibrium" or "zero"
    policy: str = "equilibrium"


@dataclass
class RefineSection:
    n_min: int = 0
    n_max: int = 3
    warm_start: bool = True


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    utility: UtilitySection = field(default_factory=UtilitySection)
    time: TimeSection = field(default_factory=TimeSection)
    grid: GridSection = field(default_factory=GridSection)
    initial: InitialSection = field(default_factory=InitialSection)
    solver: SolverSection = field(default_factory=SolverSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    refine: RefineSection = field(default_factory=RefineSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # -- builders -----------------------------------------------------------

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(c=m.c, r=m.r, M=m.M, eps=m.eps, L=m.L)

    def utility_spec(self) -> UtilitySpec:
        u = self.utility
        return UtilitySpec(kind=u.kind, gamma=u.gamma, value=u.value, xs=tuple(u.xs), us=tuple(u.us))

    def time_grid(self, n: Optional[int] = None) -> TimeGrid:
        return TimeGrid(self.time.n if n is None else n, self.time.T)

    def wealth_grid(self) -> WealthGrid:
        g, ini = self.grid, self.initial
        params = self.model_params()
        lo, hi = g.x_min, g.x_max
        if lo == "auto" or hi == "auto":
            from scipy.stats import truncnorm

            a = (ini.lower - ini.mean) / ini.sd
            q = truncnorm.ppf([0.001, 0.999], a, np.inf, loc=ini.mean, scale=ini.sd)
            auto = auto_wealth_grid((float(q[0]), float(q[1])), self.time_grid(), params, g.wealth_nodes)
            lo = auto.x_min if lo == "auto" else lo
            hi = auto.x_max if hi == "auto" else hi
        return WealthGrid.linspace(float(lo), float(hi), g.wealth_nodes)

    def action_grid(self) -> ActionGrid:
        return ActionGrid.linspace(self.model.L, self.grid.action_nodes)

    def game(self, n: Optional[int] = None) -> Game:
        grid = self.wealth_grid()
        mu0 = project_truncated_normal(grid.points, self.initial.mean, self.initial.sd, self.initial.lower)
        return Game(self.model_params(), self.time_grid(n), grid, self.action_grid(), self.utility_spec(), mu0)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        init = s.initial_flow if np.ndim(s.initial_flow) == 0 else np.asarray(s.initial_flow, dtype=float)
        return SolverConfig(
            damping=s.damping, tol=s.tol, max_iter=s.max_iter, initial_flow=init, scheme=s.scheme,
            eps_schedule=s.eps_schedule, optimizer=OptimizerConfig(refine=s.refine, tol_frac=s.tol_frac),
            max_clamped=s.max_clamped,
        )

    def validate(self) -> "ExperimentConfig":
        """Build every derived object once so bad values fail early."""
        try:
            self.game()
            self.solver_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.simulation.N < 1:
            raise ConfigError("simulation.N must be >= 1")
        if self.simulation.mode not in ("validation", "true"):
            raise ConfigError("simulation.mode must be 'validation' or 'true'")
        if self.simulation.policy not in ("equilibrium", "zero"):
            raise ConfigError("simulation.policy must be 'equilibrium' or 'zero'")
        if not 0 <= self.refine.n_min <= self.refine.n_max:
            raise ConfigError("refine needs 0 <= n_min <= n_max")
        for name in ("x_min", "x_max"):
            v = getattr(self.grid, name)
            if isinstance(v, str) and v != "auto":
                raise ConfigError(f"grid.{name} must be a number or 'auto'")
        return self


def _section(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    # a run manifest nests the resolved config
    if "config" in data and "artifacts" in data:
        data = data["config"]
    top = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - set(top))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    hints = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for name, factory in hints.items():
        cls = type(factory())
        try:
            kwargs[name] = _section(cls, data.get(name), name)
        except TypeError as exc:
            raise ConfigError(f"bad section {name!r}: {exc}") from exc
    return ExperimentConfig(**kwargs).validate()


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)
