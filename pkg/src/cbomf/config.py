"""Experiment configuration: a YAML key-value tree validated before any computation.

Unknown keys are rejected at every level.  Seeds are mandatory; nothing is
ever seeded from the clock.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import CostFunction, SimParams, make_cost
from .errors import ConfigError
from .laws import InitialLaw
from .pso import PsoParams

SCHEMA_VERSION = "cbomf-1"
SUBCOMMANDS = (
    "optimize",
    "fphi-scaling",
    "meanfield-converge",
    "laplace",
    "pde-compare",
    "pso",
    "assumptions",
    "increment-probe",
)

Vector = Union[float, list[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class CostConfig(_Strict):
    name: str = "quadratic"
    params: dict[str, Any] = Field(default_factory=dict)


class SimConfig(_Strict):
    lam: float = Field(1.0, alias="lambda", ge=0)
    sigma: float = Field(0.5, ge=0)
    alpha: float = Field(10.0, ge=0)
    dt: float = Field(1e-2, gt=0)
    t_final: float = Field(1.0, gt=0)
    n_particles: int = Field(100, ge=1)
    dim: int = Field(1, ge=1)
    seed: int


class InitConfig(_Strict):
    kind: Literal["uniform", "gaussian", "dirac", "atoms"] = "uniform"
    low: Vector = -3.0
    high: Vector = 3.0
    mean: Vector = 0.0
    std: Vector = 1.0
    point: Vector = 0.0
    atoms: Optional[list[Vector]] = None


class PsoConfig(_Strict):
    m: float = 0.5
    velocity: InitConfig = Field(default_factory=lambda: InitConfig(kind="gaussian"))


class GridConfig(_Strict):
    x_min: float
    x_max: float
    n_cells: int = Field(ge=1)
    coarsen: int = Field(1, ge=1)
    dt_pde: Optional[float] = Field(None, gt=0)


class TestFunctionConfig(_Strict):
    center: Vector = 0.0
    radius: float = Field(4.0, gt=0)


class ExperimentSection(_Strict):
    n_list: Optional[list[int]] = None
    replicas: Optional[int] = Field(None, ge=1)
    seeds: Optional[list[int]] = None
    deltas: Optional[list[int]] = None
    probe_time: Optional[float] = None
    tol: float = Field(1e-8, gt=0)
    max_iters: int = Field(100, ge=1)
    reference: Literal["picard", "large_n"] = "picard"
    reference_n: int = Field(8192, ge=1)
    reference_seed: Optional[int] = None
    alphas: Optional[list[float]] = None
    n_points: int = Field(100, ge=1)
    box_radius: float = Field(10.0, gt=0)
    n_samples: int = Field(2000, ge=1)
    success_radius: float = Field(0.1, gt=0)
    phi: TestFunctionConfig = Field(default_factory=TestFunctionConfig)
    grid: Optional[GridConfig] = None

    @field_validator("deltas")
    @classmethod
    def _positive_steps(cls, v):
        if v is not None and any(d < 1 for d in v):
            raise ValueError("deltas are step multiples and must be >= 1")
        return v


class OutputConfig(_Strict):
    dir: Optional[str] = None
    formats: list[Literal["csv", "dat", "png"]] = Field(default_factory=lambda: ["csv"])


class ExperimentConfig(_Strict):
    """Root of a configuration file."""

    subcommand: Optional[Literal[SUBCOMMANDS]] = None  # type: ignore[valid-type]
    cost: CostConfig = Field(default_factory=CostConfig)
    sim: SimConfig
    init: InitConfig = Field(default_factory=InitConfig)
    pso: PsoConfig = Field(default_factory=PsoConfig)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self.experiment, n) is None]
        if missing:
            raise ConfigError(f"experiment is missing required keys: {', '.join(missing)}")

    def make_cost(self) -> CostFunction:
        return make_cost(self.cost.name, self.sim.dim, **self.cost.params)

    def sim_params(self) -> SimParams:
        s = self.sim
        return SimParams(s.lam, s.sigma, s.alpha, s.dt, s.t_final, s.n_particles, s.dim, s.seed)

    def pso_params(self) -> PsoParams:
        s = self.sim
        return PsoParams(m=self.pso.m, lam=s.lam, sigma=s.sigma, alpha=s.alpha, dt=s.dt,
                         t_final=s.t_final, n_particles=s.n_particles, dim=s.dim, seed=s.seed)

    def init_law(self) -> InitialLaw:
        return _law(self.init)

    def velocity_law(self) -> InitialLaw:
        return _law(self.pso.velocity)

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _law(c: InitConfig) -> InitialLaw:
    return InitialLaw(c.kind, c.low, c.high, c.mean, c.std, c.point, c.atoms)


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: Any) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(f"invalid configuration: {_format_validation(err)}") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from None
    return parse_config(data)


def default_config_path(subcommand: str) -> Path:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    return Path(str(resources.files("cbomf") / "configs" / f"{subcommand}.yaml"))


def default_config(subcommand: str) -> ExperimentConfig:
    return load_config(default_config_path(subcommand))
