import hashlib
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .analysis import tau_star
from .benchmarks import BENCHMARKS, setup_benchmark
from .constitutive import SolidModel
from .errors import ConfigError
from .problem import ProblemDefinition, StabilizationSpec
from .solver import SolverOptions

logger = logging.getLogger("porostab")

OUTPUT_DIR_ENV = "POROSTAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "porostab-output"
DEFAULT_SWEEP = [0.0, 0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshOverrides(_Strict):
    n: Optional[int] = Field(default=None, ge=2, description="Cells per axis")

    @field_validator("n")
    @classmethod
    def even(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value % 2 != 0:
            raise ValueError("cells per axis must be even to tile macroelements")
        return value


class StabilizationConfig(_Strict):
    mode: Literal["off", "fixed", "ratio"] = "off"
    tau: Optional[float] = Field(default=None, ge=0.0)
    c: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def complete(self) -> "StabilizationConfig":
        if self.mode == "fixed" and self.tau is None:
            raise ValueError("mode 'fixed' needs tau")
        if self.mode == "ratio" and self.c is None:
            raise ValueError("mode 'ratio' needs c")
        return self

    def to_spec(self, solid: SolidModel) -> StabilizationSpec:
        if self.mode == "fixed":
            assert self.tau is not None
            return StabilizationSpec(tau=self.tau)
        if self.mode == "ratio":
            assert self.c is not None
            return StabilizationSpec.from_ratio(self.c, tau_star(solid.lame, solid.shear, solid.biot))
        return StabilizationSpec.off()


class SolverConfig(_Strict):
    newton_tol: float = Field(default=1e-6, gt=0.0)
    max_newton_iterations: int = Field(default=25, ge=1)
    krylov_tol: float = Field(default=1e-10, gt=0.0)
    restart: int = Field(default=200, ge=1)
    max_retries: int = Field(default=10, ge=0)
    linear_solver: Literal["gmres", "direct"] = "gmres"
    fixed_stress: bool = True

    def to_options(self) -> SolverOptions:
        return SolverOptions(**self.model_dump())


class AnalysisConfig(_Strict):
    spectrum: bool = True
    patch: bool = True
    patch_h: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])
    sweep_c: List[float] = Field(default_factory=lambda: list(DEFAULT_SWEEP))
    krylov: bool = True

    @field_validator("sweep_c")
    @classmethod
    def non_negative(cls, values: List[float]) -> List[float]:
        if any(c < 0 for c in values):
            raise ValueError("stabilization ratios must be non-negative")
        return values

    @field_validator("patch_h")
    @classmethod
    def patch_geometry(cls, values: List[float]) -> List[float]:
        if len(values) not in (2, 3) or any(h <= 0 for h in values):
            raise ValueError("patch_h needs 2 or 3 positive cell sizes")
        return values


class OutputConfig(_Strict):
    directory: Optional[str] = None
    snapshot_times: List[float] = Field(default_factory=list)
    profile_x: float = 0.25


class RunConfig(_Strict):
    benchmark: Literal["drained", "undrained", "modified", "staircase"]
    mesh: MeshOverrides = Field(default_factory=MeshOverrides)
    gravity: bool = False
    stabilization: StabilizationConfig = Field(default_factory=StabilizationConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.model_dump(), sort_keys=True).encode("utf-8")).hexdigest()


def _format_validation_error(error: ValidationError) -> str:
    messages = []
    for detail in error.errors():
        where = ".".join(str(part) for part in detail["loc"]) or "<root>"
        messages.append(f"{where}: {detail['msg']}")
    return "; ".join(messages)


def parse_config(path: str) -> RunConfig:
    """Read and validate a YAML run configuration; unknown keys are errors"""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError("Configuration file does not exist", path=str(path))
    text = config_path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        if mark is not None:
            raise ConfigError(f"Invalid YAML: {problem}", path=str(path), line=mark.line + 1, column=mark.column + 1)
        raise ConfigError(f"Invalid YAML: {problem}", path=str(path))
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping of keys to values", path=str(path))
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e), path=str(path)) from e
    logger.info("Loaded configuration %s: %s", path, config.model_dump())
    return config


def config_from_benchmark(name: str) -> RunConfig:
    try:
        return RunConfig(benchmark=name)  # type: ignore[arg-type]
    except ValidationError as e:
        raise ConfigError(f"Unknown benchmark '{name}', expected one of {BENCHMARKS}") from e


def apply_overrides(
    config: RunConfig, c: Optional[float] = None, mesh_n: Optional[int] = None, out: Optional[str] = None
) -> RunConfig:
    """Command-line values win over the configuration file"""
    data = config.model_dump()
    if c is not None:
        data["stabilization"] = {"mode": "ratio", "c": c, "tau": None}
    if mesh_n is not None:
        data["mesh"] = {"n": mesh_n}
    if out is not None:
        data["output"]["directory"] = out
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def resolve_output_dir(config: RunConfig) -> Path:
    """Output directory from the configuration, else POROSTAB_OUTPUT_DIR, else a local default"""
    directory = config.output.directory or os.getenv(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    return Path(directory)


def build_problem(config: RunConfig) -> ProblemDefinition:
    problem = setup_benchmark(config.benchmark, config.mesh.n, gravity=config.gravity)
    stabilization = config.stabilization.to_spec(problem.materials.solid)
    return problem.with_stabilization(stabilization)
