import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .constitutive import MaterialSet
from .errors import ContractError, ProblemError
from .mesh import StructuredMesh

logger = logging.getLogger("porostab")


@dataclass(frozen=True)
class SineSignal:
    """amplitude · sin(frequency · t), used for rate and pressure controlled sources"""

    amplitude: float
    frequency: float = 1.0

    def __call__(self, t: float) -> float:
        return self.amplitude * math.sin(self.frequency * t)


@dataclass(frozen=True)
class StabilizationSpec:
    """
    Weight of the macroelement pressure-jump fluxes. tau is the stabilization constant (1/Pa), c the ratio τ/τ*
    it was derived from (zero when τ was given directly).
    """

    tau: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if self.tau < 0 or self.c < 0:
            raise ProblemError(f"Stabilization constants must be non-negative, got tau={self.tau!r}, c={self.c!r}")

    @property
    def enabled(self) -> bool:
        return self.tau > 0.0

    @classmethod
    def off(cls) -> "StabilizationSpec":
        return cls()

    @classmethod
    def from_ratio(cls, c: float, tau_star: float) -> "StabilizationSpec":
        return cls(tau=c * tau_star, c=c)


@dataclass(frozen=True)
class TimeSchedule:
    initial_dt: float
    max_dt: float
    end_time: float
    growth: float = 2.0

    def __post_init__(self):
        if not 0 < self.initial_dt <= self.max_dt:
            raise ProblemError(f"Need 0 < initial_dt <= max_dt, got {self.initial_dt!r} and {self.max_dt!r}")
        if not self.end_time > 0:
            raise ProblemError(f"End time must be positive, got {self.end_time!r}")
        if self.growth < 1.0:
            raise ProblemError(f"Time step growth factor must be at least 1, got {self.growth!r}")

    @classmethod
    def uniform(cls, dt: float, end_time: float) -> "TimeSchedule":
        return cls(initial_dt=dt, max_dt=dt, end_time=end_time, growth=1.0)


@dataclass(frozen=True)
class DisplacementBC:
    side: str
    component: int
    value: float = 0.0


@dataclass(frozen=True)
class PressureBC:
    """Dirichlet pressure on a boundary side; saturation is the state of fluid entering through it"""

    side: str
    pressure: float
    saturation: float = 1.0


@dataclass(frozen=True)
class Traction:
    side: str
    vector: Tuple[float, ...]


@dataclass(frozen=True)
class PointSource:
    """Rate-controlled Dirac source; volumetric rates are converted to mass with the reference wetting density"""

    location: Tuple[float, ...]
    rate: Callable[[float], float]
    volumetric: bool = True


@dataclass(frozen=True)
class PressureSource:
    """Pressure-controlled Dirac source, enforced as p_cell = pressure(t) in the containing cell"""

    location: Tuple[float, ...]
    pressure: Callable[[float], float]


@dataclass(frozen=True)
class WellSpec:
    """
    Bottom-hole pressure controlled well completed in a single cell

    Attributes:
        cell (int): Index of the perforated cell
        delta_bhp (float): Target bottom-hole overpressure relative to the initial pressure (Pa); positive injects
        ramp_time (float): Time over which the overpressure ramps linearly from zero (s)
        radius (float): Wellbore radius r_w (m)
        skin (float): Skin factor
    """

    cell: int
    delta_bhp: float
    ramp_time: float
    radius: float
    skin: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise ProblemError(f"Well radius must be positive, got {self.radius!r}")
        if self.ramp_time < 0:
            raise ProblemError(f"Well ramp time must be non-negative, got {self.ramp_time!r}")

    @property
    def injector(self) -> bool:
        return self.delta_bhp > 0


@dataclass(frozen=True, eq=False)
class ProblemDefinition:
    """
    Everything needed to march a poromechanics problem in time: geometry, materials, spatial properties, boundary
    conditions, sources and the time schedule. The last axis is the vertical one.
    """

    name: str
    mesh: StructuredMesh
    materials: MaterialSet
    permeability: np.ndarray
    porosity: np.ndarray
    schedule: TimeSchedule
    stabilization: StabilizationSpec = field(default_factory=StabilizationSpec)
    gravity: Tuple[float, ...] = ()
    initial_pressure: float = 0.0
    initial_saturation: float = 1.0
    single_phase: bool = True
    displacement_bcs: Tuple[DisplacementBC, ...] = ()
    pressure_bcs: Tuple[PressureBC, ...] = ()
    tractions: Tuple[Traction, ...] = ()
    point_sources: Tuple[PointSource, ...] = ()
    pressure_sources: Tuple[PressureSource, ...] = ()
    wells: Tuple[WellSpec, ...] = ()
    regions: Optional[np.ndarray] = None
    parameters: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        mesh = self.mesh
        if not self.gravity:
            object.__setattr__(self, "gravity", (0.0,) * mesh.dim)
        if len(self.gravity) != mesh.dim:
            raise ProblemError(f"Gravity vector {self.gravity} does not match the mesh dimension {mesh.dim}")
        for name in ("permeability", "porosity"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.ndim == 0:
                values = np.full(mesh.n_cells, float(values))
            if values.shape != (mesh.n_cells,):
                raise ProblemError(f"{name} must hold one value per cell ({mesh.n_cells}), got shape {values.shape}")
            object.__setattr__(self, name, values)
        if np.any(self.permeability < 0):
            raise ProblemError("Permeabilities must be non-negative")
        if np.any((self.porosity < 0) | (self.porosity > 1)):
            raise ProblemError("Porosities must lie in [0, 1]")
        for bc in (*self.displacement_bcs, *self.pressure_bcs, *self.tractions):
            if bc.side not in mesh.sides:
                raise ProblemError(f"Unknown boundary side '{bc.side}' in {type(bc).__name__}")
        for bc in self.displacement_bcs:
            if not 0 <= bc.component < mesh.dim:
                raise ProblemError(f"Displacement component {bc.component} does not exist in {mesh.dim}D")
        if not self.displacement_bcs:
            raise ProblemError("At least one displacement boundary condition is required to remove rigid modes")
        for well in self.wells:
            if not 0 <= well.cell < mesh.n_cells:
                raise ProblemError(f"Well '{well.name}' is placed in nonexistent cell {well.cell}")
        if not 0.0 <= self.initial_saturation <= 1.0:
            raise ProblemError(f"Initial saturation must lie in [0, 1], got {self.initial_saturation!r}")
        if self.single_phase and self.initial_saturation != 1.0:
            raise ProblemError("Single-phase problems are fully saturated with the wetting phase")

    def with_stabilization(self, stabilization: StabilizationSpec) -> "ProblemDefinition":
        return replace(self, stabilization=stabilization)

    def with_schedule(self, schedule: TimeSchedule) -> "ProblemDefinition":
        return replace(self, schedule=schedule)

    def point_source_cells(self) -> List[int]:
        return [self.mesh.locate_cell(source.location) for source in self.point_sources]

    def pressure_source_cells(self) -> List[int]:
        return [self.mesh.locate_cell(source.location) for source in self.pressure_sources]

    def source_cells(self) -> List[int]:
        """Cells hosting point sources, pressure sources or wells"""
        cells = self.point_source_cells() + self.pressure_source_cells() + [well.cell for well in self.wells]
        return sorted(set(cells))

    def describe(self) -> Dict[str, object]:
        solid = self.materials.solid
        return {
            "name": self.name,
            "mesh": list(self.mesh.cell_counts),
            "extent": list(self.mesh.extent),
            "lame": solid.lame,
            "shear": solid.shear,
            "biot": solid.biot,
            "tau": self.stabilization.tau,
            "c": self.stabilization.c,
            "initial_dt": self.schedule.initial_dt,
            "max_dt": self.schedule.max_dt,
            "end_time": self.schedule.end_time,
            "gravity": list(self.gravity),
            "single_phase": self.single_phase,
            **self.parameters,
        }


@dataclass
class SystemState:
    """
    Unknowns at one time level: nodal displacements (node-major, d components per node), cell saturations and cell
    pressures.
    """

    u: np.ndarray
    s: np.ndarray
    p: np.ndarray
    step: int = 0
    time: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(u=self.u.copy(), s=self.s.copy(), p=self.p.copy(), step=self.step, time=self.time)

    def check(self, mesh: StructuredMesh):
        if self.u.shape != (mesh.n_nodes * mesh.dim,) or self.s.shape != (mesh.n_cells,) or self.p.shape != (
            mesh.n_cells,
        ):
            raise ContractError(
                f"State sizes (u={self.u.shape}, s={self.s.shape}, p={self.p.shape}) do not match "
                f"the mesh ({mesh.n_nodes} nodes in {mesh.dim}D, {mesh.n_cells} cells)"
            )

    def displacement(self, dim: int) -> np.ndarray:
        return self.u.reshape(-1, dim)

    @classmethod
    def initial(cls, problem: ProblemDefinition) -> "SystemState":
        mesh = problem.mesh
        return cls(
            u=np.zeros(mesh.n_nodes * mesh.dim),
            s=np.full(mesh.n_cells, problem.initial_saturation),
            p=np.full(mesh.n_cells, problem.initial_pressure),
        )
