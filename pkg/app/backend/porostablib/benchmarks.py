import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .analysis import tau_star
from .constitutive import CENTIPOISE, DAY, MEGAPASCAL, MILLIDARCY, FluidModel, MaterialSet, RelPermModel, SolidModel
from .errors import ProblemError
from .fluxes import macro_jump_rms
from .mesh import StructuredMesh, build_structured_mesh
from .problem import (
    DisplacementBC,
    PointSource,
    PressureBC,
    PressureSource,
    ProblemDefinition,
    SineSignal,
    StabilizationSpec,
    TimeSchedule,
    WellSpec,
)
from .solver import MarchHistory, SolverOptions, time_march

logger = logging.getLogger("porostab")

BARRY_MERCER_VARIANTS = ("drained", "undrained", "modified")
BENCHMARKS = BARRY_MERCER_VARIANTS + ("staircase",)
SOURCE_LOCATION = (0.25, 0.25)
PROFILE_X = 0.25

# Young's modulus (Pa), Poisson ratio, permeability (m²), time step and end time (s); None marks a derived value
BARRY_MERCER_TABLE: Dict[str, Dict[str, Optional[float]]] = {
    "drained": {"young": 1e5, "poisson": 0.1, "permeability": 1e-5, "dt": None, "end_time": None},
    "undrained": {"young": 1e5, "poisson": 0.1, "permeability": 1e-9, "dt": 1e-4, "end_time": 1e-4},
    "modified": {"young": 2.5, "poisson": 0.25, "permeability": 1e-11, "dt": 1e-2, "end_time": 1e-2},
}
WATER_VISCOSITY = 1e-3
WATER_DENSITY = 1000.0
PRESSURE_AMPLITUDE = 1.0


def _stabilization(solid: SolidModel, c: Optional[float], stabilization: Optional[StabilizationSpec]):
    if stabilization is not None:
        return stabilization
    if c is None:
        return StabilizationSpec.off()
    return StabilizationSpec.from_ratio(c, tau_star(solid.lame, solid.shear, solid.biot))


def loading_rate(young: float, poisson: float, permeability: float, viscosity: float = WATER_VISCOSITY) -> float:
    """β = (λ + 2G)κ/μ"""
    solid = SolidModel.from_young_poisson(young, poisson)
    return (solid.lame + 2.0 * solid.shear) * permeability / viscosity


def _square_sides_bcs() -> Tuple[Tuple[DisplacementBC, ...], Tuple[PressureBC, ...]]:
    tangential = (
        DisplacementBC("xmin", 1),
        DisplacementBC("xmax", 1),
        DisplacementBC("ymin", 0),
        DisplacementBC("ymax", 0),
    )
    pressure = tuple(PressureBC(side, 0.0) for side in ("xmin", "xmax", "ymin", "ymax"))
    return tangential, pressure


def setup_barry_mercer(
    variant: str,
    mesh_n: int = 16,
    c: Optional[float] = None,
    stabilization: Optional[StabilizationSpec] = None,
) -> ProblemDefinition:
    """
    Single-phase Barry–Mercer problem on the unit square with zero pressure and zero tangential displacement on every
    side. The drained and undrained variants load the medium with the rate source 2β sin(βt) at (0.25, 0.25), with β
    taken from the drained parameters; the modified variant prescribes p_max sin(t) in the source cell instead.
    """
    if variant not in BARRY_MERCER_VARIANTS:
        raise ProblemError(f"Unknown Barry-Mercer variant '{variant}', expected one of {BARRY_MERCER_VARIANTS}")
    row = BARRY_MERCER_TABLE[variant]
    mesh = build_structured_mesh((1.0, 1.0), (mesh_n, mesh_n))
    solid = SolidModel.from_young_poisson(row["young"], row["poisson"])
    water = FluidModel(reference_density=WATER_DENSITY, viscosity=WATER_VISCOSITY)
    materials = MaterialSet(solid=solid, wetting=water, nonwetting=water, relperm=RelPermModel())

    drained = BARRY_MERCER_TABLE["drained"]
    beta = loading_rate(drained["young"], drained["poisson"], drained["permeability"])
    if variant == "drained":
        schedule = TimeSchedule.uniform(2.0 * math.pi / (100.0 * beta), math.pi / (2.0 * beta))
    else:
        schedule = TimeSchedule.uniform(row["dt"], row["end_time"])

    point_sources: Tuple[PointSource, ...] = ()
    pressure_sources: Tuple[PressureSource, ...] = ()
    if variant == "modified":
        pressure_sources = (PressureSource(SOURCE_LOCATION, SineSignal(PRESSURE_AMPLITUDE)),)
    else:
        point_sources = (PointSource(SOURCE_LOCATION, SineSignal(2.0 * beta, beta)),)

    displacement_bcs, pressure_bcs = _square_sides_bcs()
    problem = ProblemDefinition(
        name=f"barry-mercer-{variant}",
        mesh=mesh,
        materials=materials,
        permeability=row["permeability"],
        porosity=0.2,
        schedule=schedule,
        stabilization=_stabilization(solid, c, stabilization),
        displacement_bcs=displacement_bcs,
        pressure_bcs=pressure_bcs,
        point_sources=point_sources,
        pressure_sources=pressure_sources,
        parameters={
            "variant": variant,
            "young": row["young"],
            "poisson": row["poisson"],
            "permeability": row["permeability"],
            "beta": beta,
            "source": list(SOURCE_LOCATION),
        },
    )
    logger.info("Set up %s on %s", problem.name, mesh.describe())
    return problem


def oscillation_metric(p: np.ndarray, mesh: StructuredMesh, excluded_cells: Sequence[int] = ()) -> float:
    """RMS pressure jump over macroelement-interior faces, leaving out the macroelements of source and well cells"""
    return macro_jump_rms(mesh, p, excluded_cells)


def relative_l2(values: np.ndarray, reference: np.ndarray, volumes: Optional[np.ndarray] = None) -> float:
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    weights = np.ones_like(reference) if volumes is None else np.asarray(volumes, dtype=float)
    norm = math.sqrt(float(np.sum(weights * reference**2)))
    diff = math.sqrt(float(np.sum(weights * (values - reference) ** 2)))
    if norm == 0.0:
        return diff
    return diff / norm


def restrict_to_coarse(fine: StructuredMesh, values: np.ndarray, coarse: StructuredMesh) -> np.ndarray:
    """Volume average of a P0 field on a nested finer grid over every coarse cell"""
    ratios = []
    for nf, nc in zip(fine.cell_counts, coarse.cell_counts):
        if nf % nc != 0:
            raise ProblemError(f"Mesh {fine.cell_counts} is not nested in {coarse.cell_counts}")
        ratios.append(nf // nc)
    # F-order reshape puts x first; split each axis into (coarse, ratio) pairs
    grid = np.asarray(values, dtype=float).reshape(fine.cell_counts, order="F")
    split_shape = []
    for nc, r in zip(coarse.cell_counts, ratios):
        split_shape.extend([nc, r])
    grid = grid.reshape(split_shape, order="C")
    averaged = grid.mean(axis=tuple(range(1, 2 * fine.dim, 2)))
    return averaged.reshape(-1, order="F")


@dataclass(frozen=True)
class ReferenceSolution:
    mesh: StructuredMesh
    pressure: np.ndarray
    time: float


def barry_mercer_reference(
    mesh_n_fine: int, options: Optional[SolverOptions] = None, c: float = 1.0
) -> ReferenceSolution:
    """Drained Barry–Mercer pressure at the end time, computed on a fine mesh with stabilization"""
    problem = setup_barry_mercer("drained", mesh_n_fine, c=c)
    history = time_march(problem, options=options)
    return ReferenceSolution(mesh=problem.mesh, pressure=history.final.p.copy(), time=history.final.time)


def pressure_profile(mesh: StructuredMesh, p: np.ndarray, x: float = PROFILE_X) -> Tuple[np.ndarray, np.ndarray]:
    """Cell centroid heights and pressures of the cell column of a 2D mesh containing the vertical line through x"""
    if mesh.dim != 2:
        raise ProblemError("Pressure profiles are taken on 2D meshes")
    column = mesh.cell_index[mesh.locate_cell((x, mesh.origin[1])), 0]
    cells = np.flatnonzero(mesh.cell_index[:, 0] == column)
    return mesh.cell_centroids[cells, 1], np.asarray(p)[cells]


def compare_runs(first: MarchHistory, second: MarchHistory) -> Dict[str, float]:
    """Relative L2 differences of the final pressure and saturation fields, taking the second run as reference"""
    a, b = first.final, second.final
    return {"pressure": relative_l2(a.p, b.p), "saturation": relative_l2(a.s, b.s)}


def first_step_oscillation(problem: ProblemDefinition, options: Optional[SolverOptions] = None) -> float:
    """Oscillation metric after the first time step of a problem's schedule"""
    dt = problem.schedule.initial_dt
    history = time_march(problem.with_schedule(TimeSchedule.uniform(dt, dt)), options=options)
    return history.diagnostics[0].oscillation


# multiphase desk-scale problem
STAIRCASE_EXTENT = 600.0
STAIRCASE_PROPERTIES = {
    "channel_porosity": 0.20,
    "host_porosity": 0.05,
    "channel_permeability": 1000.0 * MILLIDARCY,
    "host_permeability": 1.0 * MILLIDARCY,
    "residual_wetting": 0.2,
    "residual_nonwetting": 0.2,
    "water_density": 1035.0,
    "oil_density": 863.0,
    "water_viscosity": 0.3 * CENTIPOISE,
    "oil_viscosity": 3.0 * CENTIPOISE,
    "young": 5000.0 * MEGAPASCAL,
    "poisson": 0.25,
    "grain_density": 2650.0,
    "initial_pressure": 20.0 * MEGAPASCAL,
    "initial_saturation": 0.2,
    "delta_bhp": 5.0 * MEGAPASCAL,
    "ramp_time": 1.0 * DAY,
    "well_radius": 0.1524,
    "initial_dt": 1e-4 * DAY,
    "max_dt": 1.0 * DAY,
    "end_time": 100.0 * DAY,
}


def _ring_corners(n: int) -> Tuple[Tuple[int, int], ...]:
    lo, hi = 1, n - 2
    return (lo, lo), (hi, lo), (hi, hi), (lo, hi)


def spiral_channel(n: int) -> np.ndarray:
    """
    Boolean (n, n, n) mask of a channel that runs along one edge of a square ring per cell layer, turning a quarter
    and stepping one layer down at every corner, from the top layer to the bottom one.
    """
    if n < 6:
        raise ProblemError(f"The staircase channel needs at least 6 cells per axis, got {n}")
    lo, hi = 1, n - 2
    width = max(1, n // 6)
    mask = np.zeros((n, n, n), dtype=bool)
    for layer in range(n):
        k = n - 1 - layer
        edge = layer % 4
        if edge == 0:
            mask[lo : hi + 1, lo : lo + width, k] = True
        elif edge == 1:
            mask[hi - width + 1 : hi + 1, lo : hi + 1, k] = True
        elif edge == 2:
            mask[lo : hi + 1, hi - width + 1 : hi + 1, k] = True
        else:
            mask[lo : lo + width, lo : hi + 1, k] = True
    return mask


def staircase_well_cells(n: int) -> Tuple[Tuple[int, int, int], Tuple[int, int, int]]:
    """(i, j, k) of the injector at the start of the top edge and of the producer at the end of the bottom edge"""
    corners = _ring_corners(n)
    last_edge = (n - 1) % 4
    producer = corners[(last_edge + 1) % 4]
    return (corners[0][0], corners[0][1], n - 1), (producer[0], producer[1], 0)


def setup_staircase(
    scale: int = 12,
    gravity: bool = False,
    c: Optional[float] = None,
    stabilization: Optional[StabilizationSpec] = None,
    initial_saturation: Optional[float] = None,
) -> ProblemDefinition:
    """
    Two-phase waterflood through a high-permeability channel winding down from an injector in the top layer to a
    producer in the bottom layer. Rollers on every side but the traction-free top.
    """
    if scale % 2 != 0:
        raise ProblemError(f"Staircase scale must be even, got {scale}")
    props = STAIRCASE_PROPERTIES
    n = scale
    mesh = build_structured_mesh((STAIRCASE_EXTENT,) * 3, (n, n, n))
    channel = spiral_channel(n).reshape(-1, order="F")

    solid = SolidModel.from_young_poisson(props["young"], props["poisson"], grain_density=props["grain_density"])
    water = FluidModel(reference_density=props["water_density"], viscosity=props["water_viscosity"])
    oil = FluidModel(reference_density=props["oil_density"], viscosity=props["oil_viscosity"])
    relperm = RelPermModel(residual_wetting=props["residual_wetting"], residual_nonwetting=props["residual_nonwetting"])
    materials = MaterialSet(solid=solid, wetting=water, nonwetting=oil, relperm=relperm)

    injector, producer = staircase_well_cells(n)
    wells = (
        WellSpec(mesh.cell_at(injector), props["delta_bhp"], props["ramp_time"], props["well_radius"], name="injector"),
        WellSpec(mesh.cell_at(producer), -props["delta_bhp"], props["ramp_time"], props["well_radius"], name="producer"),
    )
    rollers = (
        DisplacementBC("xmin", 0),
        DisplacementBC("xmax", 0),
        DisplacementBC("ymin", 1),
        DisplacementBC("ymax", 1),
        DisplacementBC("zmin", 2),
    )
    s0 = props["initial_saturation"] if initial_saturation is None else initial_saturation

    problem = ProblemDefinition(
        name="staircase",
        mesh=mesh,
        materials=materials,
        permeability=np.where(channel, props["channel_permeability"], props["host_permeability"]),
        porosity=np.where(channel, props["channel_porosity"], props["host_porosity"]),
        schedule=TimeSchedule(props["initial_dt"], props["max_dt"], props["end_time"]),
        stabilization=_stabilization(solid, c, stabilization),
        gravity=(0.0, 0.0, -9.81) if gravity else (0.0, 0.0, 0.0),
        initial_pressure=props["initial_pressure"],
        initial_saturation=s0,
        single_phase=False,
        displacement_bcs=rollers,
        wells=wells,
        regions=channel.astype(int),
        parameters={"scale": n, "channel_cells": int(channel.sum()), "initial_saturation": s0},
    )
    logger.info("Set up staircase on %s with %d channel cells", mesh.describe(), int(channel.sum()))
    return problem


def setup_benchmark(
    name: str, mesh_n: Optional[int] = None, c: Optional[float] = None, gravity: bool = False
) -> ProblemDefinition:
    if name in BARRY_MERCER_VARIANTS:
        return setup_barry_mercer(name, mesh_n or 16, c=c)
    if name == "staircase":
        return setup_staircase(mesh_n or 12, gravity=gravity, c=c)
    raise ProblemError(f"Unknown benchmark '{name}', expected one of {BENCHMARKS}")
