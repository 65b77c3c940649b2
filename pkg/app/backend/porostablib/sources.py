import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .constitutive import (
    NONWETTING,
    WETTING,
    MaterialSet,
    fluid_density,
    fluid_density_derivative,
    phase_mobility,
    phase_mobility_derivative,
)
from .errors import ProblemError
from .mesh import StructuredMesh
from .problem import PointSource, ProblemDefinition, SystemState, WellSpec

logger = logging.getLogger("porostab")

EQUIVALENT_RADIUS_FACTOR = 0.2


def point_source(source: PointSource, mesh: StructuredMesh, t: float, wetting_density: float = 1.0) -> np.ndarray:
    """
    Per-cell mass rate (kg/s) of a Dirac source: the whole rate goes to the containing cell. Volumetric rates are
    converted with the given density.
    """
    rates = np.zeros(mesh.n_cells)
    cell = mesh.locate_cell(source.location)
    rate = source.rate(t)
    rates[cell] = rate * wetting_density if source.volumetric else rate
    return rates


def well_index(mesh: StructuredMesh, permeability: float, well: WellSpec) -> float:
    """Peaceman index WI = 2πκh/(ln(r_eq/r_w) + skin) of a vertical well, r_eq = 0.2·Δh"""
    h = mesh.h
    thickness = h[-1] if mesh.dim == 3 else 1.0
    r_eq = EQUIVALENT_RADIUS_FACTOR * h[0]
    denominator = math.log(r_eq / well.radius) + well.skin
    if denominator <= 0:
        raise ProblemError(f"Well '{well.name}' radius {well.radius!r} is too large for cells of size {h[0]!r}")
    return 2.0 * math.pi * permeability * thickness / denominator


def bottom_hole_pressure(well: WellSpec, initial_pressure: float, t: float) -> float:
    if well.ramp_time <= 0:
        return initial_pressure + well.delta_bhp
    return initial_pressure + well.delta_bhp * min(t / well.ramp_time, 1.0)


@dataclass
class SourceTerms:
    """Per-cell phase mass rates (kg/s) entering the cells, with derivatives for the Jacobian"""

    q_w: np.ndarray
    q_o: np.ndarray
    dq_w_dp: np.ndarray
    dq_w_ds: np.ndarray
    dq_o_dp: np.ndarray
    dq_o_ds: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SourceTerms":
        return cls(*(np.zeros(n) for _ in range(6)))


def well_source(
    well: WellSpec,
    state: SystemState,
    materials: MaterialSet,
    mesh: StructuredMesh,
    permeability: np.ndarray,
    initial_pressure: float,
    t: float,
) -> Tuple[float, float, Tuple[float, float, float, float]]:
    """
    Phase mass rates q_ℓ = ρ_ℓ λ_ℓ WI (p_bh − p_cell) of one well. The mobility is upwinded between well and cell:
    an injecting well pushes the wetting phase with full mobility, a producing well draws both phases with the
    cell mobilities.

    Returns:
        (q_w, q_o, (dq_w/dp, dq_w/ds, dq_o/dp, dq_o/ds))
    """
    if not 0 <= well.cell < mesh.n_cells:
        raise ProblemError(f"Well '{well.name}' is placed in nonexistent cell {well.cell}")
    cell = well.cell
    wi = well_index(mesh, float(permeability[cell]), well)
    p_bh = bottom_hole_pressure(well, initial_pressure, t)
    p = float(state.p[cell])
    s = float(state.s[cell])
    drawdown = p_bh - p
    if drawdown > 0:
        water = materials.wetting
        rho = float(fluid_density(water, p_bh))
        mobility = 1.0 / water.viscosity
        q_w = rho * mobility * wi * drawdown
        return q_w, 0.0, (-rho * mobility * wi, 0.0, 0.0, 0.0)
    if drawdown < 0:
        rates = []
        derivatives = []
        for phase in (WETTING, NONWETTING):
            fluid = materials.fluid(phase)
            rho = float(fluid_density(fluid, p))
            drho = float(fluid_density_derivative(fluid, p))
            mob = float(phase_mobility(materials.relperm, s, fluid.viscosity, phase))
            dmob = float(phase_mobility_derivative(materials.relperm, s, fluid.viscosity, phase))
            rates.append(rho * mob * wi * drawdown)
            derivatives.append(drho * mob * wi * drawdown - rho * mob * wi)
            derivatives.append(rho * dmob * wi * drawdown)
        return rates[0], rates[1], (derivatives[0], derivatives[1], derivatives[2], derivatives[3])
    return 0.0, 0.0, (0.0, 0.0, 0.0, 0.0)


def collect_sources(problem: ProblemDefinition, state: SystemState, t: float) -> SourceTerms:
    """Point sources and wells of a problem evaluated at time t and the current state"""
    mesh = problem.mesh
    terms = SourceTerms.zeros(mesh.n_cells)
    rho_w0 = problem.materials.wetting.reference_density
    for source in problem.point_sources:
        terms.q_w += point_source(source, mesh, t, wetting_density=rho_w0)
    for well in problem.wells:
        q_w, q_o, (dwp, dws, dop, dos) = well_source(
            well, state, problem.materials, mesh, problem.permeability, problem.initial_pressure, t
        )
        terms.q_w[well.cell] += q_w
        terms.q_o[well.cell] += q_o
        terms.dq_w_dp[well.cell] += dwp
        terms.dq_w_ds[well.cell] += dws
        terms.dq_o_dp[well.cell] += dop
        terms.dq_o_ds[well.cell] += dos
    return terms


def pressure_constraints(problem: ProblemDefinition, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Cells whose wetting mass balance is replaced by p_cell = p_s(t), and the target pressures"""
    cells = np.array(problem.pressure_source_cells(), dtype=int)
    values = np.array([source.pressure(t) for source in problem.pressure_sources], dtype=float)
    return cells, values
