import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .constitutive import (
    NONWETTING,
    WETTING,
    FluidModel,
    MaterialSet,
    RelPermModel,
    fluid_density,
    fluid_density_derivative,
    phase_mobility,
    phase_mobility_derivative,
)
from .errors import ContractError
from .mesh import Face, StructuredMesh, transmissibilities
from .problem import PressureBC, StabilizationSpec, SystemState

logger = logging.getLogger("porostab")


def pressure_jump(field: np.ndarray, face: Face) -> float:
    """⟦χ⟧ = χ|L − χ|K on interior faces and −χ|K on the boundary"""
    if face.cell_l is None:
        return -float(field[face.cell_k])
    return float(field[face.cell_l]) - float(field[face.cell_k])


def face_jumps(mesh: StructuredMesh, field: np.ndarray, faces: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorized pressure_jump over a set of faces (all faces by default)"""
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces)
    k = mesh.face_cells[faces, 0]
    l_ = mesh.face_cells[faces, 1]
    other = np.where(l_ >= 0, field[np.maximum(l_, 0)], 0.0)
    return other - field[k]


@dataclass(frozen=True)
class FaceSet:
    """
    Faces that carry a physical flux: every interior face plus the boundary faces with a Dirichlet pressure. For
    boundary faces cell_l is -1 and the L state is the prescribed boundary state.

    Attributes:
        faces (np.ndarray): Mesh face indices
        cell_k, cell_l (np.ndarray): Adjacent cells
        trans (np.ndarray): Transmissibility Υ of every face
        drop (np.ndarray): −g·(x_L − x_K), the elevation term multiplying the face density
        boundary_pressure, boundary_saturation (np.ndarray): Prescribed L state (unused on interior faces)
    """

    faces: np.ndarray
    cell_k: np.ndarray
    cell_l: np.ndarray
    trans: np.ndarray
    drop: np.ndarray
    boundary_pressure: np.ndarray
    boundary_saturation: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return self.cell_l >= 0

    def __len__(self) -> int:
        return len(self.faces)


def build_face_set(
    mesh: StructuredMesh,
    permeability: np.ndarray,
    gravity: Sequence[float],
    pressure_bcs: Sequence[PressureBC] = (),
    faces: Optional[np.ndarray] = None,
) -> FaceSet:
    trans_all = transmissibilities(mesh, permeability)
    boundary_p = np.zeros(mesh.n_faces)
    boundary_s = np.ones(mesh.n_faces)
    dirichlet = np.zeros(mesh.n_faces, dtype=bool)
    for bc in pressure_bcs:
        on_side = mesh.boundary_faces_on(bc.side)
        dirichlet[on_side] = True
        boundary_p[on_side] = bc.pressure
        boundary_s[on_side] = bc.saturation
    if faces is None:
        faces = np.flatnonzero((mesh.face_cells[:, 1] >= 0) | dirichlet)
    faces = np.asarray(faces, dtype=int)
    k = mesh.face_cells[faces, 0]
    l_ = mesh.face_cells[faces, 1]
    x_k = mesh.cell_centroids[k]
    x_l = np.where((l_ >= 0)[:, None], mesh.cell_centroids[np.maximum(l_, 0)], mesh.face_centroid[faces])
    drop = -(x_l - x_k) @ np.asarray(gravity, dtype=float)
    return FaceSet(
        faces=faces,
        cell_k=k,
        cell_l=l_,
        trans=trans_all[faces],
        drop=drop,
        boundary_pressure=boundary_p[faces],
        boundary_saturation=boundary_s[faces],
    )


def _neighbor_state(fs: FaceSet, p: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    inner = fs.interior
    idx = np.maximum(fs.cell_l, 0)
    return np.where(inner, p[idx], fs.boundary_pressure), np.where(inner, s[idx], fs.boundary_saturation)


def phase_potential_jump(fs: FaceSet, p: np.ndarray, fluid: FluidModel) -> np.ndarray:
    """Φ = ⟦p⟧ + ρ^f g ⟦z⟧ with the arithmetic-mean face density"""
    p_l = _neighbor_state(fs, p, np.ones_like(p))[0]
    p_k = p[fs.cell_k]
    rho_f = 0.5 * (fluid_density(fluid, p_k) + fluid_density(fluid, p_l))
    return (p_l - p_k) + rho_f * fs.drop


def upwind_from_k(potential: np.ndarray) -> np.ndarray:
    """Flow goes from K to L when Φ < 0; ties are resolved towards K"""
    return potential <= 0.0


@dataclass(frozen=True)
class PhaseFluxes:
    """Mass fluxes F (kg/s, positive from K to L) and their derivatives with respect to the adjacent unknowns"""

    flux: np.ndarray
    upwind_k: np.ndarray
    d_pk: np.ndarray
    d_pl: np.ndarray
    d_sk: np.ndarray
    d_sl: np.ndarray


def phase_fluxes(
    fs: FaceSet, p: np.ndarray, s: np.ndarray, fluid: FluidModel, relperm: RelPermModel, phase: str
) -> PhaseFluxes:
    """Upwinded TPFA mass flux F = −ρ^upw λ^upw Υ Φ of one phase on every face of the set"""
    p_l, s_l = _neighbor_state(fs, p, s)
    p_k, s_k = p[fs.cell_k], s[fs.cell_k]
    rho_k, rho_l = fluid_density(fluid, p_k), fluid_density(fluid, p_l)
    drho_k, drho_l = fluid_density_derivative(fluid, p_k), fluid_density_derivative(fluid, p_l)
    potential = (p_l - p_k) + 0.5 * (rho_k + rho_l) * fs.drop
    from_k = upwind_from_k(potential)

    s_up = np.where(from_k, s_k, s_l)
    rho_up = np.where(from_k, rho_k, rho_l)
    mob_up = phase_mobility(relperm, s_up, fluid.viscosity, phase)
    dmob_up = phase_mobility_derivative(relperm, s_up, fluid.viscosity, phase)

    flux = -rho_up * mob_up * fs.trans * potential
    dphi_k = -1.0 + 0.5 * drho_k * fs.drop
    dphi_l = 1.0 + 0.5 * drho_l * fs.drop
    d_pk = -fs.trans * (rho_up * mob_up * dphi_k + np.where(from_k, drho_k, 0.0) * mob_up * potential)
    d_pl = -fs.trans * (rho_up * mob_up * dphi_l + np.where(from_k, 0.0, drho_l) * mob_up * potential)
    d_s = -fs.trans * rho_up * dmob_up * potential
    d_sk = np.where(from_k, d_s, 0.0)
    d_sl = np.where(from_k, 0.0, d_s)
    inner = fs.interior
    return PhaseFluxes(
        flux=flux,
        upwind_k=from_k,
        d_pk=d_pk,
        d_pl=np.where(inner, d_pl, 0.0),
        d_sk=d_sk,
        d_sl=np.where(inner, d_sl, 0.0),
    )


def tpfa_phase_flux(
    face: Face,
    state: SystemState,
    mesh: StructuredMesh,
    materials: MaterialSet,
    permeability: np.ndarray,
    phase: str,
    gravity: Optional[Sequence[float]] = None,
    boundary: Optional[PressureBC] = None,
) -> float:
    """Mass flux of one phase through a single face, see phase_fluxes"""
    gravity = (0.0,) * mesh.dim if gravity is None else gravity
    if face.cell_l is None and boundary is None:
        boundary = PressureBC(side=face.side or "", pressure=0.0)
    bcs = [boundary] if boundary is not None and face.cell_l is None else []
    fs = build_face_set(mesh, permeability, gravity, bcs, faces=np.array([face.index]))
    fluid = materials.fluid(phase)
    return float(phase_fluxes(fs, state.p, state.s, fluid, materials.relperm, phase).flux[0])


def stabilization_coefficients(
    fs: FaceSet,
    p_prev: np.ndarray,
    s_prev: np.ndarray,
    materials: MaterialSet,
    stabilization: StabilizationSpec,
    volume: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lagged weights α_w = τV[ρ_w s]^upw and α_o = τV[ρ_o(1 − s)]^upw of the stabilization fluxes, upwinded with the
    physical phase potentials of the previous time level.
    """
    alphas = []
    for phase in (WETTING, NONWETTING):
        fluid = materials.fluid(phase)
        from_k = upwind_from_k(phase_potential_jump(fs, p_prev, fluid))
        p_l, s_l = _neighbor_state(fs, p_prev, s_prev)
        up = np.where(from_k, fs.cell_k, np.maximum(fs.cell_l, 0))
        p_up = np.where(from_k, p_prev[fs.cell_k], p_l)
        s_up = np.where(from_k, s_prev[up], s_l)
        amount = s_up if phase == WETTING else 1.0 - s_up
        alphas.append(stabilization.tau * volume * fluid_density(fluid, p_up) * amount)
    return alphas[0], alphas[1]


def stabilization_flux(
    face: Face,
    pressure_increment_jump: float,
    lagged_density_w: float,
    lagged_density_o: float,
    lagged_saturation: float,
    stabilization: StabilizationSpec,
    volume: float,
) -> Tuple[float, float]:
    """
    Artificial fluxes (G_w, G_o) on a macroelement-interior face from the jump of the pressure increment over the
    step. The lagged density and saturation arguments are the upwind values at the previous time level.
    """
    if not face.macro_interior:
        raise ContractError(f"Face {face.index} is not interior to a macroelement; it cannot carry stabilization")
    alpha_w = stabilization.tau * volume * lagged_density_w * lagged_saturation
    alpha_o = stabilization.tau * volume * lagged_density_o * (1.0 - lagged_saturation)
    return -alpha_w * pressure_increment_jump, -alpha_o * pressure_increment_jump


def macro_jump_rms(mesh: StructuredMesh, field: np.ndarray, excluded_cells: Sequence[int] = ()) -> float:
    """
    Root-mean-square jump of a cell field over macroelement-interior faces. Macroelements holding an excluded cell
    are left out entirely.
    """
    faces = mesh.macro_interior_faces
    if len(excluded_cells):
        macros = np.unique(mesh.macro_of_cell[np.asarray(excluded_cells, dtype=int)])
        faces = faces[~np.isin(mesh.macro_of_cell[mesh.face_cells[faces, 0]], macros)]
    if len(faces) == 0:
        return 0.0
    jumps = face_jumps(mesh, np.asarray(field, dtype=float), faces)
    return float(np.sqrt(np.mean(jumps**2)))
