import numpy as np
import pytest

from porostablib.constitutive import NONWETTING, WETTING, FluidModel, MaterialSet, RelPermModel, SolidModel
from porostablib.errors import ContractError
from porostablib.fluxes import (
    build_face_set,
    face_jumps,
    macro_jump_rms,
    phase_fluxes,
    pressure_jump,
    stabilization_coefficients,
    stabilization_flux,
    tpfa_phase_flux,
    upwind_from_k,
)
from porostablib.mesh import build_structured_mesh
from porostablib.problem import PressureBC, StabilizationSpec, SystemState

WATER = FluidModel(reference_density=1.0, viscosity=1.0)
MATERIALS = MaterialSet(
    solid=SolidModel(lame=1.0, shear=1.0),
    wetting=WATER,
    nonwetting=FluidModel(reference_density=0.5, viscosity=1.0),
    relperm=RelPermModel(),
)


@pytest.fixture
def small_mesh():
    return build_structured_mesh((1.0, 1.0), (2, 2))


def state_with(mesh, p, s=None):
    return SystemState(
        u=np.zeros(mesh.n_nodes * mesh.dim),
        s=np.ones(mesh.n_cells) if s is None else np.asarray(s, dtype=float),
        p=np.asarray(p, dtype=float),
    )


def test_pressure_jump(small_mesh):
    field = np.array([1.0, 4.0, 2.0, 8.0])
    assert pressure_jump(field, small_mesh.face(1)) == 3.0
    assert pressure_jump(field, small_mesh.face(0)) == -1.0
    np.testing.assert_array_equal(face_jumps(small_mesh, field, np.array([0, 1])), [-1.0, 3.0])


def test_upwind_ties_go_to_k():
    np.testing.assert_array_equal(upwind_from_k(np.array([-1.0, 0.0, 1.0])), [True, True, False])


def test_tpfa_flux_direction(small_mesh):
    state = state_with(small_mesh, [2.0, 1.0, 0.0, 0.0])
    face = small_mesh.face(1)
    perm = np.ones(4)
    # T = 1, Φ = −1, kr = 1, ρ = μ = 1
    assert tpfa_phase_flux(face, state, small_mesh, MATERIALS, perm, WETTING) == pytest.approx(1.0)
    assert tpfa_phase_flux(face, state, small_mesh, MATERIALS, perm, NONWETTING) == 0.0
    reversed_state = state_with(small_mesh, [1.0, 2.0, 0.0, 0.0])
    assert tpfa_phase_flux(face, reversed_state, small_mesh, MATERIALS, perm, WETTING) == pytest.approx(-1.0)


def test_tpfa_flux_hydrostatic(small_mesh):
    # face between cell 0 (y = 0.25) and cell 2 (y = 0.75)
    face = next(small_mesh.face(i) for i in small_mesh.interior_faces if small_mesh.face_axis[i] == 1)
    assert (face.cell_k, face.cell_l) == (0, 2)
    state = state_with(small_mesh, [10.0, 0.0, 5.0, 0.0])
    flux = tpfa_phase_flux(face, state, small_mesh, MATERIALS, np.ones(4), WETTING, gravity=(0.0, -10.0))
    assert flux == pytest.approx(0.0, abs=1e-14)


def test_tpfa_flux_boundary(small_mesh):
    state = state_with(small_mesh, [3.0, 0.0, 0.0, 0.0])
    boundary = PressureBC("xmin", 1.0)
    flux = tpfa_phase_flux(small_mesh.face(0), state, small_mesh, MATERIALS, np.ones(4), WETTING, boundary=boundary)
    # half-transmissibility 2, Φ = 1 − 3
    assert flux == pytest.approx(4.0)


def test_phase_flux_conservation(square_mesh, rng):
    fs = build_face_set(square_mesh, np.ones(16), (0.0, -1.0))
    assert len(fs) == len(square_mesh.interior_faces)
    p = rng.uniform(0.0, 1.0, 16)
    s = rng.uniform(0.2, 0.8, 16)
    fluxes = phase_fluxes(fs, p, s, WATER, RelPermModel(), WETTING)
    divergence = np.zeros(16)
    np.add.at(divergence, fs.cell_k, -fluxes.flux)
    np.add.at(divergence, fs.cell_l, fluxes.flux)
    assert divergence.sum() == pytest.approx(0.0, abs=1e-14)


def test_build_face_set_with_dirichlet(square_mesh):
    fs = build_face_set(square_mesh, np.ones(16), (0.0, 0.0), (PressureBC("ymin", 2.0, saturation=0.3),))
    assert len(fs) == len(square_mesh.interior_faces) + 4
    boundary = ~fs.interior
    np.testing.assert_array_equal(fs.boundary_pressure[boundary], 2.0)
    np.testing.assert_array_equal(fs.boundary_saturation[boundary], 0.3)


def test_stabilization_flux(small_mesh):
    stabilization = StabilizationSpec(tau=0.5)
    face = small_mesh.face(1)
    g_w, g_o = stabilization_flux(face, 2.0, 1.0, 0.5, 0.25, stabilization, volume=0.25)
    assert g_w == pytest.approx(-0.5 * 0.25 * 1.0 * 0.25 * 2.0)
    assert g_o == pytest.approx(-0.5 * 0.25 * 0.5 * 0.75 * 2.0)


def test_stabilization_flux_rejects_macro_boundary_faces(square_mesh):
    face = square_mesh.face(2)
    assert not face.macro_interior
    with pytest.raises(ContractError):
        stabilization_flux(face, 1.0, 1.0, 1.0, 1.0, StabilizationSpec(tau=1.0), volume=1.0)


def test_stabilization_coefficients_upwind(small_mesh):
    fs = build_face_set(small_mesh, np.ones(4), (0.0, 0.0), faces=small_mesh.macro_interior_faces)
    p = np.array([2.0, 1.0, 1.0, 1.0])
    s = np.array([0.4, 0.9, 0.9, 0.9])
    alpha_w, alpha_o = stabilization_coefficients(fs, p, s, MATERIALS, StabilizationSpec(tau=2.0), 0.25)
    first = int(np.flatnonzero((fs.cell_k == 0) & (fs.cell_l == 1))[0])
    # flow leaves cell 0, so cell 0 is upwind
    assert alpha_w[first] == pytest.approx(2.0 * 0.25 * 1.0 * 0.4)
    assert alpha_o[first] == pytest.approx(2.0 * 0.25 * 0.5 * 0.6)


def test_macro_jump_rms(square_mesh):
    macro_constant = square_mesh.macro_of_cell.astype(float)
    assert macro_jump_rms(square_mesh, macro_constant) == 0.0

    i, j = square_mesh.cell_index[:, 0], square_mesh.cell_index[:, 1]
    checkerboard = ((i + j) % 2).astype(float)
    assert macro_jump_rms(square_mesh, checkerboard) == pytest.approx(1.0)
    assert macro_jump_rms(square_mesh, checkerboard, excluded_cells=range(16)) == 0.0

    # a bump next to an excluded cell inside the same macroelement is not counted
    bump = np.zeros(16)
    bump[5] = 1.0
    assert square_mesh.macro_of_cell[5] == square_mesh.macro_of_cell[0]
    assert macro_jump_rms(square_mesh, bump) > 0.0
    assert macro_jump_rms(square_mesh, bump, excluded_cells=[0]) == 0.0
    assert macro_jump_rms(square_mesh, checkerboard, excluded_cells=[0]) == pytest.approx(1.0)
