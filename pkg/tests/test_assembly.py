from dataclasses import replace

import numpy as np
import pytest

from porostablib.assembly import (
    Assembler,
    assemble_jacobian,
    assemble_macro_C,
    assemble_residual,
    incompressible_stabilization_matrix,
    jacobian_fd_check,
    mass_balance,
)
from porostablib.benchmarks import setup_barry_mercer
from porostablib.mesh import build_structured_mesh
from porostablib.problem import StabilizationSpec


def random_states(assembler, rng):
    """A perturbed previous state and a further perturbed current state, saturations kept in [0.3, 0.7]"""
    prev = assembler.initial_state()
    prev.p = 1.0 + 0.1 * rng.standard_normal(assembler.n_cells)
    prev.s = rng.uniform(0.3, 0.7, assembler.n_cells)
    prev.u[assembler.free_dofs] = 0.01 * rng.standard_normal(assembler.n_u)
    state = prev.copy()
    state.p = prev.p + 0.05 * rng.standard_normal(assembler.n_cells)
    state.s = np.clip(prev.s + 0.02 * rng.standard_normal(assembler.n_cells), 0.3, 0.7)
    state.u[assembler.free_dofs] += 0.01 * rng.standard_normal(assembler.n_u)
    return state, prev


def nonzero_pattern(matrix):
    coo = matrix.tocoo()
    return {(int(i), int(j)) for i, j, v in zip(coo.row, coo.col, coo.data) if v != 0.0}


def test_jacobian_fd_check(two_phase_problem, rng):
    assembler = Assembler(two_phase_problem)
    state, prev = random_states(assembler, rng)
    n = assembler.n_u + 2 * assembler.n_cells
    for _ in range(3):
        direction = rng.standard_normal(n)
        assert jacobian_fd_check(assembler, state, prev, 0.1, direction) < 1e-6


def test_jacobian_fd_check_blocks(two_phase_problem, rng):
    assembler = Assembler(two_phase_problem)
    state, prev = random_states(assembler, rng)
    sizes = [assembler.n_u, assembler.n_cells, assembler.n_cells]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for b in range(3):
        direction = np.zeros(offsets[-1])
        direction[offsets[b] : offsets[b + 1]] = rng.standard_normal(sizes[b])
        assert jacobian_fd_check(assembler, state, prev, 0.1, direction) < 1e-6


def test_residual_zero_at_rest(two_phase_problem):
    assembler = Assembler(two_phase_problem)
    state = assembler.initial_state()
    residual = assemble_residual(assembler, state, state, 0.1)
    # gravity drives flow, mechanics start in equilibrium
    np.testing.assert_allclose(residual.u, 0.0, atol=1e-14)


def test_global_conservation(two_phase_problem, rng):
    assembler = Assembler(replace(two_phase_problem, pressure_bcs=()))
    state, prev = random_states(assembler, rng)
    residual = assemble_residual(assembler, state, prev, 0.1)
    m_w, m_o = assembler.phase_masses(state)
    m_w_prev, m_o_prev = assembler.phase_masses(prev)
    balance = mass_balance(residual)
    volume = assembler.volume
    scale = np.abs(residual.s).sum() + np.abs(residual.p).sum()
    assert balance["wetting"] + volume * np.sum(m_w - m_w_prev) == pytest.approx(0.0, abs=1e-12 * scale)
    assert balance["nonwetting"] + volume * np.sum(m_o - m_o_prev) == pytest.approx(0.0, abs=1e-12 * scale)


def test_macro_stabilization_balance(two_phase_problem, rng):
    assembler = Assembler(two_phase_problem)
    state, prev = random_states(assembler, rng)
    r_w, r_o = assembler.stabilization_residual(state, prev)
    assert np.abs(r_w).max() > 0.0
    balance = assembler.macro_stabilization_balance(state, prev)
    assert balance.shape == (4, 2)
    assert np.abs(balance).max() <= 1e-14 * max(np.abs(r_w).max(), np.abs(r_o).max())


def test_stabilization_keeps_sparsity(two_phase_problem, rng):
    stabilized = Assembler(two_phase_problem)
    plain = Assembler(two_phase_problem.with_stabilization(StabilizationSpec.off()))
    state, prev = random_states(stabilized, rng)
    jac_stabilized = assemble_jacobian(stabilized, state, prev, 0.1)
    jac_plain = assemble_jacobian(plain, state, prev, 0.1)

    mesh = two_phase_problem.mesh
    stencil = {(c, c) for c in range(mesh.n_cells)}
    for f in mesh.interior_faces:
        k, l_ = (int(c) for c in mesh.face_cells[f])
        stencil |= {(k, l_), (l_, k)}
    for name in ("sp", "pp"):
        pattern = nonzero_pattern(jac_stabilized.block(name))
        assert pattern == nonzero_pattern(jac_plain.block(name))
        assert pattern == stencil
    assert nonzero_pattern(jac_stabilized.c_sp) <= stencil
    assert jac_plain.c_sp.nnz == jac_stabilized.c_sp.nnz


def test_stabilization_matrix_matches_jacobian():
    problem = setup_barry_mercer("modified", 8, stabilization=StabilizationSpec(tau=0.03))
    assembler = Assembler(replace(problem, pressure_sources=()))
    state = assembler.initial_state()
    jac = assemble_jacobian(assembler, state, state, 0.01)
    expected = 1000.0 * incompressible_stabilization_matrix(problem.mesh, 0.03).toarray()
    np.testing.assert_allclose(jac.c_sp.toarray(), expected, rtol=1e-13, atol=1e-15)


def test_incompressible_stabilization_matrix(square_mesh):
    c = incompressible_stabilization_matrix(square_mesh, 2.0)
    dense = c.toarray()
    np.testing.assert_allclose(dense, dense.T)
    np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-15)
    volume = square_mesh.cell_volume
    np.testing.assert_allclose(np.diag(dense), -2.0 * 2.0 * volume)
    # no coupling across macroelement boundaries
    assert dense[1, 2] == 0.0
    assert dense[0, 1] == pytest.approx(2.0 * volume)


@pytest.mark.parametrize(
    "extent,counts,graph_spectrum",
    [
        ((1.0, 1.0), (2, 2), [0.0, 2.0, 2.0, 4.0]),
        ((1.0, 2.0, 3.0), (2, 2, 2), [0.0, 2.0, 2.0, 2.0, 4.0, 4.0, 4.0, 6.0]),
    ],
)
def test_assemble_macro_C(extent, counts, graph_spectrum):
    mesh = build_structured_mesh(extent, counts)
    tau = 0.1
    block = assemble_macro_C(mesh, 0, tau)
    volume = mesh.cell_volume
    np.testing.assert_allclose(
        np.sort(np.linalg.eigvalsh(-block)), tau * volume * np.array(graph_spectrum), atol=1e-14
    )
    np.testing.assert_allclose(block, incompressible_stabilization_matrix(mesh, tau).toarray())


def test_pressure_source_row():
    problem = setup_barry_mercer("modified", 8, c=1.0)
    assembler = Assembler(problem)
    state = assembler.initial_state()
    cell = problem.pressure_source_cells()[0]
    t = 0.01
    residual = assemble_residual(assembler, state, state, 0.01, t)
    assert residual.s[cell] == pytest.approx(-np.sin(t))
    jac = assemble_jacobian(assembler, state, state, 0.01, t)
    row = jac.sp.getrow(cell).toarray().ravel()
    expected = np.zeros(problem.mesh.n_cells)
    expected[cell] = 1.0
    np.testing.assert_array_equal(row, expected)
    assert jac.su.getrow(cell).count_nonzero() == 0


def test_state_vector_roundtrip(two_phase_problem, rng):
    assembler = Assembler(two_phase_problem)
    state, _ = random_states(assembler, rng)
    x = assembler.to_vector(state)
    assert x.shape == (assembler.n_u + 2 * assembler.n_cells,)
    back = assembler.from_vector(x, assembler.initial_state())
    np.testing.assert_array_equal(back.u, state.u)
    np.testing.assert_array_equal(back.p, state.p)

    moved = assembler.apply_update(state, np.ones_like(x))
    np.testing.assert_allclose(moved.s, state.s + 1.0)
    np.testing.assert_array_equal(moved.u[assembler.fixed], state.u[assembler.fixed])


def test_density_weighted_rows_recover_incompressible_blocks(locked_problem, rng):
    assembler = Assembler(locked_problem)
    state, prev = random_states(assembler, rng)
    jac = assemble_jacobian(assembler, state, prev, 0.1)
    rho_w = locked_problem.materials.wetting.reference_density
    rho_o = locked_problem.materials.nonwetting.reference_density
    combined_u = (jac.su / rho_w + jac.pu / rho_o).toarray()
    np.testing.assert_allclose(combined_u, jac.up.T.toarray(), rtol=1e-13, atol=1e-15)
    combined_s = (jac.ss / rho_w + jac.ps / rho_o).toarray()
    np.testing.assert_allclose(combined_s, 0.0, atol=1e-14)
    # the saturation split of the stabilization weights sums to the single-phase C
    combined_p = (jac.sp / rho_w + jac.pp / rho_o).toarray()
    expected = incompressible_stabilization_matrix(locked_problem.mesh, 0.05).toarray()
    np.testing.assert_allclose(combined_p, expected, rtol=1e-12, atol=1e-15)
