import numpy as np
import pytest

from porostablib.elements import (
    assemble_body_force_operator,
    assemble_divergence,
    assemble_stiffness,
    assemble_traction,
    cell_dofs,
    element_matrices,
    gauss_points,
    shape_functions,
)


@pytest.mark.parametrize("dim", [2, 3])
def test_shape_functions_partition_of_unity(dim):
    points, weights = gauss_points(dim)
    assert weights.sum() == 2**dim
    values, gradients = shape_functions(points, dim)
    np.testing.assert_allclose(values.sum(axis=1), 1.0)
    np.testing.assert_allclose(gradients.sum(axis=1), 0.0, atol=1e-15)


def test_shape_functions_nodal_values():
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
    values, _ = shape_functions(corners, 2)
    np.testing.assert_allclose(values, np.eye(4))


@pytest.mark.parametrize("h", [(0.5, 0.25), (1.0, 2.0, 0.5)])
def test_element_matrices(h):
    em = element_matrices(h, lame=2.0, shear=1.5)
    dim = len(h)
    volume = float(np.prod(h))
    np.testing.assert_allclose(em.stiffness, em.stiffness.T, atol=1e-13)
    for axis in range(dim):
        translation = np.zeros(2**dim * dim)
        translation[axis::dim] = 1.0
        np.testing.assert_allclose(em.stiffness @ translation, 0.0, atol=1e-13)
        assert em.divergence @ translation == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(em.shape_integrals, volume / 2**dim)
    assert np.all(np.linalg.eigvalsh(em.stiffness) > -1e-12)


def test_divergence_of_uniform_dilation(square_mesh):
    em = element_matrices(square_mesh.h, 1.0, 1.0)
    divergence = assemble_divergence(square_mesh, em)
    u = square_mesh.node_coords.ravel()
    np.testing.assert_allclose(divergence @ u, 2.0 * square_mesh.cell_volumes)


def test_stiffness_assembly(cube_mesh):
    em = element_matrices(cube_mesh.h, 1.0, 1.0)
    stiffness = assemble_stiffness(cube_mesh, em)
    n_dof = cube_mesh.n_nodes * 3
    assert stiffness.shape == (n_dof, n_dof)
    np.testing.assert_allclose((stiffness - stiffness.T).toarray(), 0.0, atol=1e-13)
    np.testing.assert_allclose(stiffness @ np.tile([0.0, 0.0, 1.0], cube_mesh.n_nodes), 0.0, atol=1e-13)
    assert cell_dofs(cube_mesh).shape == (8, 24)


def test_body_force_operator(square_mesh):
    em = element_matrices(square_mesh.h, 1.0, 1.0)
    operator = assemble_body_force_operator(square_mesh, em, (0.0, -9.81))
    load = operator @ np.full(square_mesh.n_cells, 2.0)
    assert load[0::2].sum() == pytest.approx(0.0)
    assert load[1::2].sum() == pytest.approx(-2.0 * 9.81)


def test_traction(square_mesh):
    load = assemble_traction(square_mesh, "ymax", (0.0, -3.0))
    assert load[1::2].sum() == pytest.approx(-3.0)
    assert np.count_nonzero(load) == 5
    top = square_mesh.boundary_nodes("ymax")
    np.testing.assert_allclose(load[top * 2 + 1], [-0.375, -0.75, -0.75, -0.75, -0.375])
