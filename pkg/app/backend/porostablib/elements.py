import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .mesh import StructuredMesh

logger = logging.getLogger("porostab")

GAUSS_POINT = 1.0 / np.sqrt(3.0)


def gauss_points(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor 2-point Gauss rule on [-1, 1]^d"""
    points = np.array([[GAUSS_POINT * (2 * ((q >> a) & 1) - 1) for a in range(dim)] for q in range(2**dim)])
    return points, np.ones(2**dim)


def shape_functions(xi: np.ndarray, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Q1 shape functions and their reference gradients at the points xi (nq, d). Local node l sits at the corner with
    offsets (l >> a) & 1 along each axis a.

    Returns:
        values (nq, 2^d) and gradients (nq, 2^d, d) with respect to the reference coordinates
    """
    xi = np.atleast_2d(xi)
    signs = np.array([[2 * ((l >> a) & 1) - 1 for a in range(dim)] for l in range(2**dim)], dtype=float)
    factors = 0.5 * (1.0 + xi[:, None, :] * signs[None, :, :])
    values = np.prod(factors, axis=2)
    gradients = np.empty((xi.shape[0], 2**dim, dim))
    for a in range(dim):
        others = np.prod(np.delete(factors, a, axis=2), axis=2)
        gradients[:, :, a] = 0.5 * signs[None, :, a] * others
    return values, gradients


def elasticity_matrix(dim: int, lame: float, shear: float) -> np.ndarray:
    """Isotropic elasticity in Voigt notation (plane strain in 2D, engineering shear strains)"""
    n_normal = dim
    n_voigt = 3 if dim == 2 else 6
    c = np.zeros((n_voigt, n_voigt))
    c[:n_normal, :n_normal] = lame
    c[np.arange(n_normal), np.arange(n_normal)] = lame + 2.0 * shear
    c[np.arange(n_normal, n_voigt), np.arange(n_normal, n_voigt)] = shear
    return c


def strain_displacement(gradients: np.ndarray, dim: int) -> np.ndarray:
    """Voigt strain-displacement matrices B (nq, n_voigt, 2^d·d) from physical gradients (nq, 2^d, d)"""
    nq, nn, _ = gradients.shape
    shear_pairs = [(0, 1)] if dim == 2 else [(1, 2), (0, 2), (0, 1)]
    b = np.zeros((nq, dim + len(shear_pairs), nn * dim))
    for a in range(dim):
        b[:, a, a::dim] = gradients[:, :, a]
    for row, (a, c) in enumerate(shear_pairs, start=dim):
        b[:, row, a::dim] = gradients[:, :, c]
        b[:, row, c::dim] = gradients[:, :, a]
    return b


@dataclass(frozen=True)
class ElementMatrices:
    """
    Q1 element integrals shared by every cell of a uniform grid

    Attributes:
        stiffness (np.ndarray): ∫ Bᵀ 𝔺 B, (2^d·d, 2^d·d)
        divergence (np.ndarray): ∫ ∇·N for every displacement dof of the cell, (2^d·d,)
        shape_integrals (np.ndarray): ∫ N_l for every local node, (2^d,)
    """

    dim: int
    stiffness: np.ndarray
    divergence: np.ndarray
    shape_integrals: np.ndarray


def element_matrices(h: Sequence[float], lame: float, shear: float) -> ElementMatrices:
    dim = len(h)
    points, weights = gauss_points(dim)
    values, ref_gradients = shape_functions(points, dim)
    jacobian = np.array([2.0 / hi for hi in h])
    det = float(np.prod(h)) / 2**dim
    gradients = ref_gradients * jacobian[None, None, :]
    b = strain_displacement(gradients, dim)
    c = elasticity_matrix(dim, lame, shear)
    stiffness = np.einsum("q,qvi,vw,qwj->ij", weights * det, b, c, b)
    divergence = np.einsum("q,qi->i", weights * det, b[:, :dim, :].sum(axis=1))
    shape_integrals = np.einsum("q,ql->l", weights * det, values)
    return ElementMatrices(dim=dim, stiffness=stiffness, divergence=divergence, shape_integrals=shape_integrals)


def cell_dofs(mesh: StructuredMesh) -> np.ndarray:
    """Global displacement dofs of every cell, (n_cells, 2^d·d), ordered node-major like the element matrices"""
    nodes = mesh.cell_nodes
    return (nodes[:, :, None] * mesh.dim + np.arange(mesh.dim)[None, None, :]).reshape(mesh.n_cells, -1)


def assemble_stiffness(mesh: StructuredMesh, em: ElementMatrices) -> csr_matrix:
    dofs = cell_dofs(mesh)
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    data = np.tile(em.stiffness.ravel(), mesh.n_cells)
    n_dof = mesh.n_nodes * mesh.dim
    return coo_matrix((data, (rows, cols)), shape=(n_dof, n_dof)).tocsr()


def assemble_divergence(mesh: StructuredMesh, em: ElementMatrices) -> csr_matrix:
    """D with D[c, i] = ∫_c ∇·N_i, so that (D u)_c is the cell-integrated volumetric strain"""
    dofs = cell_dofs(mesh)
    rows = np.repeat(np.arange(mesh.n_cells), dofs.shape[1])
    data = np.tile(em.divergence, mesh.n_cells)
    return coo_matrix((data, (rows, dofs.ravel())), shape=(mesh.n_cells, mesh.n_nodes * mesh.dim)).tocsr()


def assemble_body_force_operator(mesh: StructuredMesh, em: ElementMatrices, gravity: Sequence[float]) -> csr_matrix:
    """G with G[i, c] = g_comp(i) ∫_c N_node(i); G @ ρ is the nodal gravity load of the cell densities ρ"""
    gravity = np.asarray(gravity, dtype=float)
    nodes = mesh.cell_nodes
    rows = (nodes[:, :, None] * mesh.dim + np.arange(mesh.dim)[None, None, :]).ravel()
    cols = np.repeat(np.arange(mesh.n_cells), nodes.shape[1] * mesh.dim)
    data = (em.shape_integrals[None, :, None] * gravity[None, None, :]).repeat(mesh.n_cells, axis=0).ravel()
    return coo_matrix((data, (rows, cols)), shape=(mesh.n_nodes * mesh.dim, mesh.n_cells)).tocsr()


def assemble_traction(mesh: StructuredMesh, side: str, vector: Sequence[float]) -> np.ndarray:
    """Consistent nodal load of a constant traction on one boundary side"""
    vector = np.asarray(vector, dtype=float)
    load = np.zeros(mesh.n_nodes * mesh.dim)
    faces = mesh.boundary_faces_on(side)
    axis = mesh.sides.index(side) // 2
    upper = side.endswith("max")
    on_face = np.flatnonzero(mesh.local_offsets[:, axis] == (1 if upper else 0))
    share = mesh.face_area[faces] / len(on_face)
    nodes = mesh.cell_nodes[mesh.face_cells[faces, 0]][:, on_face]
    for comp in range(mesh.dim):
        np.add.at(load, nodes.ravel() * mesh.dim + comp, np.repeat(share, len(on_face)) * vector[comp])
    return load
