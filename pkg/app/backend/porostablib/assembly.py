import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import bmat, coo_matrix, csr_matrix, diags

from .constitutive import (
    NONWETTING,
    WETTING,
    fluid_density,
    fluid_density_derivative,
    mixture_density,
    porosity_pressure_coefficient,
)
from .elements import (
    assemble_body_force_operator,
    assemble_divergence,
    assemble_stiffness,
    assemble_traction,
    element_matrices,
)
from .fluxes import (
    FaceSet,
    build_face_set,
    phase_fluxes,
    pressure_jump,
    stabilization_coefficients,
    stabilization_flux,
    tpfa_phase_flux,
)
from .mesh import StructuredMesh
from .problem import ProblemDefinition, StabilizationSpec, SystemState
from .sources import collect_sources, pressure_constraints

logger = logging.getLogger("porostab")

__all__ = [
    "Assembler",
    "BlockJacobian",
    "BlockResidual",
    "StabilizationSpec",
    "SystemState",
    "assemble_jacobian",
    "assemble_macro_C",
    "incompressible_stabilization_matrix",
    "assemble_residual",
    "jacobian_fd_check",
    "pressure_jump",
    "stabilization_flux",
    "tpfa_phase_flux",
]

BLOCK_NAMES = ("uu", "us", "up", "su", "ss", "sp", "pu", "ps", "pp")


@dataclass
class BlockResidual:
    """Momentum residual on the free displacement dofs, wetting (s rows) and non-wetting (p rows) mass residuals"""

    u: np.ndarray
    s: np.ndarray
    p: np.ndarray

    def norms(self) -> Tuple[float, float, float]:
        return float(np.linalg.norm(self.u)), float(np.linalg.norm(self.s)), float(np.linalg.norm(self.p))


@dataclass
class BlockJacobian:
    """
    3×3 block Jacobian. Row blocks are momentum, wetting mass and non-wetting mass; column blocks are free
    displacements, saturations and pressures. The stabilization parts C_sp and C_pp are already included in sp and
    pp and are kept separately for inspection.
    """

    uu: csr_matrix
    us: csr_matrix
    up: csr_matrix
    su: csr_matrix
    ss: csr_matrix
    sp: csr_matrix
    pu: csr_matrix
    ps: csr_matrix
    pp: csr_matrix
    c_sp: csr_matrix
    c_pp: csr_matrix

    def block(self, name: str) -> csr_matrix:
        if name not in BLOCK_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_csr(self, two_phase: bool = True) -> csr_matrix:
        if two_phase:
            blocks = [[self.uu, self.us, self.up], [self.su, self.ss, self.sp], [self.pu, self.ps, self.pp]]
        else:
            blocks = [[self.uu, self.up], [self.su, self.sp]]
        return bmat(blocks, format="csr")

    def flow_block(self, two_phase: bool = True) -> csr_matrix:
        if two_phase:
            return bmat([[self.ss, self.sp], [self.ps, self.pp]], format="csr")
        return self.sp.tocsr()

    def coupling_block(self, two_phase: bool = True) -> csr_matrix:
        """Momentum rows, flow columns"""
        if two_phase:
            return bmat([[self.us, self.up]], format="csr")
        return self.up.tocsr()


class _CooBuilder:
    def __init__(self, shape: Tuple[int, int]):
        self.shape = shape
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows)
        self.rows.append(rows.ravel())
        self.cols.append(np.broadcast_to(np.asarray(cols), rows.shape).ravel())
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).ravel())

    def build(self, zero_rows: Optional[np.ndarray] = None, unit_diagonal: Optional[np.ndarray] = None) -> csr_matrix:
        """Sum the entries; rows in zero_rows keep their structure with zero values, then get unit_diagonal"""
        if not self.rows:
            return csr_matrix(self.shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals).copy()
        if zero_rows is not None and len(zero_rows):
            vals[np.isin(rows, zero_rows)] = 0.0
        if unit_diagonal is not None and len(unit_diagonal):
            rows = np.concatenate([rows, unit_diagonal])
            cols = np.concatenate([cols, unit_diagonal])
            vals = np.concatenate([vals, np.ones(len(unit_diagonal))])
        return coo_matrix((vals, (rows, cols)), shape=self.shape).tocsr()


def _add_face_pair(builder: _CooBuilder, fs: FaceSet, scale: float, d_k: np.ndarray, d_l: np.ndarray):
    """Rows: K gets −scale·dF, L gets +scale·dF; columns: K and L unknowns"""
    k, l_ = fs.cell_k, fs.cell_l
    inner = l_ >= 0
    lk = np.maximum(l_, 0)
    builder.add(k, k, -scale * d_k)
    builder.add(k[inner], lk[inner], -scale * d_l[inner])
    builder.add(lk[inner], k[inner], scale * d_k[inner])
    builder.add(lk[inner], lk[inner], scale * d_l[inner])


class Assembler:
    """
    Discrete residual and Jacobian of the Q1–P0 poromechanics system of one problem. Everything that only depends on
    geometry and materials (element integrals, transmissibilities, dof partition, reference state) is built once.
    """

    def __init__(self, problem: ProblemDefinition):
        self.problem = problem
        mesh = problem.mesh
        self.mesh = mesh
        self.materials = problem.materials
        self.solid = problem.materials.solid
        self.dim = mesh.dim
        self.volume = mesh.cell_volume
        self.two_phase = not problem.single_phase
        self.gravity = np.asarray(problem.gravity, dtype=float)
        self.has_gravity = bool(np.any(self.gravity != 0.0))

        self.element = element_matrices(mesh.h, self.solid.lame, self.solid.shear)
        stiffness = assemble_stiffness(mesh, self.element)
        divergence = assemble_divergence(mesh, self.element)
        body = assemble_body_force_operator(mesh, self.element, self.gravity)

        n_dof = mesh.n_nodes * mesh.dim
        fixed = np.zeros(n_dof, dtype=bool)
        self.fixed_values = np.zeros(n_dof)
        for bc in problem.displacement_bcs:
            dofs = mesh.boundary_nodes(bc.side) * mesh.dim + bc.component
            fixed[dofs] = True
            self.fixed_values[dofs] = bc.value
        self.fixed = fixed
        self.free_dofs = np.flatnonzero(~fixed)
        self.n_u = len(self.free_dofs)
        self.n_cells = mesh.n_cells

        self.stiffness = stiffness
        self.divergence = divergence
        self.body_force = body
        self.stiffness_free = stiffness[self.free_dofs][:, self.free_dofs].tocsr()
        self.divergence_free = divergence[:, self.free_dofs].tocsr()
        self.body_force_free = body[self.free_dofs].tocsr()
        self.traction_load = np.zeros(n_dof)
        for traction in problem.tractions:
            self.traction_load += assemble_traction(mesh, traction.side, traction.vector)

        self.face_set = build_face_set(mesh, problem.permeability, self.gravity, problem.pressure_bcs)
        self.macro_face_set = build_face_set(
            mesh, problem.permeability, self.gravity, (), faces=mesh.macro_interior_faces
        )
        self.pressure_coefficient = porosity_pressure_coefficient(self.solid, problem.porosity)
        self.set_reference(self.initial_state())

    # -- state handling -------------------------------------------------------------------------------------------

    def initial_state(self) -> SystemState:
        state = SystemState.initial(self.problem)
        state.u[self.fixed] = self.fixed_values[self.fixed]
        return state

    def set_reference(self, state: SystemState):
        """Mechanical reference: the momentum balance is written for p − p_ref and ρ − ρ_ref"""
        self.reference_pressure = state.p.copy()
        self.reference_strain = self.divergence @ state.u / self.volume
        self.reference_porosity = self.problem.porosity.copy()
        self.reference_density = self.mixture_density(state)

    def to_vector(self, state: SystemState) -> np.ndarray:
        return np.concatenate([state.u[self.free_dofs], state.s, state.p])

    def from_vector(self, x: np.ndarray, template: SystemState) -> SystemState:
        state = template.copy()
        state.u[self.free_dofs] = x[: self.n_u]
        state.s = x[self.n_u : self.n_u + self.n_cells].copy()
        state.p = x[self.n_u + self.n_cells :].copy()
        return state

    def apply_update(self, state: SystemState, dx: np.ndarray) -> SystemState:
        """Add a Newton correction of the active unknowns ([u, s, p] two-phase, [u, p] single-phase)"""
        new = state.copy()
        new.u[self.free_dofs] += dx[: self.n_u]
        if self.two_phase:
            new.s = new.s + dx[self.n_u : self.n_u + self.n_cells]
            new.p = new.p + dx[self.n_u + self.n_cells :]
        else:
            new.p = new.p + dx[self.n_u :]
        return new

    def system_rhs(self, residual: BlockResidual) -> np.ndarray:
        if self.two_phase:
            return np.concatenate([residual.u, residual.s, residual.p])
        return np.concatenate([residual.u, residual.s])

    def active_norms(self, residual: BlockResidual) -> List[float]:
        norms = residual.norms()
        return list(norms) if self.two_phase else [norms[0], norms[1]]

    # -- constitutive evaluation ----------------------------------------------------------------------------------

    def volumetric_strain(self, state: SystemState) -> np.ndarray:
        return self.divergence @ state.u / self.volume

    def porosity(self, state: SystemState) -> np.ndarray:
        return (
            self.reference_porosity
            + self.solid.biot * (self.volumetric_strain(state) - self.reference_strain)
            + self.pressure_coefficient * (state.p - self.reference_pressure)
        )

    def mixture_density(self, state: SystemState) -> np.ndarray:
        phi = self.porosity(state)
        rho_w = fluid_density(self.materials.wetting, state.p)
        rho_o = fluid_density(self.materials.nonwetting, state.p)
        return mixture_density(phi, state.s, self.solid.grain_density, rho_w, rho_o)

    def phase_masses(self, state: SystemState) -> Tuple[np.ndarray, np.ndarray]:
        phi = self.porosity(state)
        rho_w = fluid_density(self.materials.wetting, state.p)
        rho_o = fluid_density(self.materials.nonwetting, state.p)
        return rho_w * phi * state.s, rho_o * phi * (1.0 - state.s)

    def stabilization_weights(self, prev: SystemState) -> Tuple[np.ndarray, np.ndarray]:
        return stabilization_coefficients(
            self.macro_face_set, prev.p, prev.s, self.materials, self.problem.stabilization, self.volume
        )

    # -- residual and Jacobian ------------------------------------------------------------------------------------

    def assemble(
        self, state: SystemState, prev: SystemState, dt: float, t: float, jacobian: bool = True
    ) -> Tuple[BlockResidual, Optional[BlockJacobian]]:
        """Residual of the backward-Euler step prev -> state ending at time t, and optionally its Jacobian"""
        state.check(self.mesh)
        prev.check(self.mesh)
        n = self.n_cells
        V = self.volume
        b = self.solid.biot
        wetting, nonwetting = self.materials.wetting, self.materials.nonwetting

        phi = self.porosity(state)
        rho_w = fluid_density(wetting, state.p)
        rho_o = fluid_density(nonwetting, state.p)
        drho_w = fluid_density_derivative(wetting, state.p)
        drho_o = fluid_density_derivative(nonwetting, state.p)
        s = state.s
        rho_mix = mixture_density(phi, s, self.solid.grain_density, rho_w, rho_o)

        # momentum
        r_u_full = (
            self.stiffness @ state.u
            - b * (self.divergence.T @ (state.p - self.reference_pressure))
            - self.body_force @ (rho_mix - self.reference_density)
            - self.traction_load
        )
        r_u = r_u_full[self.free_dofs]

        # accumulation
        m_w, m_o = rho_w * phi * s, rho_o * phi * (1.0 - s)
        m_w_prev, m_o_prev = self.phase_masses(prev)
        r_s = -V * (m_w - m_w_prev)
        r_p = -V * (m_o - m_o_prev)

        # physical fluxes
        fs = self.face_set
        fluxes = {
            phase: phase_fluxes(fs, state.p, s, self.materials.fluid(phase), self.materials.relperm, phase)
            for phase in (WETTING, NONWETTING)
        }
        inner = fs.interior
        for r, phase in ((r_s, WETTING), (r_p, NONWETTING)):
            flux = fluxes[phase].flux
            np.add.at(r, fs.cell_k, -dt * flux)
            np.add.at(r, fs.cell_l[inner], dt * flux[inner])

        # stabilization
        mfs = self.macro_face_set
        alpha_w, alpha_o = self.stabilization_weights(prev)
        increment = state.p - prev.p
        dp_jump = increment[mfs.cell_l] - increment[mfs.cell_k]
        for r, alpha in ((r_s, alpha_w), (r_p, alpha_o)):
            g = -alpha * dp_jump
            np.add.at(r, mfs.cell_k, -g)
            np.add.at(r, mfs.cell_l, g)

        # sources
        sources = collect_sources(self.problem, state, t)
        r_s += dt * sources.q_w
        r_p += dt * sources.q_o

        constrained, targets = pressure_constraints(self.problem, t)
        if len(constrained):
            r_s[constrained] = state.p[constrained] - targets

        residual = BlockResidual(u=r_u, s=r_s, p=r_p)
        if not jacobian:
            return residual, None

        # mixture density sensitivities for the gravity load
        dmix_dphi = -self.solid.grain_density + rho_w * s + rho_o * (1.0 - s)
        dmix_ds = phi * (rho_w - rho_o)
        dmix_dp = phi * (drho_w * s + drho_o * (1.0 - s)) + dmix_dphi * self.pressure_coefficient

        D = self.divergence_free
        uu = self.stiffness_free
        up = -b * D.T
        us = csr_matrix((self.n_u, n))
        if self.has_gravity:
            body = self.body_force_free
            uu = uu - body @ diags(dmix_dphi * b / V) @ D
            up = up - body @ diags(dmix_dp)
            us = -(body @ diags(dmix_ds))
        row_mask = np.ones(n)
        row_mask[constrained] = 0.0
        su = diags(-rho_w * s * b * row_mask) @ D
        pu = diags(-rho_o * (1.0 - s) * b) @ D

        cells = np.arange(n)
        blocks = {name: _CooBuilder((n, n)) for name in ("ss", "sp", "ps", "pp", "c_sp", "c_pp")}
        cphi = self.pressure_coefficient
        blocks["ss"].add(cells, cells, -V * rho_w * phi + dt * sources.dq_w_ds)
        blocks["sp"].add(cells, cells, -V * (drho_w * phi * s + rho_w * s * cphi) + dt * sources.dq_w_dp)
        blocks["ps"].add(cells, cells, V * rho_o * phi + dt * sources.dq_o_ds)
        blocks["pp"].add(
            cells, cells, -V * (drho_o * phi * (1.0 - s) + rho_o * (1.0 - s) * cphi) + dt * sources.dq_o_dp
        )
        for (sat_block, pres_block), phase in ((("ss", "sp"), WETTING), (("ps", "pp"), NONWETTING)):
            f = fluxes[phase]
            _add_face_pair(blocks[sat_block], fs, dt, f.d_sk, f.d_sl)
            _add_face_pair(blocks[pres_block], fs, dt, f.d_pk, f.d_pl)

        for names, alpha in ((("sp", "c_sp"), alpha_w), (("pp", "c_pp"), alpha_o)):
            # G = −α⟦Δp⟧: dG/dp_K = α, dG/dp_L = −α
            for name in names:
                _add_face_pair(blocks[name], mfs, 1.0, alpha, -alpha)

        zero = constrained if len(constrained) else None
        jac = BlockJacobian(
            uu=uu.tocsr(),
            us=us.tocsr(),
            up=up.tocsr(),
            su=su.tocsr(),
            ss=blocks["ss"].build(zero_rows=zero),
            sp=blocks["sp"].build(zero_rows=zero, unit_diagonal=constrained),
            pu=pu.tocsr(),
            ps=blocks["ps"].build(),
            pp=blocks["pp"].build(),
            c_sp=blocks["c_sp"].build(zero_rows=zero),
            c_pp=blocks["c_pp"].build(),
        )
        return residual, jac

    def stabilization_residual(self, state: SystemState, prev: SystemState) -> Tuple[np.ndarray, np.ndarray]:
        """Per-cell contributions of the stabilization fluxes alone, for the wetting and non-wetting balances"""
        mfs = self.macro_face_set
        alpha_w, alpha_o = self.stabilization_weights(prev)
        increment = state.p - prev.p
        dp_jump = increment[mfs.cell_l] - increment[mfs.cell_k]
        out = []
        for alpha in (alpha_w, alpha_o):
            r = np.zeros(self.n_cells)
            g = -alpha * dp_jump
            np.add.at(r, mfs.cell_k, -g)
            np.add.at(r, mfs.cell_l, g)
            out.append(r)
        return out[0], out[1]

    def macro_stabilization_balance(self, state: SystemState, prev: SystemState) -> np.ndarray:
        """Net stabilization mass exchanged by every macroelement, (n_macro, 2); zero up to round-off"""
        r_w, r_o = self.stabilization_residual(state, prev)
        balance = np.zeros((self.mesh.n_macro, 2))
        np.add.at(balance[:, 0], self.mesh.macro_of_cell, r_w)
        np.add.at(balance[:, 1], self.mesh.macro_of_cell, r_o)
        return balance


def assemble_residual(
    assembler: Assembler, state: SystemState, prev: SystemState, dt: float, t: Optional[float] = None
) -> BlockResidual:
    t = prev.time + dt if t is None else t
    residual, _ = assembler.assemble(state, prev, dt, t, jacobian=False)
    return residual


def assemble_jacobian(
    assembler: Assembler, state: SystemState, prev: SystemState, dt: float, t: Optional[float] = None
) -> BlockJacobian:
    t = prev.time + dt if t is None else t
    _, jac = assembler.assemble(state, prev, dt, t, jacobian=True)
    assert jac is not None
    return jac


def incompressible_stabilization_matrix(mesh: StructuredMesh, tau: float, volume: Optional[float] = None) -> csr_matrix:
    """Constant-density C with [C]_ij = −τV⟦φ_i⟧⟦φ_j⟧ summed over macroelement-interior faces"""
    volume = mesh.cell_volume if volume is None else volume
    faces = mesh.macro_interior_faces
    k = mesh.face_cells[faces, 0]
    l_ = mesh.face_cells[faces, 1]
    builder = _CooBuilder((mesh.n_cells, mesh.n_cells))
    weight = tau * volume
    builder.add(k, k, -weight)
    builder.add(l_, l_, -weight)
    builder.add(k, l_, weight)
    builder.add(l_, k, weight)
    return builder.build()


def assemble_macro_C(mesh: StructuredMesh, macro: int, tau: float, volume: Optional[float] = None) -> np.ndarray:
    """
    Dense stabilization block of one macroelement in its local cell order (mesh.macro_cells[macro]). Each interior
    face contributes −τV to both diagonal entries and +τV to the two coupling entries.
    """
    volume = mesh.cell_volume if volume is None else volume
    cells = mesh.macro_cells[macro]
    local = {int(c): i for i, c in enumerate(cells)}
    block = np.zeros((len(cells), len(cells)))
    faces = mesh.macro_interior_faces[mesh.macro_of_cell[mesh.face_cells[mesh.macro_interior_faces, 0]] == macro]
    for f in faces:
        i = local[int(mesh.face_cells[f, 0])]
        j = local[int(mesh.face_cells[f, 1])]
        block[i, i] -= tau * volume
        block[j, j] -= tau * volume
        block[i, j] += tau * volume
        block[j, i] += tau * volume
    return block


def jacobian_fd_check(
    assembler: Assembler,
    state: SystemState,
    prev: SystemState,
    dt: float,
    direction: np.ndarray,
    eps: float = 1e-6,
    t: Optional[float] = None,
) -> float:
    """
    Relative mismatch between the Jacobian-vector product and a central finite difference of the residual along
    direction (a full [u_free, s, p] vector). The lagged stabilization weights depend on prev only and are therefore
    frozen identically in every evaluation.
    """
    t = prev.time + dt if t is None else t
    _, jac = assembler.assemble(state, prev, dt, t, jacobian=True)
    assert jac is not None
    full = bmat(
        [[jac.uu, jac.us, jac.up], [jac.su, jac.ss, jac.sp], [jac.pu, jac.ps, jac.pp]], format="csr"
    )
    x = assembler.to_vector(state)
    plus, _ = assembler.assemble(assembler.from_vector(x + eps * direction, state), prev, dt, t, jacobian=False)
    minus, _ = assembler.assemble(assembler.from_vector(x - eps * direction, state), prev, dt, t, jacobian=False)
    fd = (
        np.concatenate([plus.u, plus.s, plus.p]) - np.concatenate([minus.u, minus.s, minus.p])
    ) / (2.0 * eps)
    exact = full @ direction
    scale = np.linalg.norm(exact)
    if scale == 0.0:
        return float(np.linalg.norm(fd))
    mismatch = float(np.linalg.norm(fd - exact) / scale)
    logger.debug("Jacobian finite-difference mismatch %.3e", mismatch)
    return mismatch


def mass_balance(residual: BlockResidual) -> Dict[str, float]:
    """Global sums of the mass residuals"""
    return {"wetting": float(np.sum(residual.s)), "nonwetting": float(np.sum(residual.p))}
