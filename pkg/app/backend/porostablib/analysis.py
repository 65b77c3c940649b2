import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import bmat, csr_matrix

from .assembly import Assembler, incompressible_stabilization_matrix
from .elements import assemble_divergence, assemble_stiffness, element_matrices
from .errors import ContractError, MaterialError
from .linearsolver import extremal_eigenvalues, factorize
from .mesh import build_structured_mesh
from .problem import ProblemDefinition, StabilizationSpec
from .solver import NewtonSolver, SolverOptions

logger = logging.getLogger("porostab")

ZERO_MODE_TOL = 1e-10


@dataclass(frozen=True)
class PatchSpectrum:
    """
    Spectrum of the Schur complement S = A_upᵀ A_uu⁻¹ A_up − C of one rigid, impermeable macroelement

    Attributes:
        eigenvalues (np.ndarray): Ascending eigenvalues (8 in 3D, 4 in 2D)
        h (Tuple[float, ...]): Cell sizes
    """

    eigenvalues: np.ndarray
    h: Tuple[float, ...]
    lame: float
    shear: float
    tau: float

    @property
    def volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def nonzero(self) -> np.ndarray:
        scale = max(float(np.max(np.abs(self.eigenvalues))), np.finfo(float).tiny)
        return self.eigenvalues[np.abs(self.eigenvalues) > ZERO_MODE_TOL * scale]

    @property
    def rank(self) -> int:
        return len(self.nonzero)

    @property
    def condition(self) -> float:
        nonzero = self.nonzero
        if len(nonzero) == 0:
            return math.inf
        return float(nonzero.max() / nonzero.min())


@dataclass(frozen=True)
class SchurReport:
    e_min: float
    e_max: float
    mesh_n: int
    c: float
    tau: float
    deflated: bool = False
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def condition(self) -> float:
        return self.e_max / self.e_min if self.e_min > 0 else math.inf


@dataclass(frozen=True)
class SweepRow:
    c: float
    tau: float
    e_min: float
    e_max: float
    condition: float
    krylov_iterations: Optional[int] = None


@dataclass(frozen=True)
class SaddleSystem:
    """B* = [[A_uu, A_up], [A_upᵀ, C]] of the incompressible limit"""

    a_uu: csr_matrix
    a_up: csr_matrix
    c: csr_matrix

    @property
    def matrix(self) -> csr_matrix:
        return bmat([[self.a_uu, self.a_up], [self.a_up.T, self.c]], format="csr")


def _check_moduli(lame: float, shear: float):
    if not lame + 4.0 * shear > 0:
        raise MaterialError(f"Need λ + 4G > 0, got λ={lame!r}, G={shear!r}")


def tau_star(lame: float, shear: float, biot: float = 1.0) -> float:
    """Recommended stabilization constant b²·9/(32(λ + 4G))"""
    _check_moduli(lame, shear)
    return biot**2 * 9.0 / (32.0 * (lame + 4.0 * shear))


def tau_admissible_range(lame: float, shear: float) -> Tuple[float, float]:
    """Interval of τ on which the cube patch reaches its minimal condition number of 3/2"""
    _check_moduli(lame, shear)
    return 9.0 / (64.0 * (lame + 4.0 * shear)), 9.0 / (32.0 * (lame + 4.0 * shear))


def patch_eigenvalues_analytic(
    h: Sequence[float], lame: float, shear: float, tau: float, biot: float = 1.0
) -> PatchSpectrum:
    """
    Closed-form patch spectrum. Each displacement component of the free center node couples to one cell sign
    pattern; the remaining patterns only see the stabilization.
    """
    h = tuple(float(x) for x in h)
    volume = float(np.prod(h))
    stiff = lame + 2.0 * shear
    if len(h) == 3:
        hx, hy, hz = h
        a_xy, a_xz, a_yz = hx * hy, hx * hz, hy * hz

        def coupled(a_main: float, a_other: float, a_third: float) -> float:
            mechanics = 9.0 * a_main**2 / (16.0 * (a_main**2 * stiff + a_other**2 * shear + a_third**2 * shear))
            return volume * (2.0 * tau + biot**2 * mechanics)

        values = [
            0.0,
            4.0 * volume * tau,
            4.0 * volume * tau,
            4.0 * volume * tau,
            6.0 * volume * tau,
            coupled(a_xy, a_xz, a_yz),
            coupled(a_xz, a_xy, a_yz),
            coupled(a_yz, a_xy, a_xz),
        ]
    elif len(h) == 2:
        hx, hy = h
        values = [
            0.0,
            4.0 * volume * tau,
            volume * (2.0 * tau + biot**2 * 3.0 * hy**2 / (4.0 * (stiff * hy**2 + shear * hx**2))),
            volume * (2.0 * tau + biot**2 * 3.0 * hx**2 / (4.0 * (shear * hy**2 + stiff * hx**2))),
        ]
    else:
        raise ContractError(f"Patch spectra exist in 2D and 3D only, got {len(h)} sizes")
    return PatchSpectrum(eigenvalues=np.sort(np.array(values)), h=h, lame=lame, shear=shear, tau=tau)


def schur_complement(saddle: SaddleSystem) -> np.ndarray:
    """Dense S = A_upᵀ A_uu⁻¹ A_up − C by column solves"""
    factor = factorize(saddle.a_uu, "displacement block")
    columns = factor.solve(saddle.a_up.toarray())
    s = saddle.a_up.T @ columns - saddle.c.toarray()
    return np.asarray(0.5 * (s + s.T))


def patch_test_numeric(
    h: Sequence[float], lame: float, shear: float, tau: float, biot: float = 1.0
) -> PatchSpectrum:
    """Assemble one macroelement with every boundary node fixed and no-flux faces, and return the spectrum of S"""
    h = tuple(float(x) for x in h)
    dim = len(h)
    mesh = build_structured_mesh([2.0 * x for x in h], [2] * dim)
    em = element_matrices(mesh.h, lame, shear)
    center = mesh.cell_nodes[0][-1]
    free = center * dim + np.arange(dim)
    stiffness = assemble_stiffness(mesh, em)
    divergence = assemble_divergence(mesh, em)
    saddle = SaddleSystem(
        a_uu=stiffness[free][:, free].tocsr(),
        a_up=(-biot * divergence[:, free].T).tocsr(),
        c=incompressible_stabilization_matrix(mesh, tau),
    )
    eigenvalues = scipy.linalg.eigh(schur_complement(saddle), eigvals_only=True)
    return PatchSpectrum(eigenvalues=np.sort(eigenvalues), h=h, lame=lame, shear=shear, tau=tau)


def condition_number_curve(
    lame: float, shear: float, c_values: Sequence[float], h: Sequence[float] = (1.0, 1.0, 1.0)
) -> List[Tuple[float, float]]:
    """Analytic κ(S) of the patch for τ = c·τ*"""
    star = tau_star(lame, shear)
    return [(float(c), patch_eigenvalues_analytic(h, lame, shear, c * star).condition) for c in c_values]


def _require_incompressible(problem: ProblemDefinition):
    if not problem.materials.incompressible:
        raise ContractError(
            f"The incompressible saddle system of '{problem.name}' needs b = 1 and incompressible grains and fluids"
        )


def assemble_incompressible_saddle(
    problem: ProblemDefinition, tau: Optional[float] = None, assembler: Optional[Assembler] = None
) -> SaddleSystem:
    """Displacement–pressure system of the incompressible limit, with C built for τ (the problem's τ by default)"""
    _require_incompressible(problem)
    assembler = assembler or Assembler(problem)
    tau = problem.stabilization.tau if tau is None else tau
    if assembler.has_gravity:
        logger.warning("Gravity terms are left out of the incompressible saddle system of '%s'", problem.name)
    return SaddleSystem(
        a_uu=assembler.stiffness_free,
        a_up=(-assembler.solid.biot * assembler.divergence_free.T).tocsr(),
        c=incompressible_stabilization_matrix(assembler.mesh, tau, assembler.volume),
    )


def scaled_schur_spectrum(
    problem: ProblemDefinition, tau: Optional[float] = None, assembler: Optional[Assembler] = None
) -> SchurReport:
    """
    Extremal eigenvalues of S′ = Q⁻¹S with Q the diagonal of cell volumes, from the symmetric Q^{-1/2} S Q^{-1/2}.
    Cells with a prescribed pressure are removed. The constant pressure mode is deflated only when it lies in the
    null space of S.
    """
    if not problem.single_phase:
        raise ContractError("Scaled Schur spectra are defined for single-phase problems")
    tau = problem.stabilization.tau if tau is None else tau
    saddle = assemble_incompressible_saddle(problem, tau=tau, assembler=assembler)
    s = schur_complement(saddle)
    volumes = problem.mesh.cell_volumes.copy()
    constrained = problem.pressure_source_cells()
    if constrained:
        keep = np.setdiff1d(np.arange(problem.mesh.n_cells), constrained)
        s = s[np.ix_(keep, keep)]
        volumes = volumes[keep]
    ones = np.ones(s.shape[0])
    deflate = bool(np.linalg.norm(s @ ones) <= ZERO_MODE_TOL * max(np.abs(s).max(), 1e-300) * np.linalg.norm(ones))
    spectrum = extremal_eigenvalues(s, volumes=volumes, deflate_constant=deflate)
    star = tau_star(problem.materials.solid.lame, problem.materials.solid.shear, problem.materials.solid.biot)
    report = SchurReport(
        e_min=spectrum.e_min,
        e_max=spectrum.e_max,
        mesh_n=int(problem.mesh.cell_counts[0]),
        c=tau / star if star > 0 else 0.0,
        tau=tau,
        deflated=deflate,
        eigenvalues=spectrum.eigenvalues,
    )
    logger.info(
        "Schur spectrum of '%s' (n=%d, tau=%s): e_min=%.4e e_max=%.4e kappa=%.4f",
        problem.name,
        report.mesh_n,
        repr(tau),
        report.e_min,
        report.e_max,
        report.condition,
    )
    return report


def first_step_krylov_iterations(problem: ProblemDefinition, options: Optional[SolverOptions] = None) -> int:
    """GMRES iterations of the first Newton iteration of the first time step"""
    assembler = Assembler(problem)
    result = NewtonSolver(assembler, options).solve(assembler.initial_state(), problem.schedule.initial_dt)
    return result.krylov_iterations[0] if result.krylov_iterations else 0


def stabilization_sweep(
    problem: ProblemDefinition,
    c_values: Sequence[float],
    krylov: bool = True,
    options: Optional[SolverOptions] = None,
) -> List[SweepRow]:
    """Scaled Schur spectrum and a representative Krylov count for τ = c·τ* over a list of ratios"""
    if any(c < 0 for c in c_values):
        raise ContractError(f"Stabilization ratios must be non-negative, got {list(c_values)}")
    solid = problem.materials.solid
    star = tau_star(solid.lame, solid.shear, solid.biot)
    assembler = Assembler(problem)
    rows = []
    for c in c_values:
        stabilization = StabilizationSpec.from_ratio(float(c), star)
        report = scaled_schur_spectrum(problem, tau=stabilization.tau, assembler=assembler)
        iterations = None
        if krylov:
            iterations = first_step_krylov_iterations(problem.with_stabilization(stabilization), options)
        rows.append(
            SweepRow(
                c=float(c),
                tau=stabilization.tau,
                e_min=report.e_min,
                e_max=report.e_max,
                condition=report.condition,
                krylov_iterations=iterations,
            )
        )
    return rows


def best_ratio(rows: Sequence[SweepRow]) -> float:
    """c with the smallest condition number; ties go to the first row"""
    return min(rows, key=lambda row: row.condition).c
