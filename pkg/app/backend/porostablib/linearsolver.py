import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import scipy.linalg
from scipy.sparse import bmat, csc_matrix, diags, issparse, spmatrix
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .assembly import Assembler, BlockJacobian
from .errors import LinearSolverError
from .problem import SystemState

logger = logging.getLogger("porostab")

Operator = Union[spmatrix, np.ndarray, LinearOperator]


def check_symmetric(matrix, tol: float = 1e-12) -> bool:
    """‖A − Aᵀ‖_max ≤ tol·‖A‖_max"""
    if issparse(matrix):
        largest = abs(matrix).max() if matrix.nnz else 0.0
        diff = matrix - matrix.T
        skew = abs(diff).max() if diff.nnz else 0.0
    else:
        matrix = np.asarray(matrix)
        largest = np.max(np.abs(matrix)) if matrix.size else 0.0
        skew = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    return bool(skew <= tol * largest)


def factorize(matrix, name: str = "matrix"):
    """Sparse LU factorization; a singular matrix is reported as LinearSolverError"""
    try:
        return splu(csc_matrix(matrix))
    except RuntimeError as e:
        raise LinearSolverError(f"Factorization of the {name} failed: {e}") from e


def direct_solve(matrix, rhs: np.ndarray) -> np.ndarray:
    """Direct solve with sparse or dense LU; singular matrices raise LinearSolverError with the offending pivot"""
    rhs = np.asarray(rhs, dtype=float)
    if issparse(matrix):
        x = factorize(matrix).solve(rhs)
    else:
        dense = np.asarray(matrix, dtype=float)
        lu, piv = scipy.linalg.lu_factor(dense, check_finite=True)
        pivots = np.abs(np.diag(lu))
        smallest = int(np.argmin(pivots)) if pivots.size else 0
        if pivots.size and pivots[smallest] <= np.finfo(float).eps * max(pivots.max(), 1.0) * len(pivots):
            raise LinearSolverError(
                f"Matrix is singular to working precision: pivot {smallest} is {pivots[smallest]!r}"
            )
        x = scipy.linalg.lu_solve((lu, piv), rhs)
    residual = np.linalg.norm(matrix @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and residual > 1e-12 * scale:
        logger.warning("Direct solve residual %.3e exceeds 1e-12 relative", residual / scale)
    return x


def fixed_stress_terms(assembler: Assembler, state: SystemState) -> tuple:
    """
    Diagonal fixed-stress estimates of the pressure coupling for the wetting and non-wetting rows:
    −ρ_w s b²V/K_dr and −ρ_o(1 − s) b²V/K_dr with K_dr = λ + 2G/d. Cells with a prescribed pressure get no term.
    """
    solid = assembler.solid
    beta = solid.biot**2 * assembler.volume / solid.constrained_modulus(assembler.dim)
    rho_w = assembler.materials.wetting.reference_density
    rho_o = assembler.materials.nonwetting.reference_density
    a_w = -rho_w * state.s * beta
    a_o = -rho_o * (1.0 - state.s) * beta
    constrained = assembler.problem.pressure_source_cells()
    if constrained:
        a_w[constrained] = 0.0
    return a_w, a_o


class BlockTriangularPreconditioner:
    """
    Upper block-triangular preconditioner [[A_uu, A_uf], [0, F]] with direct solves on A_uu and on the flow block F.
    When fixed-stress terms are given they are added to the pressure columns of F. Without them (SolverOptions with
    fixed_stress=False) F is the exact flow block of the Jacobian and the only approximation is dropping the
    block below the diagonal, the displacement dependence of the mass balances.
    """

    def __init__(
        self,
        jac: BlockJacobian,
        two_phase: bool = True,
        fixed_stress: Optional[tuple] = None,
        uu_factor=None,
    ):
        self.two_phase = two_phase
        self.n_u = jac.uu.shape[0]
        flow = jac.flow_block(two_phase)
        if fixed_stress is not None:
            a_w, a_o = fixed_stress
            n = jac.ss.shape[0]
            if two_phase:
                zero = diags(np.zeros(n))
                flow = flow + bmat([[zero, diags(a_w)], [zero, diags(a_o)]], format="csr")
            else:
                flow = flow + diags(a_w)
        self.coupling = jac.coupling_block(two_phase)
        self.uu_factor = uu_factor if uu_factor is not None else factorize(jac.uu, "displacement block")
        self.flow_factor = factorize(flow, "flow block")
        n_flow = flow.shape[0]
        self.shape = (self.n_u + n_flow, self.n_u + n_flow)

    def solve(self, r: np.ndarray) -> np.ndarray:
        r_u, r_f = r[: self.n_u], r[self.n_u :]
        z_f = self.flow_factor.solve(r_f)
        z_u = self.uu_factor.solve(r_u - self.coupling @ z_f)
        return np.concatenate([z_u, z_f])

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.solve, dtype=float)


def block_preconditioner(
    jac: BlockJacobian, two_phase: bool = True, fixed_stress: Optional[tuple] = None, uu_factor=None
) -> BlockTriangularPreconditioner:
    return BlockTriangularPreconditioner(jac, two_phase=two_phase, fixed_stress=fixed_stress, uu_factor=uu_factor)


@dataclass
class KrylovResult:
    solution: np.ndarray
    iterations: int
    residual_history: List[float] = field(default_factory=list)


def _as_callable(preconditioner) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    if preconditioner is None:
        return None
    if hasattr(preconditioner, "solve"):
        return preconditioner.solve
    if isinstance(preconditioner, LinearOperator):
        return preconditioner.matvec
    if issparse(preconditioner) or isinstance(preconditioner, np.ndarray):
        return lambda v: preconditioner @ v
    return preconditioner


def gmres_solve(
    matrix: Operator,
    rhs: np.ndarray,
    preconditioner=None,
    tol: float = 1e-10,
    restart: int = 200,
    max_cycles: int = 5,
) -> KrylovResult:
    """
    Right-preconditioned restarted GMRES from a zero initial guess, so the monitored residual is the true relative
    residual ‖b − Ax‖/‖b‖. The preconditioner is anything with a solve method, an operator or a callable applying M⁻¹.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if not np.any(rhs):
        return KrylovResult(solution=np.zeros(n), iterations=0)

    apply_m = _as_callable(preconditioner)
    if apply_m is None:
        operator = matrix if isinstance(matrix, LinearOperator) else LinearOperator((n, n), matvec=lambda v: matrix @ v)
    else:
        operator = LinearOperator((n, n), matvec=lambda v: matrix @ apply_m(v), dtype=float)

    history: List[float] = []
    y, info = gmres(
        operator,
        rhs,
        x0=np.zeros(n),
        rtol=tol,
        atol=0.0,
        restart=min(restart, n),
        maxiter=max_cycles,
        callback=history.append,
        callback_type="pr_norm",
    )
    if info < 0:
        raise LinearSolverError(f"GMRES received illegal input (info={info})", history)
    if info > 0:
        final = history[-1] if history else math.nan
        raise LinearSolverError(
            f"GMRES did not reach a relative residual of {tol:g} in {len(history)} iterations (last {final:.3e})",
            history,
        )
    solution = apply_m(y) if apply_m is not None else y
    return KrylovResult(solution=solution, iterations=len(history), residual_history=history)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    e_min: float
    e_max: float

    @property
    def condition(self) -> float:
        return self.e_max / self.e_min if self.e_min > 0 else math.inf


def extremal_eigenvalues(
    matrix,
    volumes: Optional[np.ndarray] = None,
    deflate_constant: bool = False,
    symmetry_tol: float = 1e-10,
) -> Spectrum:
    """
    Spectrum of Q^{-1/2} A Q^{-1/2} for a symmetric A and a diagonal Q given by volumes (identity by default). With
    deflate_constant the constant vector is projected out and its zero eigenvalue dropped.
    """
    dense = matrix.toarray() if issparse(matrix) else np.array(matrix, dtype=float)
    if volumes is not None:
        scale = 1.0 / np.sqrt(np.asarray(volumes, dtype=float))
        dense = scale[:, None] * dense * scale[None, :]
    if not check_symmetric(dense, symmetry_tol):
        raise LinearSolverError("Eigenvalue extraction requires a symmetric operator after volume scaling")
    dense = 0.5 * (dense + dense.T)
    n = dense.shape[0]
    if deflate_constant:
        weights = np.ones(n) if volumes is None else np.sqrt(np.asarray(volumes, dtype=float))
        v = weights / np.linalg.norm(weights)
        projector = np.eye(n) - np.outer(v, v)
        dense = projector @ dense @ projector
    try:
        eigenvalues = scipy.linalg.eigh(dense, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise LinearSolverError(f"Symmetric eigenvalue solver did not converge: {e}") from e
    if deflate_constant:
        eigenvalues = np.delete(eigenvalues, int(np.argmin(np.abs(eigenvalues))))
    return Spectrum(eigenvalues=eigenvalues, e_min=float(eigenvalues[0]), e_max=float(eigenvalues[-1]))
