import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt, wait_none

from .assembly import Assembler, BlockJacobian, BlockResidual
from .errors import ConvergenceError, LinearSolverError, TimeMarchError
from .fluxes import macro_jump_rms
from .linearsolver import block_preconditioner, factorize, fixed_stress_terms, gmres_solve
from .problem import ProblemDefinition, SystemState, TimeSchedule

logger = logging.getLogger("porostab")

__all__ = [
    "MarchHistory",
    "NewtonResult",
    "NewtonSolver",
    "SolverOptions",
    "StepDiagnostics",
    "TimeSchedule",
    "newton_solve",
    "time_march",
]

LINEAR_SOLVERS = ("gmres", "direct")


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-6
    max_newton_iterations: int = 25
    krylov_tol: float = 1e-10
    restart: int = 200
    max_retries: int = 10
    linear_solver: str = "gmres"
    fixed_stress: bool = True


@dataclass
class NewtonResult:
    state: SystemState
    iterations: int
    krylov_iterations: List[int] = field(default_factory=list)
    residual_history: List[float] = field(default_factory=list)


@dataclass
class StepDiagnostics:
    """
    Record of one accepted time step

    Attributes:
        oscillation (float): RMS pressure jump over macroelement-interior faces outside source macroelements (Pa)
        macro_balance (float): Largest net stabilization mass exchanged by a single macroelement
    """

    step: int
    time: float
    dt: float
    newton_iterations: int
    krylov_iterations: int
    residual: float
    oscillation: float
    macro_balance: float
    retries: int = 0
    krylov_per_newton: List[int] = field(default_factory=list)


@dataclass
class MarchHistory:
    states: List[SystemState] = field(default_factory=list)
    diagnostics: List[StepDiagnostics] = field(default_factory=list)

    @property
    def final(self) -> SystemState:
        return self.states[-1]

    @property
    def times(self) -> List[float]:
        return [state.time for state in self.states]


class NewtonSolver:
    """
    Full-step Newton iteration for one backward-Euler step. Convergence is measured block by block: each residual
    block is divided by the size of the largest term that entered it at the first iteration,
    max(‖r_b⁰‖, max_c ‖J_bc δx_c⁰‖), and the step converges when the largest ratio is below newton_tol.
    """

    def __init__(self, assembler: Assembler, options: Optional[SolverOptions] = None):
        self.assembler = assembler
        self.options = options or SolverOptions()
        if self.options.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"Unknown linear solver '{self.options.linear_solver}', expected one of {LINEAR_SOLVERS}")
        self._uu_factor = None
        if not assembler.has_gravity:
            self._uu_factor = factorize(assembler.stiffness_free, "displacement block")

    def block_sizes(self) -> List[int]:
        a = self.assembler
        return [a.n_u, a.n_cells, a.n_cells] if a.two_phase else [a.n_u, a.n_cells]

    def _split(self, vector: np.ndarray) -> List[np.ndarray]:
        return np.split(vector, np.cumsum(self.block_sizes())[:-1])

    def linear_solve(self, jac: BlockJacobian, state: SystemState, rhs: np.ndarray):
        a = self.assembler
        matrix = jac.to_csr(a.two_phase)
        if self.options.linear_solver == "direct":
            return factorize(matrix, "Jacobian").solve(rhs), 0
        fixed_stress = fixed_stress_terms(a, state) if self.options.fixed_stress else None
        preconditioner = block_preconditioner(
            jac, two_phase=a.two_phase, fixed_stress=fixed_stress, uu_factor=self._uu_factor
        )
        result = gmres_solve(
            matrix, rhs, preconditioner, tol=self.options.krylov_tol, restart=self.options.restart
        )
        return result.solution, result.iterations

    def _scales(self, jac: BlockJacobian, r0: np.ndarray, dx0: np.ndarray) -> np.ndarray:
        matrix = jac.to_csr(self.assembler.two_phase)
        row_blocks = self._split(r0)
        scales = np.array([np.linalg.norm(r) for r in row_blocks])
        offsets = np.concatenate([[0], np.cumsum(self.block_sizes())])
        for c in range(len(offsets) - 1):
            masked = np.zeros_like(dx0)
            masked[offsets[c] : offsets[c + 1]] = dx0[offsets[c] : offsets[c + 1]]
            for b, contribution in enumerate(self._split(matrix @ masked)):
                scales[b] = max(scales[b], np.linalg.norm(contribution))
        if np.all(scales == 0.0):
            return np.ones_like(scales)
        scales[scales == 0.0] = scales.max()
        return scales

    def _scaled_error(self, residual: BlockResidual, scales: np.ndarray) -> float:
        norms = np.array(self.assembler.active_norms(residual))
        return float(np.max(norms / scales))

    def solve(self, prev: SystemState, dt: float, t: Optional[float] = None) -> NewtonResult:
        a = self.assembler
        t = prev.time + dt if t is None else t
        state = prev.copy()
        state.time = t
        state.step = prev.step + 1
        residual, jac = a.assemble(state, prev, dt, t)
        rhs = a.system_rhs(residual)
        if not np.any(rhs):
            return NewtonResult(state=state, iterations=0)

        scales: Optional[np.ndarray] = None
        history: List[float] = []
        krylov: List[int] = []
        for iteration in range(1, self.options.max_newton_iterations + 1):
            assert jac is not None
            try:
                dx, n_krylov = self.linear_solve(jac, state, -rhs)
            except LinearSolverError as e:
                raise ConvergenceError(
                    f"Linear solve failed in Newton iteration {iteration}: {e.error}", iteration, history
                ) from e
            krylov.append(n_krylov)
            if scales is None:
                scales = self._scales(jac, rhs, dx)
                history.append(self._scaled_error(residual, scales))
            state = a.apply_update(state, dx)
            residual, jac = a.assemble(state, prev, dt, t)
            rhs = a.system_rhs(residual)
            error = self._scaled_error(residual, scales)
            history.append(error)
            logger.debug("  Newton %d: scaled residual %.3e (%d Krylov iterations)", iteration, error, n_krylov)
            if not np.all(np.isfinite(rhs)):
                raise ConvergenceError(f"Residual became non-finite in Newton iteration {iteration}", iteration, history)
            if error <= self.options.newton_tol:
                return NewtonResult(state=state, iterations=iteration, krylov_iterations=krylov, residual_history=history)
        raise ConvergenceError(
            f"Newton did not converge in {self.options.max_newton_iterations} iterations "
            f"(scaled residual {history[-1]:.3e})",
            self.options.max_newton_iterations,
            history,
        )


def newton_solve(
    prev: SystemState,
    dt: float,
    problem: ProblemDefinition,
    options: Optional[SolverOptions] = None,
    assembler: Optional[Assembler] = None,
) -> NewtonResult:
    assembler = assembler or Assembler(problem)
    return NewtonSolver(assembler, options).solve(prev, dt)


class _StepControl:
    def __init__(self, dt: float):
        self.dt = dt
        self.retries = 0

    def halve(self, retry_state: RetryCallState):
        exception = retry_state.outcome.exception() if retry_state.outcome else None
        logger.warning(
            "Rejected step of %s s (%s); retrying with %s s",
            repr(self.dt),
            exception,
            repr(self.dt / 2.0),
        )
        self.dt /= 2.0
        self.retries += 1


SnapshotHook = Callable[[SystemState, float], None]
StepHook = Callable[[SystemState, StepDiagnostics], None]


def time_march(
    problem: ProblemDefinition,
    initial: Optional[SystemState] = None,
    schedule: Optional[TimeSchedule] = None,
    options: Optional[SolverOptions] = None,
    snapshot_times: Sequence[float] = (),
    on_snapshot: Optional[SnapshotHook] = None,
    on_step: Optional[StepHook] = None,
    assembler: Optional[Assembler] = None,
) -> MarchHistory:
    """
    Backward-Euler march from the initial state to the schedule's end time. The step grows by the schedule factor
    up to its cap and the last step is clipped to land on the end time. A step whose Newton iteration fails is
    retried with half the step; once the retries are exhausted TimeMarchError carries the history so far.
    """
    options = options or SolverOptions()
    schedule = schedule or problem.schedule
    assembler = assembler or Assembler(problem)
    newton = NewtonSolver(assembler, options)
    state = initial.copy() if initial is not None else assembler.initial_state()
    history = MarchHistory(states=[state])
    excluded = problem.source_cells()
    pending = sorted(float(t) for t in snapshot_times)
    end = schedule.end_time
    guard = 1e-12 * end

    dt = schedule.initial_dt
    while state.time < end - guard:
        control = _StepControl(min(dt, end - state.time))
        if end - (state.time + control.dt) <= guard:
            control.dt = end - state.time
        prev = state
        try:
            for attempt in Retrying(
                retry=retry_if_exception_type(ConvergenceError),
                stop=stop_after_attempt(options.max_retries + 1),
                wait=wait_none(),
                before_sleep=control.halve,
                reraise=True,
            ):
                with attempt:
                    result = newton.solve(prev, control.dt, prev.time + control.dt)
        except ConvergenceError as e:
            logger.error("Time step at t=%s failed after %d retries: %s", repr(prev.time), control.retries, e)
            raise TimeMarchError(
                f"Step {prev.step + 1} at t={prev.time!r} failed after {control.retries} retries: {e.error}", history
            ) from e

        state = result.state
        if end - state.time <= guard:
            state.time = end
        balance = np.abs(assembler.macro_stabilization_balance(state, prev)).max() if assembler.mesh.n_macro else 0.0
        diagnostics = StepDiagnostics(
            step=state.step,
            time=state.time,
            dt=control.dt,
            newton_iterations=result.iterations,
            krylov_iterations=sum(result.krylov_iterations),
            residual=result.residual_history[-1] if result.residual_history else 0.0,
            oscillation=macro_jump_rms(assembler.mesh, state.p, excluded),
            macro_balance=float(balance),
            retries=control.retries,
            krylov_per_newton=list(result.krylov_iterations),
        )
        logger.info(
            "Step %d: t=%s dt=%s newton=%d krylov=%d oscillation=%.4e",
            diagnostics.step,
            repr(diagnostics.time),
            repr(diagnostics.dt),
            diagnostics.newton_iterations,
            diagnostics.krylov_iterations,
            diagnostics.oscillation,
        )
        history.states.append(state)
        history.diagnostics.append(diagnostics)
        if on_step is not None:
            on_step(state, diagnostics)
        while pending and pending[0] <= state.time + guard:
            requested = pending.pop(0)
            if on_snapshot is not None:
                on_snapshot(state, requested)
        dt = min(control.dt * schedule.growth, schedule.max_dt)
    return history
