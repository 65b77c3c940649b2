import logging
from abc import ABC
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .analysis import (
    best_ratio,
    patch_eigenvalues_analytic,
    patch_test_numeric,
    scaled_schur_spectrum,
    stabilization_sweep,
    tau_star,
)
from .benchmarks import BARRY_MERCER_VARIANTS, pressure_profile
from .config import RunConfig, build_problem
from .errors import PorostabError, TimeMarchError
from .output import (
    DIAGNOSTICS_COLUMNS,
    PATCH_COLUMNS,
    PROFILE_COLUMNS,
    SPECTRUM_COLUMNS,
    SWEEP_COLUMNS,
    RunManifest,
    diagnostics_rows,
    file_sha256,
    snapshot_name,
    write_csv,
    write_manifest,
    write_vtk_snapshot,
)
from .problem import ProblemDefinition, SystemState
from .solver import MarchHistory, time_march

logger = logging.getLogger("porostab")


class Strategy(ABC):
    """
    Abstract CLI command. setup builds the problem from the configuration, run computes and writes the artifacts.
    Every run ends with a MANIFEST, also when it fails.
    """

    command = ""

    def __init__(self, config: RunConfig, output_dir: Path):
        self.config = config
        self.output_dir = output_dir
        self.problem: Optional[ProblemDefinition] = None
        self.manifest = RunManifest(command=self.command, config_sha256=config.digest(), version=__version__)

    def setup(self):
        self.problem = build_problem(self.config)
        solid = self.problem.materials.solid
        self.manifest.parameters = {
            "config": self.config.model_dump(),
            "problem": self.problem.describe(),
            "tau_star": tau_star(solid.lame, solid.shear, solid.biot),
        }
        logger.info("Parameters of %s: %s", self.problem.name, self.manifest.parameters["problem"])

    def run(self):
        raise NotImplementedError

    def record(self, path: Path) -> Path:
        name = str(path.relative_to(self.output_dir))
        self.manifest.artifacts.append(name)
        self.manifest.checksums[name] = file_sha256(path)
        return path

    def execute(self):
        """setup and run, writing the MANIFEST whatever happens"""
        try:
            self.setup()
            self.run()
        except PorostabError as e:
            self.manifest.status = "failed"
            self.manifest.failure = str(e)
            raise
        finally:
            write_manifest(self.output_dir, self.manifest)


class SimulateStrategy(Strategy):
    """Time march with per-step diagnostics, snapshots and, for Barry–Mercer, the pressure profile"""

    command = "simulate"

    def _snapshot(self, state: SystemState, requested: float):
        assert self.problem is not None
        path = write_vtk_snapshot(self.output_dir / snapshot_name(requested), self.problem.mesh, state)
        self.record(path)

    def _write_history(self, history: MarchHistory):
        assert self.problem is not None
        path = write_csv(
            self.output_dir / "diagnostics.csv", "diagnostics", DIAGNOSTICS_COLUMNS, diagnostics_rows(history.diagnostics)
        )
        self.record(path)
        if self.config.benchmark in BARRY_MERCER_VARIANTS:
            y, p = pressure_profile(self.problem.mesh, history.final.p, self.config.output.profile_x)
            self.record(write_csv(self.output_dir / "profile.csv", "profile", PROFILE_COLUMNS, zip(y, p)))

    def run(self):
        assert self.problem is not None
        try:
            history = time_march(
                self.problem,
                options=self.config.solver.to_options(),
                snapshot_times=self.config.output.snapshot_times,
                on_snapshot=self._snapshot,
            )
        except TimeMarchError as e:
            if isinstance(e.history, MarchHistory):
                self._write_history(e.history)
                self.manifest.failure_step = e.history.final.step
            raise
        self._write_history(history)
        final = history.diagnostics[-1] if history.diagnostics else None
        if final is not None:
            self.manifest.parameters["final"] = {
                "time": final.time,
                "steps": final.step,
                "oscillation": final.oscillation,
                "max_macro_balance": max(d.macro_balance for d in history.diagnostics),
            }


class AnalyzeStrategy(Strategy):
    """Macroelement patch test and scaled Schur spectrum of the configured problem"""

    command = "analyze"

    def run(self):
        assert self.problem is not None
        analysis = self.config.analysis
        solid = self.problem.materials.solid
        tau = self.problem.stabilization.tau
        summary: Dict[str, Any] = {}
        if analysis.patch:
            analytic = patch_eigenvalues_analytic(analysis.patch_h, solid.lame, solid.shear, tau, solid.biot)
            numeric = patch_test_numeric(analysis.patch_h, solid.lame, solid.shear, tau, solid.biot)
            rows = zip(range(1, len(analytic.eigenvalues) + 1), analytic.eigenvalues, numeric.eigenvalues)
            self.record(write_csv(self.output_dir / "patch.csv", "patch", PATCH_COLUMNS, rows))
            summary["patch_condition"] = analytic.condition
        if analysis.spectrum:
            if not self.problem.single_phase:
                logger.warning("Skipping the Schur spectrum: '%s' is a two-phase problem", self.problem.name)
            else:
                report = scaled_schur_spectrum(self.problem, tau)
                rows_s: List[tuple] = list(zip(range(1, len(report.eigenvalues) + 1), report.eigenvalues))
                self.record(write_csv(self.output_dir / "spectrum.csv", "spectrum", SPECTRUM_COLUMNS, rows_s))
                summary.update(
                    {
                        "e_min": report.e_min,
                        "e_max": report.e_max,
                        "condition": report.condition,
                        "deflated": report.deflated,
                        "mesh_n": report.mesh_n,
                        "c": report.c,
                    }
                )
        self.manifest.parameters["analysis"] = summary


class SweepStrategy(Strategy):
    """Condition number and Krylov count over a list of stabilization ratios"""

    command = "sweep"

    def run(self):
        assert self.problem is not None
        analysis = self.config.analysis
        rows = stabilization_sweep(
            self.problem, analysis.sweep_c, krylov=analysis.krylov, options=self.config.solver.to_options()
        )
        table = [[r.c, r.tau, r.e_min, r.e_max, r.condition, r.krylov_iterations] for r in rows]
        self.record(write_csv(self.output_dir / "sweep.csv", "sweep", SWEEP_COLUMNS, table))
        self.manifest.parameters["best_c"] = best_ratio(rows) if rows else None


STRATEGIES = {cls.command: cls for cls in (SimulateStrategy, AnalyzeStrategy, SweepStrategy)}
