import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .mesh import StructuredMesh
from .problem import SystemState
from .solver import StepDiagnostics

logger = logging.getLogger("porostab")

SCHEMA_VERSION = 1
# schemas whose columns changed since their first release
SCHEMA_VERSIONS = {"diagnostics": 2}
MANIFEST_NAME = "MANIFEST"

# column name -> StepDiagnostics attribute
DIAGNOSTICS_FIELDS = {
    "step": "step",
    "time": "time",
    "dt": "dt",
    "newton_iter": "newton_iterations",
    "krylov_iters": "krylov_iterations",
    "rel_residual": "residual",
    "oscillation": "oscillation",
    "macro_balance": "macro_balance",
    "retries": "retries",
}
DIAGNOSTICS_COLUMNS = tuple(DIAGNOSTICS_FIELDS)
SPECTRUM_COLUMNS = ("index", "eigenvalue")
PATCH_COLUMNS = ("index", "analytic", "numeric")
SWEEP_COLUMNS = ("c", "tau", "e_min", "e_max", "condition", "krylov_iterations")
PROFILE_COLUMNS = ("y", "pressure")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, schema: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a schema line, a header and repr-formatted floats"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema: {schema} v{SCHEMA_VERSIONS.get(schema, SCHEMA_VERSION)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"Row {row} does not match the {schema} columns {columns}")
            writer.writerow([_cell(value) for value in row])
    logger.info("Wrote %s", path)
    return path


def diagnostics_rows(diagnostics: Sequence[StepDiagnostics]) -> List[List[Any]]:
    return [[getattr(d, attribute) for attribute in DIAGNOSTICS_FIELDS.values()] for d in diagnostics]


def snapshot_name(time: float) -> str:
    return f"snapshot_{float(time)!r}.vtk"


def write_vtk_snapshot(path: Path, mesh: StructuredMesh, state: SystemState, title: str = "porostab") -> Path:
    """Legacy ASCII STRUCTURED_POINTS file: displacement on points, pressure and saturation on cells"""
    dims = list(mesh.node_counts) + [1] * (3 - mesh.dim)
    origin = list(mesh.origin) + [0.0] * (3 - mesh.dim)
    spacing = list(mesh.h) + [1.0] * (3 - mesh.dim)
    displacement = np.zeros((mesh.n_nodes, 3))
    displacement[:, : mesh.dim] = state.displacement(mesh.dim)

    lines = [
        "# vtk DataFile Version 3.0",
        f"{title} t={state.time!r}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(d) for d in dims),
        "ORIGIN " + " ".join(repr(float(o)) for o in origin),
        "SPACING " + " ".join(repr(float(s)) for s in spacing),
        f"POINT_DATA {mesh.n_nodes}",
        "VECTORS displacement double",
    ]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in displacement)
    lines.append(f"CELL_DATA {mesh.n_cells}")
    for name, values in (("pressure", state.p), ("saturation", state.s)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(repr(float(v)) for v in values)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote snapshot %s", path)
    return path


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """
    Record of one CLI run

    Attributes:
        config_sha256 (str): Hash of the configuration actually used
        status (str): "ok" or "failed"
        failure (Optional[str]): Error message of a failed run
        failure_step (Optional[int]): Last accepted step before a time-march failure
        artifacts (List[str]): Files written, relative to the output directory
        checksums (Dict[str, str]): SHA-256 of every artifact
    """

    command: str
    config_sha256: str
    version: str
    status: str = "ok"
    failure: Optional[str] = None
    failure_step: Optional[int] = None
    parameters: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    checksums: Dict[str, str] = field(default_factory=dict)


def write_manifest(directory: Path, manifest: RunManifest) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(_plain(asdict(manifest)), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote %s (status %s)", path, manifest.status)
    return path
