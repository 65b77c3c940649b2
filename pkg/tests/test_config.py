from pathlib import Path

import pytest

from porostablib.analysis import tau_star
from porostablib.config import (
    DEFAULT_OUTPUT_DIR,
    OUTPUT_DIR_ENV,
    apply_overrides,
    build_problem,
    config_from_benchmark,
    parse_config,
    resolve_output_dir,
)
from porostablib.errors import ConfigError
from porostablib.solver import SolverOptions

VALID_CONFIG = """\
benchmark: modified
mesh:
  n: 8
stabilization:
  mode: ratio
  c: 2.0
solver:
  linear_solver: direct
  newton_tol: 1.0e-8
analysis:
  sweep_c: [0.0, 1.0]
  krylov: false
output:
  snapshot_times: [0.005, 0.01]
"""


def write_config(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parse_config(tmp_path):
    config = parse_config(write_config(tmp_path, VALID_CONFIG))
    assert config.benchmark == "modified"
    assert config.mesh.n == 8
    assert config.stabilization.mode == "ratio"
    assert config.analysis.sweep_c == [0.0, 1.0]
    assert config.analysis.patch_h == [1.0, 1.0, 1.0]
    assert config.output.snapshot_times == [0.005, 0.01]
    assert config.solver.to_options() == SolverOptions(linear_solver="direct", newton_tol=1e-8)


def test_unknown_key(tmp_path):
    path = write_config(tmp_path, "benchmark: modified\nmeshh:\n  n: 8\n")
    with pytest.raises(ConfigError) as exc_info:
        parse_config(path)
    assert "meshh" in str(exc_info.value)
    assert exc_info.value.path == path


def test_invalid_yaml_reports_position(tmp_path):
    path = write_config(tmp_path, "benchmark: modified\nmesh: [8, 16\n")
    with pytest.raises(ConfigError) as exc_info:
        parse_config(path)
    error = exc_info.value
    assert "Invalid YAML" in str(error)
    assert error.line is not None and error.line >= 2
    assert error.column is not None
    assert f"line {error.line}" in str(error)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(str(tmp_path / "absent.yaml"))
    assert "does not exist" in str(exc_info.value)


def test_empty_file_needs_benchmark(tmp_path):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(write_config(tmp_path, ""))
    assert "benchmark" in str(exc_info.value)


def test_top_level_must_be_mapping(tmp_path):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(write_config(tmp_path, "- modified\n"))
    assert "mapping" in str(exc_info.value)


@pytest.mark.parametrize(
    "text,message",
    [
        ("benchmark: modified\nstabilization:\n  mode: fixed\n", "needs tau"),
        ("benchmark: modified\nstabilization:\n  mode: ratio\n", "needs c"),
        ("benchmark: modified\nmesh:\n  n: 7\n", "even"),
        ("benchmark: terzaghi\n", "benchmark"),
        ("benchmark: modified\nanalysis:\n  sweep_c: [1.0, -1.0]\n", "non-negative"),
        ("benchmark: modified\nanalysis:\n  patch_h: [1.0]\n", "patch_h"),
        ("benchmark: modified\nsolver:\n  linear_solver: cg\n", "linear_solver"),
    ],
)
def test_invalid_values(tmp_path, text, message):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(write_config(tmp_path, text))
    assert message in str(exc_info.value)


def test_overrides_win(tmp_path):
    config = parse_config(write_config(tmp_path, VALID_CONFIG))
    updated = apply_overrides(config, c=0.5, mesh_n=16, out=str(tmp_path / "out"))
    assert updated.stabilization.mode == "ratio"
    assert updated.stabilization.c == 0.5
    assert updated.mesh.n == 16
    assert updated.output.directory == str(tmp_path / "out")
    assert updated.solver.linear_solver == "direct"
    assert apply_overrides(config) == config


def test_overrides_are_validated():
    with pytest.raises(ConfigError) as exc_info:
        apply_overrides(config_from_benchmark("modified"), mesh_n=5)
    assert "even" in str(exc_info.value)


def test_output_dir_resolution(monkeypatch, tmp_path):
    config = config_from_benchmark("modified")
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert resolve_output_dir(config) == Path(DEFAULT_OUTPUT_DIR)

    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "from-env"))
    assert resolve_output_dir(config) == tmp_path / "from-env"

    explicit = apply_overrides(config, out=str(tmp_path / "explicit"))
    assert resolve_output_dir(explicit) == tmp_path / "explicit"


def test_build_problem_ratio_mode(tmp_path):
    problem = build_problem(parse_config(write_config(tmp_path, VALID_CONFIG)))
    assert problem.mesh.cell_counts == (8, 8)
    assert problem.stabilization.c == 2.0
    assert problem.stabilization.tau == pytest.approx(2.0 * tau_star(1.0, 1.0))


def test_build_problem_fixed_and_off():
    fixed = apply_overrides(config_from_benchmark("modified"), mesh_n=8)
    fixed = fixed.model_copy(update={"stabilization": fixed.stabilization.model_copy(update={"mode": "fixed", "tau": 0.3})})
    assert build_problem(fixed).stabilization.tau == 0.3
    plain = build_problem(config_from_benchmark("undrained"))
    assert plain.stabilization.tau == 0.0
    assert plain.mesh.cell_counts == (16, 16)


def test_config_from_unknown_benchmark():
    with pytest.raises(ConfigError) as exc_info:
        config_from_benchmark("terzaghi")
    assert "terzaghi" in str(exc_info.value)


def test_digest(tmp_path):
    first = parse_config(write_config(tmp_path, VALID_CONFIG, "a.yaml"))
    second = parse_config(write_config(tmp_path, VALID_CONFIG, "b.yaml"))
    assert first.digest() == second.digest()
    assert len(first.digest()) == 64
    assert apply_overrides(first, c=1.0).digest() != first.digest()
