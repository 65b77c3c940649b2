import math

import numpy as np
import pytest

from porostablib.benchmarks import setup_barry_mercer
from porostablib.errors import ProblemError
from porostablib.mesh import build_structured_mesh
from porostablib.problem import PointSource, SineSignal, SystemState, WellSpec
from porostablib.sources import (
    bottom_hole_pressure,
    collect_sources,
    point_source,
    pressure_constraints,
    well_index,
    well_source,
)

from .problems import unit_materials


@pytest.fixture
def well_mesh():
    return build_structured_mesh((4.0, 4.0, 4.0), (4, 4, 4))


def test_point_source(square_mesh):
    source = PointSource((0.3, 0.6), SineSignal(2.0))
    rates = point_source(source, square_mesh, math.pi / 2.0, wetting_density=1000.0)
    assert rates[9] == pytest.approx(2000.0)
    assert np.count_nonzero(rates) == 1

    mass_source = PointSource((0.3, 0.6), SineSignal(2.0), volumetric=False)
    assert point_source(mass_source, square_mesh, math.pi / 2.0, wetting_density=1000.0)[9] == pytest.approx(2.0)


def test_well_index(well_mesh):
    well = WellSpec(cell=0, delta_bhp=1.0, ramp_time=1.0, radius=0.1)
    # r_eq = 0.2·Δx = 0.2
    assert well_index(well_mesh, 3.0, well) == pytest.approx(2.0 * math.pi * 3.0 / math.log(2.0))


def test_well_index_radius_too_large(well_mesh):
    well = WellSpec(cell=0, delta_bhp=1.0, ramp_time=1.0, radius=0.5, name="big")
    with pytest.raises(ProblemError) as exc_info:
        well_index(well_mesh, 1.0, well)
    assert "big" in str(exc_info.value)


def test_bottom_hole_pressure_ramp():
    well = WellSpec(cell=0, delta_bhp=4.0, ramp_time=2.0, radius=0.1)
    assert bottom_hole_pressure(well, 10.0, 0.0) == 10.0
    assert bottom_hole_pressure(well, 10.0, 1.0) == pytest.approx(12.0)
    assert bottom_hole_pressure(well, 10.0, 5.0) == pytest.approx(14.0)
    instant = WellSpec(cell=0, delta_bhp=4.0, ramp_time=0.0, radius=0.1)
    assert bottom_hole_pressure(instant, 10.0, 0.0) == 14.0


def _state(mesh, p, s):
    return SystemState(
        u=np.zeros(mesh.n_nodes * 3), s=np.full(mesh.n_cells, float(s)), p=np.full(mesh.n_cells, float(p))
    )


def test_injector_pushes_water_only(well_mesh):
    materials = unit_materials()
    well = WellSpec(cell=5, delta_bhp=1.0, ramp_time=0.0, radius=0.1)
    q_w, q_o, (dwp, dws, dop, dos) = well_source(
        well, _state(well_mesh, 1.0, 0.5), materials, well_mesh, np.ones(64), 1.0, 1.0
    )
    wi = 2.0 * math.pi / math.log(2.0)
    assert q_w == pytest.approx(wi * 1.0)
    assert q_o == 0.0
    assert dwp == pytest.approx(-wi)
    assert (dws, dop, dos) == (0.0, 0.0, 0.0)


def test_producer_derivatives(well_mesh):
    materials = unit_materials(compressible=True)
    well = WellSpec(cell=5, delta_bhp=-1.0, ramp_time=0.0, radius=0.1)
    perm = np.ones(64)
    p, s, eps = 1.3, 0.45, 1e-6

    def rates(p_value, s_value):
        q_w, q_o, _ = well_source(well, _state(well_mesh, p_value, s_value), materials, well_mesh, perm, 1.0, 0.0)
        return np.array([q_w, q_o])

    q_w, q_o, (dwp, dws, dop, dos) = well_source(well, _state(well_mesh, p, s), materials, well_mesh, perm, 1.0, 0.0)
    assert q_w < 0.0 and q_o < 0.0
    d_p = (rates(p + eps, s) - rates(p - eps, s)) / (2 * eps)
    d_s = (rates(p, s + eps) - rates(p, s - eps)) / (2 * eps)
    np.testing.assert_allclose([dwp, dop], d_p, rtol=1e-6)
    np.testing.assert_allclose([dws, dos], d_s, rtol=1e-6)


def test_collect_sources_barry_mercer():
    problem = setup_barry_mercer("undrained", 8)
    state = SystemState.initial(problem)
    beta = problem.parameters["beta"]
    t = math.pi / (2.0 * beta)
    terms = collect_sources(problem, state, t)
    cell = problem.mesh.locate_cell((0.25, 0.25))
    assert terms.q_w[cell] == pytest.approx(2.0 * beta * 1000.0)
    assert np.count_nonzero(terms.q_w) == 1
    assert not np.any(terms.q_o)


def test_pressure_constraints_modified():
    problem = setup_barry_mercer("modified", 16)
    cells, values = pressure_constraints(problem, math.pi / 2.0)
    np.testing.assert_array_equal(cells, [51])
    np.testing.assert_allclose(values, [1.0])
    assert problem.mesh.cell_index[51].tolist() == [3, 3]
