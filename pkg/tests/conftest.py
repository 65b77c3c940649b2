import numpy as np
import pytest

from porostablib.mesh import build_structured_mesh
from porostablib.problem import (
    PressureBC,
    ProblemDefinition,
    StabilizationSpec,
    TimeSchedule,
)

from .problems import ROLLERS_2D, unit_materials


@pytest.fixture
def square_mesh():
    return build_structured_mesh((1.0, 1.0), (4, 4))


@pytest.fixture
def cube_mesh():
    return build_structured_mesh((1.0, 1.0, 1.0), (2, 2, 2))


@pytest.fixture
def two_phase_problem():
    """Compressible two-phase 4×4 problem with gravity, one Dirichlet side and stabilization switched on"""
    mesh = build_structured_mesh((1.0, 1.0), (4, 4))
    return ProblemDefinition(
        name="two-phase",
        mesh=mesh,
        materials=unit_materials(compressible=True),
        permeability=np.linspace(0.5, 2.0, mesh.n_cells),
        porosity=0.2,
        schedule=TimeSchedule.uniform(0.1, 1.0),
        stabilization=StabilizationSpec(tau=0.05),
        gravity=(0.0, -1.0),
        initial_pressure=1.0,
        initial_saturation=0.5,
        single_phase=False,
        displacement_bcs=ROLLERS_2D,
        pressure_bcs=(PressureBC("xmin", 1.0, saturation=0.8),),
    )


@pytest.fixture
def locked_problem():
    """Incompressible, impermeable two-phase problem without sources: nothing can move"""
    mesh = build_structured_mesh((1.0, 1.0), (4, 4))
    return ProblemDefinition(
        name="locked",
        mesh=mesh,
        materials=unit_materials(),
        permeability=0.0,
        porosity=0.2,
        schedule=TimeSchedule.uniform(0.1, 1.0),
        stabilization=StabilizationSpec(tau=0.05),
        initial_pressure=1.0,
        initial_saturation=0.4,
        single_phase=False,
        displacement_bcs=ROLLERS_2D,
    )


@pytest.fixture
def compressible_single_phase_problem():
    mesh = build_structured_mesh((1.0, 1.0), (4, 4))
    return ProblemDefinition(
        name="compressible",
        mesh=mesh,
        materials=unit_materials(compressible=True),
        permeability=1.0,
        porosity=0.2,
        schedule=TimeSchedule.uniform(0.1, 0.1),
        displacement_bcs=ROLLERS_2D,
        pressure_bcs=(PressureBC("ymax", 0.0),),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
