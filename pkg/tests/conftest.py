import numpy as np
import pytest

from fempidon.fem_darcy import solve_darcy
from fempidon.mesh import SizeFieldParams, generate_mesh
from fempidon.physics import GaussianComponent, PhysParams, SourceMixture


@pytest.fixture(scope="session")
def phys():
    return PhysParams()


@pytest.fixture(scope="session")
def single_source(phys):
    return SourceMixture.build([GaussianComponent(5.0, 5.0, 0.45)], phys)


@pytest.fixture(scope="session")
def single_mesh(single_source, phys):
    return generate_mesh(single_source, SizeFieldParams(), phys)


@pytest.fixture(scope="session")
def single_darcy(single_mesh, single_source, phys):
    return solve_darcy(single_mesh, phys, single_source)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
