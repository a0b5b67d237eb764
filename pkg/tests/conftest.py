import numpy as np
import pytest

from fibrehom.assembly import TensorMesh
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.mesh import (CoefficientProfile, build_cross_section_mesh, build_interval_mesh,
                           fibre_submesh)

PROFILE = CoefficientProfile((1.0, 4.0), (0.0, 0.5))


@pytest.fixture(scope="session")
def profile():
    return PROFILE


@pytest.fixture(scope="session")
def coarse_mesh():
    return build_cross_section_mesh(0.25, 0.125)


@pytest.fixture(scope="session")
def layered_mesh():
    return build_cross_section_mesh(0.25, 0.1, layers=2)


@pytest.fixture(scope="session")
def tiny_tensor(coarse_mesh):
    """112 x 8 dofs: small enough for the dense oracle."""
    return TensorMesh(coarse_mesh, build_interval_mesh(8, PROFILE))


@pytest.fixture(scope="session")
def small_tensor(layered_mesh):
    return TensorMesh(layered_mesh, build_interval_mesh(8, PROFILE))


@pytest.fixture(scope="session")
def coefficients(coarse_mesh):
    return HomogenizedCoefficients.compute(coarse_mesh, PROFILE)


@pytest.fixture(scope="session")
def submesh(coarse_mesh):
    return fibre_submesh(coarse_mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_theta(rng):
    return rng.uniform(-np.pi, np.pi, 3)


_CRITERIA: dict = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    _CRITERIA[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
