import json
from pathlib import Path

import numpy as np
import pytest

from coniclpv import AffineLpv, ConicSector, InputClass, ParameterBounds
from coniclpv.conic import certify
from coniclpv.sdp import GridSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def intermittent_plant():
    """Two-state plant with output gain 1 + 3 rho; conic in its nominal cone only for small rho."""
    A = [[[0, 1], [-2, -3]], np.zeros((2, 2))]
    B = [[[0], [1]], np.zeros((2, 1))]
    C = [[[1, 0]], [[3, 0]]]
    D = [[[0]], [[0]]]
    return AffineLpv(A, B, C, D, [0.0], [1.0])


SECTOR = ConicSector(-0.246, 1.018)
REGIONS = [([0.0], [0.15], True), ([0.15], [1.0], False)]
INPUTS = InputClass(0.5, 1.5)


def lag():
    return AffineLpv.lti([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


def nyquist_disk(A, B, C, D, w):
    """Frequency response samples of a SISO state-space model."""
    n = A.shape[0]
    out = np.empty(w.size, dtype=complex)
    for k, wk in enumerate(w):
        out[k] = (C @ np.linalg.solve(1j * wk * np.eye(n) - A, B) + D)[0, 0]
    return out


@pytest.fixture(scope="session")
def plant():
    return intermittent_plant()


@pytest.fixture(scope="session")
def bounds(plant):
    return ParameterBounds.for_system(plant)


@pytest.fixture(scope="session")
def cert(plant, bounds):
    return certify(plant, SECTOR, REGIONS, bounds, GridSpec(5, 3))


@pytest.fixture(scope="session")
def intermittent_config():
    return json.loads((CONFIGS / "intermittent.json").read_text())


ACCEPTANCE_LINES = []


def pytest_collection_modifyitems(items):
    # the residual audit summarizes every solve in the session, so it runs last
    last = [it for it in items if it.get_closest_marker("audit")]
    items[:] = [it for it in items if not it.get_closest_marker("audit")] + last


def pytest_configure(config):
    config.addinivalue_line("markers", "audit: session-wide checks that must run after everything else")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
