import numpy as np
import pytest

from qjumps.doubleslit import CavityGeometry, DoubleSlitModel, PixelArray
from qjumps.lindblad import LindbladGenerator

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
LOWER = np.array([[0, 0], [1, 0]], dtype=complex)       # |1><0|
KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)


@pytest.fixture
def damping():
    """Two-level amplitude damping: H = 0, T = |1><0|, alpha = 1."""
    return LindbladGenerator(np.zeros((2, 2)), 1.0, [LOWER])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cavity():
    """A 10x6 cavity with two one-row slits; cheap enough for dense checks."""
    geom = CavityGeometry((10, 6), 1.0, 4, ((1, 2), (4, 5)))
    pixels = PixelArray.evenly_spaced(geom, 6, 0.8, 1.0)
    return DoubleSlitModel(geom, pixels, 1.0)


@pytest.fixture(scope="session")
def small_packet(small_cavity):
    return small_cavity.wavepacket((2.0, 3.5), 1.0, (1.0, 0.0))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
