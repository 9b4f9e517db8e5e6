import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wdem.lattice import ApertureConfig, build_lattice  # noqa: E402

F_C = 30e9
LAMBDA = 299_792_458.0 / F_C


@pytest.fixture(scope="session")
def ap05():
    """0.05 m square aperture at half-wavelength spacing (bound exactly 5)."""
    return ApertureConfig(l_x=0.05, l_y=0.05, f_c=F_C, delta=0.005, n_x=10, n_y=10)


@pytest.fixture(scope="session")
def ap10():
    return ApertureConfig(l_x=0.1, l_y=0.1, f_c=F_C, delta=0.005, n_x=20, n_y=20)


@pytest.fixture(scope="session")
def ap10_odd():
    """21 x 21 elements over 0.1 m; the harness default."""
    return ApertureConfig(l_x=0.1, l_y=0.1, f_c=F_C, delta=0.1 / 21, n_x=21, n_y=21)


@pytest.fixture(scope="session")
def lat05(ap05):
    return build_lattice(ap05)


@pytest.fixture(scope="session")
def lat10(ap10):
    return build_lattice(ap10)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
