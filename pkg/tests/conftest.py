import pytest

from dsw.camera import PEDESTRIAN, CameraIntrinsics
from dsw.sizelut import build_lut

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def intr():
    return CameraIntrinsics(fx=721.0, fy=721.0, cx=609.0, cy=172.0, baseline=0.54)


@pytest.fixture(scope="session")
def lut(intr):
    return build_lut(intr, PEDESTRIAN)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
