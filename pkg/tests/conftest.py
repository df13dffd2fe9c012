import numpy as np
import pytest

from polarsim.model import SignalSpec, SurfaceGrid, eval_g, integrate_surface


def bump_g(grid, a5=1.0):
    return eval_g(SignalSpec().evaluate(grid), a5)


def localized(grid, m, center=2.0, sharpness=3.0, cut=True):
    """Peaked initial field of mass ``m``, zero on half the circle when ``cut``."""
    th = grid.theta
    u = np.exp(sharpness * np.cos(th - center))
    if cut:
        u = np.where(np.cos(th - center) > 0, u, 0.0)
    return u * (m / integrate_surface(grid, u))


@pytest.fixture
def grid128():
    return SurfaceGrid(128)


@pytest.fixture
def grid64():
    return SurfaceGrid(64)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
