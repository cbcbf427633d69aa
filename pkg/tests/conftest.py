import numpy as np
import pytest

from aefusion.spatial_domain import ProductStack, SpatialGrid

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def _report(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title} ({detail})")
        print(_ACCEPTANCE_LINES[-1])
        assert ok, f"criterion {number} failed: {detail}"

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_stack(values, names=None):
    values = np.asarray(values, dtype=float)
    n = values.shape[1]
    grid = SpatialGrid(np.column_stack([np.arange(n, dtype=float), np.zeros(n)]))
    names = names or [f"P{d + 1}" for d in range(values.shape[0])]
    return ProductStack(grid, tuple(names), values)
