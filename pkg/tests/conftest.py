from __future__ import annotations

import numpy as np
import pytest

from burnscope.acquisition import generate_phantom, reference_phantom_spec
from burnscope.core import HyperCube, WavelengthGrid


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid() -> WavelengthGrid:
    return WavelengthGrid.arange(400.0, 2100.0, 10.0)


@pytest.fixture
def random_cube(rng, small_grid) -> HyperCube:
    data = rng.uniform(0.05, 0.95, size=(6, 5, len(small_grid)))
    return HyperCube(data, small_grid, "reflectance")


@pytest.fixture(scope="session")
def reference_phantom():
    """Small reference phantom truth cube and labels (seed 0)."""
    return generate_phantom(reference_phantom_spec(24, 24, seed=0))


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        prev = _CRITERIA.get(n, (title, "PASS"))[1]
        status = "PASS" if rep.passed and prev == "PASS" else "FAIL"
        _CRITERIA[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}")
