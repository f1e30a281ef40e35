import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gfmstab.plant import NAMEPLATE_5MW, PlantParams, to_per_unit

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Record one summary line per acceptance criterion."""
    def log(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def nameplate() -> PlantParams:
    """Nameplate plant, grid inductance 60 uH (0.198 p.u.), X/R = 8."""
    return to_per_unit(**NAMEPLATE_5MW)


@pytest.fixture(scope="session")
def weak_grid(nameplate) -> PlantParams:
    return nameplate.replace(L_g=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


TWO_PI = 2 * math.pi
