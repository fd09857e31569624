import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from embedtag import thermsim
from embedtag.geometry import EmbedSpec
from embedtag.harness import embedded_grid
from embedtag.payload import random_matrix

settings.register_profile(
    "embedtag", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("embedtag")

CONSTANTS = thermsim.DEFAULT_CONSTANTS

# one "[criterion N] PASS|FAIL ..." line per acceptance check, printed at the end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def thermal_grid(matrix, **spec_fields):
    spec = EmbedSpec(**spec_fields)
    return embedded_grid(spec, matrix, CONSTANTS.sim_pitch_mm, CONSTANTS.join_reach_mm), spec


def thermal_recording(matrix, scenario=None, **spec_fields):
    grid, spec = thermal_grid(matrix, **spec_fields)
    scenario = scenario or thermsim.ThermalScenario()
    return thermsim.simulate_reading(grid, spec, scenario, CONSTANTS)


@pytest.fixture(scope="session")
def payload():
    """The standard 4x4 payload: eight ones, anchor set."""
    return random_matrix(4, 4, 8, 0)


@pytest.fixture(scope="session")
def hand_recording(payload):
    """Full 60 s hand-condition recording of the default design."""
    return thermal_recording(payload, thermsim.ThermalScenario(seed=0))


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def rng(seed=0):
    return np.random.default_rng(seed)
