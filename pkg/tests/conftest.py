import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffterrain.core import RigidState, WaypointControl
from diffterrain.terrain import GridSpec, HeightMap

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# acceptance verdict lines, replayed in the terminal summary so they survive
# output capturing
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def flat_map():
    return HeightMap.flat(GridSpec(21, 21, 0.1, (-1.0, -1.0)), 0.0, 100.0, 10.0)


def hold(state: RigidState) -> WaypointControl:
    return WaypointControl.hold(state)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
