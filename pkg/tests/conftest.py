import numpy as np
import pytest

from amdm import Condition, MixtureModel, build_linear_schedule

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def schedule():
    return build_linear_schedule(1e-4, 0.02, 1000, n_substeps=50)


@pytest.fixture(scope="session")
def scene():
    """Two overlapping mixtures in n=256: model 1 = {A, B}, model 2 = {B, C}."""
    rng = np.random.default_rng(7)
    A, B, C = rng.standard_normal((3, 256))
    m1 = MixtureModel([A, B], [0.1, 0.1], [0.5, 0.5], {"y1": (0, 1)})
    m2 = MixtureModel([B, C], [0.1, 0.1], [0.5, 0.5], {"y2": (0, 1)})
    return [m1, m2], [Condition("y1"), Condition("y2")]


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
