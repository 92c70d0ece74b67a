import numpy as np
import pytest

from depthdet.synth import generate_scene, suite_specs

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def noiseless_suite():
    """The 30-scene reference suite: seeds 1-30, 3 to 8 objects, no noise."""
    return [generate_scene(s) for s in suite_specs(range(1, 31))]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
