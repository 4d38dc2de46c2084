import numpy as np
import pytest

from attn_mirror import example1_dataset, example2_dataset, gen_synthetic

# lines emitted by the acceptance module, echoed once at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def ex1():
    return example1_dataset()


@pytest.fixture
def ex2():
    return example2_dataset()


@pytest.fixture(scope="session")
def synth():
    return gen_synthetic(6, 8, 10, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
