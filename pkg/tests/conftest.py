import numpy as np
import pytest

from lesionforge.phantom import PhantomConfig, generate_dataset


@pytest.fixture(scope="session")
def default_dataset():
    """The 29 + 127 sample, 64x64 phantom set at seed 0."""
    return generate_dataset(PhantomConfig(seed=0))


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(PhantomConfig(n_normal=10, n_lesion=20, image_size=32, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
