import numpy as np
import pytest
from hypothesis import settings

import synthetic

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def hmm_prior():
    return synthetic.hmm_prior()


@pytest.fixture(scope="session")
def noninf_prior():
    return synthetic.noninformative_prior()


@pytest.fixture(scope="session")
def small_data():
    data, truth = synthetic.planted_clusters(np.random.default_rng(7), n=8, m=3)
    return data


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
