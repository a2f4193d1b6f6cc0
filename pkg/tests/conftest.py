import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from htnet.examples import load_example
from htnet.planning import analyze

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tandem_plan():
    return analyze(load_example("tandem"))


@pytest.fixture(scope="session")
def single_plan():
    return analyze(load_example("single"))


@pytest.fixture(scope="session")
def n_plan():
    return analyze(load_example("n_network"))


@pytest.fixture(scope="session")
def jobshop_plan():
    return analyze(load_example("jobshop_fig3"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, passed, detail):
        store[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
