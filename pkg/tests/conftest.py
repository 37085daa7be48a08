import numpy as np
import pytest
from hypothesis import settings

from streamcast import kernels
from streamcast.design import default_platform_spec
from streamcast.timeseries_io import generate_synthetic, platform_like_config

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def platform_spec():
    return default_platform_spec()


@pytest.fixture(scope="session")
def stable_stream():
    return generate_synthetic(platform_like_config(days=60), 11)


@pytest.fixture(scope="session")
def shock_stream():
    return generate_synthetic(platform_like_config(days=120, shocks=((60, 3.0),)), 5)


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        log[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for number in sorted(log):
            terminalreporter.write_line(log[number])
