import numpy as np
import pytest

from homog.germ import Germ
from homog.scenarios import load_scenario

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def built():
    """Lazily built (scenario, operator, germ) triples shared across the session."""
    cache = {}

    def get(name, cutoff=None, **params):
        key = (name, cutoff, tuple(sorted(params.items())))
        if key not in cache:
            sc = load_scenario(name, **params).with_cutoff(cutoff)
            op = sc.operator()
            cache[key] = (sc, op, Germ(op))
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
