import numpy as np
import pytest

from lvreduce.experiments import build_pipeline
from lvreduce.model import N2_EXAMPLE, SIGMA_EXAMPLE, example_model
from lvreduce.reduction import reduce_model


@pytest.fixture(scope="session")
def model():
    return example_model()


@pytest.fixture(scope="session")
def pipe():
    return build_pipeline(N2_EXAMPLE)


@pytest.fixture(scope="session")
def sigma_pipe():
    return build_pipeline(SIGMA_EXAMPLE)


@pytest.fixture(scope="session")
def zero_reduction(model):
    """Same transport, all Lotka-Volterra rates set to zero."""
    return reduce_model(model.with_params(model.params.scaled(0.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number} ({title}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
