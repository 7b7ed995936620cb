import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unitcf.model import Bounds, Dataset, Dims, ExtendedParams
from unitcf.optimizer import project_population_array

settings.register_profile("unitcf", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("unitcf")

CRITERIA = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def random_theta(rng, p, bounds, scale=1.0):
    T = scale * rng.normal(size=(p, p))
    return project_population_array(0.5 * (T + T.T), bounds, rounds=50)


def random_params(rng, n, p, bounds, scale=1.0):
    theta = random_theta(rng, p, bounds, scale)
    fields = rng.uniform(-bounds.alpha, bounds.alpha, size=(n, p))
    return ExtendedParams.from_arrays(theta, fields)


def random_data(rng, n, p, x_max=1.0):
    return Dataset(rng.uniform(-x_max, x_max, size=(n, p)), Dims(0, 0, p), x_max)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_bounds():
    return Bounds(2.0, 3.0, 1.0)
