import numpy as np
import pytest

from transport_ns.flow import SolenoidalFieldSet, integrate_flow, invert_flow
from transport_ns.noise import sample_path
from transport_ns.torus_field import TorusGrid

SHEAR = [{"modes": [{"k": [0, 1], "cos": -1.0}]}]  # Q = (sin x2, 0)
CELLULAR = [{"modes": [{"k": [1, 1], "cos": 0.5}, {"k": [1, -1], "cos": 0.5}]}]  # cos x1 cos x2


def make_flow(specs, M, steps, T, seed, invert=True):
    g = TorusGrid(2, M)
    Q = SolenoidalFieldSet.from_stream_functions(g, specs)
    path = sample_path(Q.K, T, steps, seed)
    flow = integrate_flow(Q, path)
    return g, Q, path, invert_flow(flow) if invert else flow


@pytest.fixture(scope="session")
def shear():
    """32^2 shear flow, 100 steps on [0, 0.5]."""
    return make_flow(SHEAR, 32, 100, 0.5, 3)


@pytest.fixture(scope="session")
def cellular():
    return make_flow(CELLULAR, 32, 50, 0.25, 4)


@pytest.fixture(scope="session")
def translation():
    g = TorusGrid(2, 16)
    Q = SolenoidalFieldSet.constant(g, [[1.0, 0.0], [0.3, -0.5]])
    path = sample_path(2, 1.0, 40, 8)
    return g, Q, path, invert_flow(integrate_flow(Q, path))


@pytest.fixture
def grid32():
    return TorusGrid(2, 32)


def sup(a):
    return float(np.max(np.abs(a)))


ACCEPTANCE: dict[int, str] = {}


def report(n: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[n] = f"CRITERION {n}: {'PASS' if passed else 'FAIL'} {detail}"
    print(ACCEPTANCE[n])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
