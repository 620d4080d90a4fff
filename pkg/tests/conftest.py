import numpy as np
import pytest

from gridtwin.feeder import fixture_path, load_fixture, solve_power_flow
from gridtwin.telemetry import default_schema


@pytest.fixture(scope="session")
def feeder2():
    feeder, nominal = load_fixture(fixture_path("feeder_2bus"))
    return feeder, nominal


@pytest.fixture(scope="session")
def feeder8():
    feeder, nominal = load_fixture(fixture_path("feeder_8bus"))
    return feeder, nominal


@pytest.fixture(scope="session")
def schema8(feeder8):
    feeder, _ = feeder8
    return default_schema(
        feeder,
        vmag_buses=["b2", "b4", "b6", "b8"],
        vang_nodes=["b5:a", "b5:b", "b5:c", "b8:a"],
    )


@pytest.fixture(scope="session")
def solved2(feeder2):
    feeder, nominal = feeder2
    return solve_power_flow(feeder, nominal, tol=1e-12)


@pytest.fixture(scope="session")
def solved8(feeder8):
    feeder, nominal = feeder8
    return solve_power_flow(feeder, nominal, tol=1e-10)


def two_bus_oracle(v1=1.0 + 0.0j, z=0.01 + 0.02j, s2=0.1 + 0.05j, iters=200):
    """Scalar fixed-point iteration V2 = V1 - z * conj(S2 / V2)."""
    v2 = v1
    for _ in range(iters):
        v2 = v1 - z * np.conj(s2 / v2)
    return v2
