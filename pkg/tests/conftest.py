import numpy as np
import pytest

from fracpeak import ModelParams, build_domain_operator, solve_ground_state
from fracpeak.gridcore import make_grid
from fracpeak.groundstate import limit_constants, nondegeneracy_spectrum, riesz_profile
from fracpeak import reduction


CANONICAL = dict(N=1, s=1.0 / 3.0, p=2.0, eps=0.05, domain=(-1.0, 1.0))


@pytest.fixture(scope="session")
def P0():
    return ModelParams(**CANONICAL)


@pytest.fixture(scope="session")
def line_grid(P0):
    return make_grid(6000.0, 2**18, P0.domain)


@pytest.fixture(scope="session")
def gs(P0, line_grid):
    return solve_ground_state(P0, line_grid)


@pytest.fixture(scope="session")
def gs_coarse(P0):
    return solve_ground_state(P0, make_grid(2000.0, 2**16, P0.domain))


@pytest.fixture(scope="session")
def wp(gs):
    return riesz_profile(gs)


@pytest.fixture(scope="session")
def consts(gs, wp):
    return limit_constants(gs, wp)


@pytest.fixture(scope="session")
def spectrum(gs):
    return nondegeneracy_spectrum(gs)


@pytest.fixture(scope="session")
def op2(P0):
    return build_domain_operator(make_grid(8.0, 2048, P0.domain), P0)


@pytest.fixture(scope="session")
def op4(P0):
    return build_domain_operator(make_grid(8.0, 4096, P0.domain), P0)


@pytest.fixture(scope="session")
def op8(P0):
    return build_domain_operator(make_grid(8.0, 8192, P0.domain), P0)


@pytest.fixture(scope="session")
def op16(P0):
    return build_domain_operator(make_grid(8.0, 16384, P0.domain), P0)


@pytest.fixture(scope="session")
def op32(P0):
    return build_domain_operator(make_grid(8.0, 32768, P0.domain), P0)


@pytest.fixture(scope="session")
def rparams(P0):
    return reduction.make_reduction_params(P0)


def acceptance_line(number: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {number:2d}: {status} - {detail}")
