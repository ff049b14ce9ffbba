import numpy as np
import pytest

from netlim import CovFunction, InitialLaw, ModelParams, SigmoidSpec, solve_limit_law


def config_c1(T=5, **changes):
    p = ModelParams(
        gamma=0.5, sigma2=1.0, theta_bar=0.0, theta2=0.0, j_bar=1.0,
        lambda_=CovFunction.separable([0.1, 0.2, 0.1]),
        f=SigmoidSpec("logistic", 1.0), mu_init=InitialLaw.point(0.0), horizon_T=T,
    )
    return p.with_(**changes) if changes else p


def decoupled(T=4, **changes):
    p = config_c1(T, j_bar=0.0, lambda_=CovFunction.zero(0), theta2=0.0, theta_bar=0.3)
    return p.with_(**changes) if changes else p


@pytest.fixture(scope="session")
def c1():
    return config_c1()


@pytest.fixture(scope="session")
def law_c1(c1):
    return solve_limit_law(c1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    def _record(num: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[num] = (bool(passed), detail)
        print(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
