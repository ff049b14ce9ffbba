import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netlim.model import (CovFunction, InitialLaw, ModelParams, ParamsError, SigmoidSpec,
                          lambda_psd_check, psi_forward, psi_inverse, psi_inverse_coeffs,
                          validate_params)

from conftest import config_c1

gammas = st.floats(0.0, 0.99)
thetas = st.floats(-5, 5)


def recursive_inverse(v, gamma, theta_bar):
    u = np.empty_like(v)
    u[0] = v[0]
    for t in range(1, len(v)):
        u[t] = gamma * u[t - 1] + v[t] + theta_bar
    return u


def test_psi_forward_examples():
    np.testing.assert_array_equal(psi_forward([1, 2, 3], 0.0, 0.0), [1, 2, 3])
    np.testing.assert_allclose(psi_forward([2, 2, 2], 0.5, 1.0), [2, 0, 0])


def test_psi_inverse_examples():
    np.testing.assert_allclose(psi_inverse([0, 0, 0], 0.0, 1.0), [0, 1, 1])
    np.testing.assert_allclose(psi_inverse([1, 0, 0], 0.5, 0.0), [1, 0.5, 0.25])


def test_psi_length_mismatch():
    with pytest.raises(ValueError):
        psi_forward([1.0, 2.0], 0.5, 0.0, T=3)
    with pytest.raises(ValueError):
        psi_inverse([1.0, 2.0, 3.0], 0.5, 0.0, T=1)


@given(arrays(float, st.integers(1, 12), elements=st.floats(-1e3, 1e3)), gammas, thetas)
def test_psi_roundtrip(u, gamma, theta_bar):
    back = psi_inverse(psi_forward(u, gamma, theta_bar), gamma, theta_bar)
    assert np.max(np.abs(back - u)) <= 1e-12


@given(arrays(float, st.integers(1, 12), elements=st.floats(-10, 10)), gammas, thetas)
def test_psi_inverse_matches_recursion(v, gamma, theta_bar):
    np.testing.assert_allclose(psi_inverse(v, gamma, theta_bar),
                               recursive_inverse(v, gamma, theta_bar), atol=1e-10, rtol=1e-10)


def test_coeff_examples():
    a, b = psi_inverse_coeffs(0, 0.7, 3.0)
    np.testing.assert_array_equal(a, [1.0])
    assert b == 0.0
    a, b = psi_inverse_coeffs(2, 0.5, 0.0)
    np.testing.assert_allclose(a, [0.25, 0.5, 1.0])
    assert b == 0.0


@given(st.integers(0, 10), gammas, thetas, st.integers(0, 2**32 - 1))
def test_coeffs_agree_with_inverse(t, gamma, theta_bar, seed):
    v = np.random.default_rng(seed).normal(size=t + 3)
    a, b = psi_inverse_coeffs(t, gamma, theta_bar)
    assert a @ v[: t + 1] + b == pytest.approx(psi_inverse(v, gamma, theta_bar)[t], abs=1e-10)


def test_sigmoid_range_and_monotone():
    f = SigmoidSpec("logistic", 2.0)
    x = np.linspace(-700, 700, 20001)
    y = f(x)
    assert np.all((y > 0) & (y < 1))
    assert np.all(np.diff(y) >= 0)
    mid = np.linspace(-15, 15, 1001)
    assert np.all(np.diff(f(mid)) > 0)
    assert f(0.0) == 0.5
    assert f.lipschitz == 0.5
    # empirical Lipschitz constant
    assert np.max(np.abs(np.diff(f(mid)) / np.diff(mid))) <= f.lipschitz + 1e-12


def test_validate_accepts_c1():
    p = config_c1()
    assert validate_params(p) is p


@pytest.mark.parametrize("changes, fragment", [
    ({"gamma": 1.0}, "gamma out of [0,1)"),
    ({"gamma": -0.1}, "gamma out of [0,1)"),
    ({"sigma2": 0.0}, "sigma2"),
    ({"theta2": -1.0}, "theta2"),
    ({"horizon_T": 0}, "horizon_T"),
])
def test_validate_rejects(changes, fragment):
    with pytest.raises(ParamsError) as exc:
        validate_params(config_c1(**changes))
    assert any(fragment in msg for msg in exc.value.problems)


def test_validate_asymmetric_lambda():
    vals = np.zeros((3, 3))
    vals[1, 1] = 0.2
    vals[2, 1] = 0.02  # Lambda(1, 0)
    vals[0, 1] = 0.03  # Lambda(-1, 0)
    with pytest.raises(ParamsError) as exc:
        validate_params(config_c1(lambda_=CovFunction(1, vals)))
    assert "Λ point-symmetry violated" in exc.value.problems


def test_validate_reports_every_problem():
    vals = np.array([[0, 0, 0], [0.03, 1, 0.02], [0, 0, 0]]).T
    p = config_c1(gamma=1.0, sigma2=-1.0, lambda_=CovFunction(1, vals))
    with pytest.raises(ParamsError) as exc:
        validate_params(p)
    assert len(exc.value.problems) >= 3


def test_validate_spectrally_invalid():
    vals = np.zeros((3, 3))
    vals[1, 1] = 1.0
    vals[0, 1] = vals[2, 1] = vals[1, 0] = vals[1, 2] = 0.9
    with pytest.raises(ParamsError, match="spectrally invalid"):
        validate_params(config_c1(lambda_=CovFunction(1, vals)))


def test_initial_law_weights():
    assert InitialLaw.discrete([0, 1], [0.5, 0.5]).problems() == []
    assert InitialLaw.discrete([0, 1], [0.5, 0.6]).problems()
    assert InitialLaw.discrete([0, 1], [1.5, -0.5]).problems()


# -- spectral check ---------------------------------------------------------


def brute_force_spectrum(lam: CovFunction, N: int) -> np.ndarray:
    """Explicit double sum  sum_{k,l} Lambda(k,l) exp(-2 pi i (a k + b l) / N)."""
    out = np.zeros((N, N), dtype=complex)
    ks = range(-lam.d, lam.d + 1)
    for a in range(N):
        for b in range(N):
            out[a, b] = sum(lam(k, l) * np.exp(-2j * np.pi * (a * k + b * l) / N)
                            for k in ks for l in ks)
    return out


def test_psd_check_separable_passes():
    lam = CovFunction.separable([0.1, 0.2, 0.1])
    res = lambda_psd_check(lam, 9)
    assert res.passed
    one_d = 0.2 + 0.2 * np.cos(2 * np.pi * np.arange(9) / 9)
    np.testing.assert_allclose(np.sort(res.spectrum.ravel()),
                               np.sort(np.outer(one_d, one_d).ravel()), atol=1e-14)


def test_psd_check_strong_neighbours_fails():
    vals = np.zeros((3, 3))
    vals[1, 1] = 1.0
    vals[0, 1] = vals[2, 1] = vals[1, 0] = vals[1, 2] = 0.9
    lam = CovFunction(1, vals)
    oracle = brute_force_spectrum(lam, 9)
    assert np.max(np.abs(oracle.imag)) < 1e-12
    res = lambda_psd_check(lam, 9)
    assert not res.passed
    assert res.min_value == pytest.approx(oracle.real.min(), abs=1e-12)
    assert res.min_value < 0


def test_psd_check_flat_spectrum():
    res = lambda_psd_check(CovFunction(0, [[0.7]]), 5)
    assert res.passed and res.min_value == pytest.approx(0.7)


def test_psd_check_torus_too_small():
    with pytest.raises(ParamsError):
        lambda_psd_check(CovFunction.separable([0.1, 0.2, 0.3, 0.2, 0.1]), 3)


def test_cov_function_support():
    lam = CovFunction.separable([0.1, 0.2, 0.1])
    assert lam(2, 0) == 0.0 and lam(1, 1) == pytest.approx(0.01)
    assert lam.lag_support == 1
    assert CovFunction.zero(2).lag_support == 0


def test_params_json_roundtrip():
    for mu in (InitialLaw.point(0.3), InitialLaw.gaussian(0.1, 0.2),
               InitialLaw.discrete([-1, 1], [0.25, 0.75])):
        p = config_c1(mu_init=mu, theta2=0.1)
        doc = json.loads(json.dumps(p.to_dict()))
        assert set(doc) == {"gamma", "sigma2", "theta_bar", "theta2", "j_bar", "lambda", "f",
                            "mu_init", "horizon_T"}
        assert ModelParams.from_dict(doc) == p


def test_lambda_json_layout():
    vals = np.arange(9.0).reshape(3, 3)
    doc = CovFunction(1, vals).to_dict()
    # row k+d, column l+d
    assert doc["values"][2][0] == vals[2, 0] == CovFunction(1, vals)(1, -1)
    flat = {"d": 1, "values": vals.ravel().tolist()}
    assert CovFunction.from_dict(flat) == CovFunction(1, vals)


def test_missing_field_named():
    doc = config_c1().to_dict()
    del doc["sigma2"]
    with pytest.raises(ParamsError, match="sigma2"):
        ModelParams.from_dict(doc)
