import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from warpcd.kernels import CurvatureDimParams, cn, critical_infinite, critical_length, sigma, sn, tau, tau_array


@pytest.mark.parametrize("key", [k for k in oracles.FROZEN if k[0] in ("sn", "cn", "tau")])
def test_frozen_values(key):
    fn = {"sn": sn, "cn": cn, "tau": tau}[key[0]]
    assert fn(*key[1:]) == pytest.approx(oracles.FROZEN[key], rel=1e-13, abs=1e-15)


def test_oracles_frozen():
    for key, val in oracles.FROZEN.items():
        assert oracles.evaluate(key) == val


@pytest.mark.parametrize("K", [-2.0, -1.0, -1e-9, 0.0, 1e-9, 0.5, 1.0, 4.0])
def test_sn_matches_oracle_across_series_switch(K):
    ts = np.linspace(0.0, 3.0, 31)
    if K > 0:
        ts = ts[ts < math.pi / math.sqrt(K)]
    got = sn(K, ts)
    want = [float(oracles.sn(K, t)) for t in ts]
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose([sn(K, float(t)) for t in ts], want, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(cn(K, ts), [float(oracles.cn(K, t)) for t in ts], rtol=1e-13, atol=1e-14)


LATTICE_K = np.linspace(-1.0, 1.0, 41)
LATTICE_T = np.linspace(0.0, math.pi, 315)


def test_pythagorean_identity_on_lattice():
    for K in LATTICE_K:
        err = np.abs(cn(K, LATTICE_T) ** 2 + K * sn(K, LATTICE_T) ** 2 - 1.0)
        assert err.max() <= 1e-12


def test_pythagorean_identity_relative_wide_range():
    # away from the unit lattice the identity holds to a few ulp of cn^2
    for K in np.linspace(-4.0, 4.0, 33):
        t = np.linspace(0.0, 4.0, 401)
        c2 = cn(K, t) ** 2
        err = np.abs(c2 + K * sn(K, t) ** 2 - 1.0)
        assert np.all(err <= 8 * np.spacing(np.maximum(c2, 1.0)))


@pytest.mark.parametrize("N", [1.0, 1.5, 2.0, 3.0, 7.0])
@pytest.mark.parametrize("t", [0.0, 0.1, 0.25, 0.5, 0.9, 1.0])
def test_flat_tau_is_t_exactly(N, t):
    for theta in (0.0, 0.3, 1.0, 5.0, 100.0):
        assert tau(0.0, N, t, theta) == t


def test_tau_continuous_at_zero_curvature():
    for K in (1e-8, -1e-8, 1e-12):
        for theta in (0.5, 2.0, 3.0):
            for t in (0.2, 0.5, 0.8):
                assert abs(tau(K, 3.0, t, theta) - tau(0.0, 3.0, t, theta)) <= 1e-8


def test_tau_infinite_past_critical_length():
    K, N = 1.0, 3.0
    L = math.pi * math.sqrt((N - 1) / K)
    assert critical_length(K, N - 1) == L
    assert tau(K, N, 0.5, L) == math.inf
    assert tau(K, N, 0.5, L + 1.0) == math.inf
    assert math.isfinite(tau(K, N, 0.5, math.nextafter(L, 0.0)))
    assert critical_infinite(K, N, L) and not critical_infinite(-1.0, N, 100.0)
    assert tau(K, 1.0, 0.5, 100.0) == 0.5


def test_sigma_endpoints():
    assert sigma(1.0, 1.0, 1.0, 2.0) == 1.0
    assert sigma(1.0, 1.0, 0.0, 2.0) == 0.0
    assert sigma(-3.0, 2.0, 0.4, 0.0) == 0.4


@pytest.mark.parametrize("bad", [dict(K=0, N=0.5, t=0.5, theta=1), dict(K=0, N=2, t=1.5, theta=1),
                                 dict(K=0, N=2, t=0.5, theta=-1)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        CurvatureDimParams(**bad)


def test_params_tau_and_array():
    p = CurvatureDimParams(1.0, 2.0, 0.5, math.pi / 2)
    assert p.tau() == tau(1.0, 2.0, 0.5, math.pi / 2) and not p.is_infinite
    arr = tau_array(-1.0, 3.0, 0.3, np.array([[0.5, 1.0], [2.0, 4.0]]))
    assert arr.shape == (2, 2) and arr[1, 0] == tau(-1.0, 3.0, 0.3, 2.0)


@given(K=st.floats(-2, 2), N=st.floats(1.01, 10), t=st.floats(0, 1), theta=st.floats(0, 2.5))
def test_tau_monotone_in_curvature(K, N, t, theta):
    lo, hi = tau(K - 0.1, N, t, theta), tau(K, N, t, theta)
    assert lo <= hi * (1 + 1e-12) + 1e-15


@given(N=st.floats(1.0, 10), t=st.floats(0, 1), theta=st.floats(0, 2.5), K=st.floats(-2, 2))
def test_tau_between_zero_and_one_for_negative_or_finite(K, N, t, theta):
    v = tau(K, N, t, theta)
    assert v >= 0.0
    if K <= 0:
        assert v <= t + 1e-12
