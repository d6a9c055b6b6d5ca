import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmcert.norms import (
    WeightParam,
    d_beta,
    osc_batch,
    osc_seminorm,
    osc_via_min_shift,
    pair_metric,
    rho_beta,
    sigma_batch,
    sigma_beta,
    sigma_beta_dual_oracle,
    sup_norm_beta,
)

V01 = np.array([0.0, 1.0])

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
betas = st.floats(0.01, 5.0)


@st.composite
def instance(draw, min_n=2, max_n=8):
    n = draw(st.integers(min_n, max_n))
    V = draw(arrays(float, n, elements=st.floats(0, 20)))
    phi = draw(arrays(float, n, elements=finite))
    return V, phi, draw(betas)


@st.composite
def zero_mass(draw, min_n=2, max_n=8):
    n = draw(st.integers(min_n, max_n))
    V = draw(arrays(float, n, elements=st.floats(0, 20)))
    a = draw(arrays(float, n, elements=st.floats(0, 1)))
    b = draw(arrays(float, n, elements=st.floats(0, 1)))
    if a.sum() == 0 or b.sum() == 0:
        a, b = np.eye(n)[0], np.eye(n)[-1]
    return V, a / a.sum() - b / b.sum(), draw(betas)


def test_sup_norm_examples():
    assert sup_norm_beta(np.zeros(2), V01, 1.0) == 0.0
    assert sup_norm_beta([1.0, 3.0], V01, 1.0) == 1.5
    assert sup_norm_beta([-3.0, 9.0], V01, 1.0) == 3 * sup_norm_beta([1.0, -3.0], V01, 1.0)


def test_d_beta_examples():
    assert d_beta(0, 0, V01, 1.0) == 0.0
    assert d_beta(0, 1, V01, 1.0) == 3.0
    assert d_beta(2, 0, np.zeros(3), 1.0) == 2.0
    M = pair_metric(V01, 1.0)
    assert M[0, 1] == M[1, 0] == 3.0 and M[0, 0] == 0.0


def test_osc_examples():
    assert osc_seminorm(np.full(4, 7.0), np.arange(4.0), 1.0) == 0.0
    assert osc_seminorm([1.0, 3.0], V01, 1.0) == pytest.approx(2 / 3)
    assert osc_seminorm([0.0, 1.0, 2.0], np.zeros(3), 1.0) == pytest.approx(1.0)
    val, (x, y) = osc_seminorm([0.0, 1.0, 2.0], np.zeros(3), 1.0, witness=True)
    assert (x, y) == (0, 2)


def test_min_shift_examples():
    val, c = osc_via_min_shift(np.full(3, 2.5), np.array([0.0, 1.0, 4.0]), 1.0)
    assert val == pytest.approx(0.0, abs=1e-15) and c == pytest.approx(-2.5)
    val, c = osc_via_min_shift([1.0, 3.0], V01, 1.0)
    assert val == pytest.approx(2 / 3, abs=1e-14)
    assert c == pytest.approx(-5 / 3, abs=1e-14)


def test_rho_examples():
    assert rho_beta(np.zeros(3), np.arange(3.0), 1.0) == 0.0
    assert rho_beta([1.0, -1.0], V01, 1.0) == 3.0
    eta = np.array([0.3, -0.5, 0.2])
    assert rho_beta(-4 * eta, np.arange(3.0), 0.5) == pytest.approx(4 * rho_beta(eta, np.arange(3.0), 0.5))


def test_dual_oracle_examples():
    assert sigma_beta_dual_oracle(np.zeros(2), V01, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert sigma_beta_dual_oracle([1.0, -1.0], V01, 1.0) == pytest.approx(3.0, abs=1e-9)
    rng = np.random.default_rng(5)
    V = rng.uniform(0, 3, 5)
    mu1, mu2 = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    assert sigma_beta_dual_oracle(mu1 - mu2, V, 0.7) == pytest.approx(rho_beta(mu1 - mu2, V, 0.7), abs=1e-7)
    with pytest.raises(ValueError):
        sigma_beta_dual_oracle([1.0, 0.0], V01, 1.0)


def test_weight_param_validation():
    assert WeightParam(0.5).beta == 0.5
    with pytest.raises(ValueError):
        WeightParam(0.0)
    with pytest.raises(ValueError):
        sup_norm_beta([1.0], [0.0], -1.0)


def test_batches_match_scalar_versions():
    rng = np.random.default_rng(0)
    V = rng.uniform(0, 4, 7)
    Phi = rng.normal(size=(7, 30))
    np.testing.assert_allclose(osc_batch(Phi, V, 0.3), [osc_seminorm(Phi[:, j], V, 0.3) for j in range(30)])
    mu1, mu2 = rng.dirichlet(np.ones(7), 30), rng.dirichlet(np.ones(7), 30)
    np.testing.assert_allclose(sigma_batch(mu1 - mu2, V, 0.3),
                               [sigma_beta(a, b, V, 0.3) for a, b in zip(mu1, mu2)])


@settings(max_examples=200, deadline=None)
@given(instance())
def test_min_shift_equals_pairwise_osc(args):
    V, phi, beta = args
    val, c = osc_via_min_shift(phi, V, beta)
    ref = osc_seminorm(phi, V, beta)
    assert abs(val - ref) <= 1e-9 * max(1.0, ref)
    # the returned shift attains the value
    assert sup_norm_beta(phi + c, V, beta) == pytest.approx(val, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(instance())
def test_osc_bounded_by_sup_norm_and_shift_invariant(args):
    V, phi, beta = args
    o = osc_seminorm(phi, V, beta)
    assert o <= sup_norm_beta(phi, V, beta) * (1 + 1e-12)
    assert osc_seminorm(phi + 3.7, V, beta) == pytest.approx(o, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(instance(), finite)
def test_homogeneity(args, c):
    V, phi, beta = args
    assert sup_norm_beta(c * phi, V, beta) == pytest.approx(abs(c) * sup_norm_beta(phi, V, beta), rel=1e-12, abs=1e-300)
    assert rho_beta(c * phi, V, beta) == pytest.approx(abs(c) * rho_beta(phi, V, beta), rel=1e-12, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(zero_mass())
def test_dual_oracle_equals_weighted_variation(args):
    V, eta, beta = args
    assert sigma_beta_dual_oracle(eta, V, beta) == pytest.approx(rho_beta(eta, V, beta), abs=1e-7, rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(zero_mass(), st.data())
def test_duality_pairing_inequality(args, data):
    # |eta(phi)| <= osc(phi) * rho(eta) for zero-mass eta
    V, eta, beta = args
    phi = data.draw(arrays(float, len(V), elements=finite))
    assert abs(eta @ phi) <= osc_seminorm(phi, V, beta) * rho_beta(eta, V, beta) * (1 + 1e-9) + 1e-9


@settings(max_examples=100, deadline=None)
@given(instance(min_n=3))
def test_d_beta_triangle_inequality(args):
    V, _, beta = args
    M = pair_metric(V, beta)
    n = len(V)
    for z in range(n):
        assert np.all(M <= M[:, [z]] + M[[z], :] + 1e-9)
