import numpy as np
import pytest

from hmcert.certify import fit_drift, fit_minorization, individual_to_uniform, verify_drift
from hmcert.errors import ModelValidationError, ParameterOutOfRange
from hmcert.models import (
    GridTooCoarse,
    LinearSystemSpec,
    UnstableSystem,
    build_linear_family,
    build_random_minorized_family,
    build_two_state_family,
    continuous_drift,
    dominated_by,
    generate,
    lattice_noise,
    scalar_linear_spec,
    semidefinite_gamma,
    two_state_invariant,
)
from hmcert.poisson import invariant_measure
from hmcert.statespace import Lyapunov


def linear_model(points, grid=(0.3, 0.45, 0.6)):
    return build_linear_family(scalar_linear_spec(np.array(grid), points=points), max_deviation=None)


@pytest.mark.parametrize("points,limit", [(201, 0.10), (401, 0.05)])
def test_linear_drift_matches_continuous(points, limit):
    lm = linear_model(points)
    for t, test in zip((0.3, 0.45, 0.6), lm.self_test):
        assert test["gamma_continuous"] == pytest.approx(t * t)
        assert test["K_continuous"] == pytest.approx(1.0)
        assert test["deviation"] <= limit


def test_zero_dynamics_give_identical_rows():
    lm = build_linear_family(scalar_linear_spec(np.array([0.0]), a_at=lambda t: 0.0, points=21), None)
    P = np.asarray(lm.family.kernels[0])
    assert np.allclose(P, P[0])
    drift = fit_drift(lm.family, lm.V)
    minor = fit_minorization(lm.family, lm.V, drift, R=50.0)
    assert minor.alpha_bar == pytest.approx(1.0)


def test_semidefinite_gamma_matches_eigenvalue():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = 0.4 * rng.normal(size=(3, 3))
        L = rng.normal(size=(3, 3))
        Q = L @ L.T + np.eye(3)
        g_eig, _ = continuous_drift(A, np.eye(3), Q, np.eye(3))
        assert semidefinite_gamma(A, Q) == pytest.approx(g_eig, abs=1e-6)
        assert dominated_by(A, Q, g_eig + 1e-6) and not dominated_by(A, Q, g_eig - 1e-3)


def test_two_dimensional_linear_family():
    spec = LinearSystemSpec(
        A_at=lambda t: [[t[0], 0.1], [0.0, t[1]]], B_at=lambda t: np.eye(2),
        noise_points=[[-1, 0], [1, 0], [0, -1], [0, 1]], noise_probs=[0.25] * 4,
        lower=[-5, -5], upper=[5, 5], points=[41, 41], Q=np.eye(2),
        theta_grid=[[0.3, 0.3], [0.4, 0.5]],
    )
    # too coarse for the 10% self-test; only the structure is checked here
    lm = build_linear_family(spec, max_deviation=None)
    assert lm.family.n_states == 41 * 41
    assert lm.self_test[0]["gamma_continuous"] == pytest.approx(semidefinite_gamma([[0.3, 0.1], [0.0, 0.3]], np.eye(2)), abs=1e-9)
    assert lm.family.theta_grid.shape == (2, 2)


def test_linear_spec_validation():
    with pytest.raises(UnstableSystem, match=r"theta\[1\]"):
        scalar_linear_spec(np.array([0.5, 1.2]))
    with pytest.raises(ModelValidationError, match="mean"):
        scalar_linear_spec(np.array([0.5]), noise=((0.0,), (1.0,)))
    with pytest.raises(ModelValidationError, match="positive definite"):
        scalar_linear_spec(np.array([0.5]), q=-1.0)
    with pytest.raises(GridTooCoarse):
        build_linear_family(scalar_linear_spec(np.array([0.5]), points=7), max_deviation=0.01)


def test_lattice_noise():
    U, p = lattice_noise(1.0, 0.5)
    np.testing.assert_allclose(U[:, 0], [-1, -0.5, 0, 0.5, 1])
    assert p.sum() == pytest.approx(1.0)


def test_two_state_closed_forms():
    np.testing.assert_allclose(two_state_invariant(0.1, 0.2), [2 / 3, 1 / 3])
    np.testing.assert_allclose(two_state_invariant(0.3, 0.3), [0.5, 0.5])
    fam = build_two_state_family(lambda t: 0.1 + 0.05 * t, 0.2, np.linspace(0, 2, 5))
    for th, P in zip(fam.theta_grid[:, 0], fam.kernels):
        mu = invariant_measure(P)
        np.testing.assert_allclose(np.asarray(mu), two_state_invariant(0.1 + 0.05 * th, 0.2), atol=1e-12)
    with pytest.raises(ParameterOutOfRange):
        build_two_state_family(1.5, 0.2, [0.0])


def test_random_minorized_family():
    full = build_random_minorized_family(4, [0.0, 1.0], 0, 1.0)
    P = np.asarray(full.kernels[0])
    assert np.allclose(P, P[0]) and np.allclose(np.asarray(full.kernels[1]), P)
    fam = build_random_minorized_family(6, [0.0, 0.5, 1.0], 11, 0.35)
    V = Lyapunov(np.linspace(0, 4, 6))
    drift = fit_drift(fam, V)
    minor = fit_minorization(fam, V, drift, R=10.0)
    assert minor.alpha_bar >= 0.35 - 1e-12
    other = build_random_minorized_family(6, [0.0, 0.5, 1.0], 12, 0.35)
    assert not np.allclose(np.asarray(fam.kernels[0]), np.asarray(other.kernels[0]))
    again = build_random_minorized_family(6, [0.0, 0.5, 1.0], 11, 0.35)
    assert all(np.array_equal(np.asarray(a), np.asarray(b)) for a, b in zip(fam.kernels, again.kernels))


def test_generators():
    for name in ("two_state", "rotation", "random_minorized", "permutation"):
        gen = generate(name, {})
        assert len(gen.family) >= 1
    lin = generate("linear", {"theta": {"start": 0.3, "stop": 0.6, "num": 3}, "points": 101, "max_deviation": None})
    assert lin.meta["self_test"]
    with pytest.raises(ParameterOutOfRange):
        generate("nope", {})
    with pytest.raises(ParameterOutOfRange):
        generate("two_state", {"bogus": 1})


def test_individual_drift_fixture_needs_seven_steps():
    gen = generate("linear", {
        "theta": {"start": 0.3, "stop": 0.6, "num": 4}, "noise": "lattice", "half_width": 3.0,
        "spacing": 0.2, "points": 61, "max_deviation": None,
        "individual": {"q_min": 1.0, "q_max": 4.0, "gamma": 0.8},
    })
    a, b, c, d = gen.sandwich
    assert c / a == 4.0
    rc = individual_to_uniform(gen.family, gen.V_family, gen.V, a, b, c, d, gamma=0.8)
    assert rc.r == 7
    assert rc.gamma_r == pytest.approx(0.8 ** 7 * 4)
    verify_drift(gen.family.power(7), gen.V, rc.gamma_r, rc.K_r)


def test_refinement_shrinks_self_test_deviation():
    assert linear_model(401).max_deviation < linear_model(201).max_deviation


def test_individual_drift_on_two_parameter_family():
    grid = np.array([[0.3, 0.3], [0.3, 0.5], [0.5, 0.3], [0.5, 0.5]])
    spec = scalar_linear_spec(grid, a_at=lambda t: 0.5 * (t[0] + t[1]), noise=lattice_noise(3.0, 0.2)[0],
                              probs=lattice_noise(3.0, 0.2)[1], points=61)
    lm = build_linear_family(spec, max_deviation=None)
    q = 1.0 + grid.sum(axis=1)  # per-theta quadratic weights in [1.6, 2]
    V_family = [qt * np.asarray(lm.V) for qt in q]
    rc = individual_to_uniform(lm.family, V_family, lm.V, q.min(), 0.0, q.max(), 0.0)
    drift_r = fit_drift(lm.family.power(rc.r), lm.V)
    assert drift_r.gamma < 1
    verify_drift(lm.family.power(rc.r), lm.V, rc.gamma_r, rc.K_r)
