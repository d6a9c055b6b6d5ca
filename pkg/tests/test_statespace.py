import numpy as np
import pytest

from hmcert import tolerances as tol
from hmcert.errors import DimensionMismatch, ModelValidationError
from hmcert.statespace import (
    Kernel,
    Lyapunov,
    Measure,
    Observable,
    ParametricFamily,
    ProbabilityMeasure,
    SignedMeasure,
    StateSpace,
    apply_function,
    kernel_power,
    push_measure,
    theta_distance,
)

P = np.array([[0.9, 0.1], [0.2, 0.8]])


def test_push_identity_keeps_measure():
    mu = ProbabilityMeasure([0.3, 0.5, 0.2])
    out = push_measure(Kernel.identity(3), mu)
    assert isinstance(out, ProbabilityMeasure)
    np.testing.assert_allclose(np.asarray(out), np.asarray(mu))


def test_push_stationary_vector_is_fixed():
    out = push_measure(Kernel(P), ProbabilityMeasure([2 / 3, 1 / 3]))
    np.testing.assert_allclose(np.asarray(out), [2 / 3, 1 / 3], atol=1e-15)


def test_push_dirac_extracts_row():
    out = push_measure(Kernel(P), ProbabilityMeasure.dirac(2, 0))
    np.testing.assert_allclose(np.asarray(out), [0.9, 0.1])


def test_push_preserves_kind_and_mass():
    eta = SignedMeasure([1.0, -1.0])
    out = push_measure(Kernel(P), eta)
    assert isinstance(out, SignedMeasure)
    assert abs(out.mass) < 1e-15
    assert isinstance(push_measure(Kernel(P), Measure([2.0, 1.0])), Measure)
    assert isinstance(push_measure(P, np.array([0.5, 0.5])), np.ndarray)


def test_apply_function_examples():
    np.testing.assert_allclose(np.asarray(apply_function(Kernel(P), Observable([0.0, 1.0]))), [0.1, 0.8])
    np.testing.assert_allclose(apply_function(Kernel(P), np.full(2, 4.2)), [4.2, 4.2])
    phi = Observable([3.0, -1.0])
    np.testing.assert_allclose(np.asarray(apply_function(Kernel.identity(2), phi)), [3.0, -1.0])
    assert isinstance(apply_function(Kernel(P), Lyapunov([0.0, 1.0])), Lyapunov)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        push_measure(Kernel(P), ProbabilityMeasure.uniform(3))
    with pytest.raises(DimensionMismatch):
        apply_function(Kernel(P), np.ones(3))


def test_kernel_power_examples():
    np.testing.assert_allclose(np.asarray(kernel_power(Kernel(P), 0)), np.eye(2))
    np.testing.assert_allclose(np.asarray(kernel_power(Kernel(P), 2)), [[0.83, 0.17], [0.34, 0.66]], atol=1e-15)
    perm = np.roll(np.eye(4), 1, axis=1)
    np.testing.assert_allclose(np.asarray(kernel_power(Kernel(perm), 4)), np.eye(4))
    with pytest.raises(ValueError):
        kernel_power(Kernel(P), -1)


def test_kernel_validation_reports_location():
    with pytest.raises(ModelValidationError, match="row 1"):
        Kernel([[0.5, 0.5], [0.5, 0.49]])
    with pytest.raises(ModelValidationError, match="row 0, entry 1"):
        Kernel([[1.1, -0.1], [0.5, 0.5]])
    with pytest.raises(ModelValidationError, match="square"):
        Kernel(np.ones((2, 3)) / 3)
    with pytest.raises(ModelValidationError, match="non-finite"):
        Kernel([[np.nan, 1.0], [0.5, 0.5]])


def test_row_tolerance_can_be_overridden():
    rows = [[0.5, 0.5 + 1e-8], [0.5, 0.5]]
    with pytest.raises(ModelValidationError):
        Kernel(rows)
    with tol.override({"ROW_SUM_TOL": 1e-6}):
        Kernel(rows)
    assert tol.ROW_SUM_TOL == 1e-10


def test_override_rejects_unknown_or_nonpositive():
    with pytest.raises(KeyError):
        with tol.override({"NOPE": 1.0}):
            pass
    with pytest.raises(ValueError):
        with tol.override({"DRIFT_TOL": 0.0}):
            pass


def test_arrays_are_read_only():
    k = Kernel(P)
    with pytest.raises(ValueError):
        k.rows[0, 0] = 0.5


def test_measure_validation():
    with pytest.raises(ModelValidationError):
        ProbabilityMeasure([0.5, 0.6])
    with pytest.raises(ModelValidationError, match=r"measure\[1\]"):
        Measure([1.0, -0.1])
    with pytest.raises(ModelValidationError, match=r"V\[0\]"):
        Lyapunov([-1.0, 0.0])
    np.testing.assert_allclose(np.asarray(SignedMeasure([1.0, -2.0]).total_variation), [1.0, 2.0])


def test_state_labels():
    assert StateSpace(2, ["a", "b"]).labels == ("a", "b")
    with pytest.raises(ModelValidationError, match="duplicate"):
        StateSpace(2, ["a", "a"])
    with pytest.raises(ModelValidationError):
        StateSpace(3, ["a", "b"])


def test_family_lookup_and_power():
    fam = ParametricFamily([0.0, 0.5], (P, np.eye(2)), ([1.0, 2.0], [0.0, 0.0]))
    assert len(fam) == 2 and fam.n_states == 2
    assert fam.kernel_at(0.5) is fam.kernels[1]
    assert fam.kernel_at(0) is fam.kernels[0]
    np.testing.assert_allclose(np.asarray(fam.f_at(0.0)), [1.0, 2.0])
    with pytest.raises(KeyError):
        fam.kernel_at(0.25)
    np.testing.assert_allclose(np.asarray(fam.power(2).kernels[0]), P @ P)
    sub = fam.subfamily([1])
    assert len(sub) == 1 and sub.theta_grid[0, 0] == 0.5
    assert fam.grid_hash() == ParametricFamily([0.0, 0.5], (P, P)).grid_hash()
    assert fam.grid_hash() != ParametricFamily([0.0, 0.6], (P, P)).grid_hash()


def test_family_validation():
    with pytest.raises(ModelValidationError):
        ParametricFamily([0.0, 1.0], (P,))
    with pytest.raises(DimensionMismatch):
        ParametricFamily([0.0, 1.0], (P, np.eye(3)))
    with pytest.raises(DimensionMismatch):
        ParametricFamily([0.0], (P,), ([1.0, 2.0, 3.0],))


def test_theta_distance_is_euclidean():
    assert theta_distance([0.0, 0.0], [3.0, 4.0]) == 5.0
    assert theta_distance(0.2, 0.5) == pytest.approx(0.3)
