"""Matrix Riccati integrator against scalar closed forms."""

import numpy as np
import pytest

from fbsdegames import predicted_cost, solve_riccati

import reference_values as ref


def _scalar_solution(steps=128):
    return solve_riccati(
        A=np.array([[0.3]]), B=np.array([[1.0]]), Q=np.eye(1), R=np.eye(1),
        G=2.0 * np.eye(1), horizon=1.0, steps=steps,
    )


def test_initial_value_matches_logistic_closed_form():
    sol = _scalar_solution()
    assert sol.values[0][0, 0] == pytest.approx(ref.RICCATI_P0, rel=1e-12)


def test_terminal_condition_holds_exactly():
    sol = _scalar_solution()
    np.testing.assert_array_equal(sol.values[-1], 2.0 * np.eye(1))


def test_predicted_cost_matches_closed_form():
    sol = _scalar_solution()
    cost = predicted_cost(sol, np.array([1.0]), np.array([[0.2]]))
    # quadrature on 128 knots carries O(dt^2) error
    assert cost == pytest.approx(ref.RICCATI_COST, abs=5e-6)
    bare = predicted_cost(sol, np.array([1.0]))
    assert bare == pytest.approx(0.5 * ref.RICCATI_P0, rel=1e-12)


def test_without_control_reduces_to_linear_accumulation():
    # B = 0 makes dP/ds = Q constant in s = T - t: P(t) = G + Q (T - t)
    sol = solve_riccati(
        A=np.zeros((1, 1)), B=np.zeros((1, 1)), Q=np.eye(1), R=np.eye(1),
        G=np.eye(1), horizon=2.0, steps=16,
    )
    for i, t in enumerate(sol.knots):
        assert sol.values[i][0, 0] == pytest.approx(1.0 + (2.0 - t), rel=1e-12)


def test_values_stay_symmetric_in_matrix_case():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3))
    A = rng.normal(size=(3, 3)) * 0.3
    B = rng.normal(size=(3, 2))
    Q = M @ M.T + 0.1 * np.eye(3)
    G = 0.5 * np.eye(3)
    sol = solve_riccati(A=A, B=B, Q=Q, R=np.eye(2), G=G, horizon=1.0, steps=64)
    for P in sol.values[:: 16]:
        np.testing.assert_allclose(P, P.T, atol=1e-12)


def test_gain_and_feedback_are_consistent():
    sol = _scalar_solution()
    K0 = sol.gain(0)
    assert K0[0, 0] == pytest.approx(ref.RICCATI_P0, rel=1e-12)  # B = R = 1
    x = np.array([[2.0]])
    np.testing.assert_allclose(sol.feedback(0, x), -2.0 * K0[0, 0])


def test_shape_validation():
    with pytest.raises(ValueError):
        solve_riccati(
            A=np.zeros((2, 1)), B=np.zeros((2, 1)), Q=np.eye(2), R=np.eye(1),
            G=np.eye(2), horizon=1.0, steps=4,
        )
