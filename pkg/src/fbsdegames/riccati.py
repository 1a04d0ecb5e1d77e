"""Classic LQR reference solution used as an independent cross-check.

For dx = (A x + B u) dt + sigma dB with cost
E[ int (x'Qx + u'Ru)/2 dt + x(T)'G x(T)/2 ], the optimal control is the
linear feedback u(t) = -R^{-1} B' P(t) x(t) where P solves the matrix
Riccati equation

    -dP/dt = A'P + P A - P B R^{-1} B' P + Q,    P(T) = G.

Integration is fourth-order Runge-Kutta on a refined grid, numpy only.  The
module knows nothing about games, trees, or regression backends, which is
what makes it usable as an oracle against the general solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class RiccatiSolution:
    """P(t) sampled on uniform knots over [0, horizon], newest-to-oldest solved."""

    knots: Array
    values: Array  # (len(knots), n, n)
    control_weight: Array
    input_map: Array

    def gain(self, index: int) -> Array:
        """Feedback gain K(t_j) with u = -K x."""
        return np.linalg.solve(self.control_weight, self.input_map.T @ self.values[index])

    def feedback(self, index: int, x: Array) -> Array:
        """Optimal control at knot index for states x of shape (S, n)."""
        return -x @ self.gain(index).T


def solve_riccati(
    A: Array,
    B: Array,
    Q: Array,
    R: Array,
    G: Array,
    horizon: float,
    steps: int,
    refinement: int = 16,
) -> RiccatiSolution:
    """Integrate the Riccati equation backward, returning P at steps+1 knots.

    refinement sub-steps of RK4 are taken between consecutive knots, so the
    local error is O((dt/refinement)^5) and never limits a first-order
    comparison.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    G = np.asarray(G, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n) or G.shape != (n, n):
        raise ValueError("A, Q, G must be square and of equal size")
    k = B.shape[1]
    if B.shape != (n, k) or R.shape != (k, k):
        raise ValueError("B and R are inconsistent with the state size")
    if steps < 1 or refinement < 1:
        raise ValueError("steps and refinement must be >= 1")
    gain_core = B @ np.linalg.solve(R, B.T)

    def rhs(P: Array) -> Array:
        # dP/ds with s = horizon - t (forward in s)
        return A.T @ P + P @ A - P @ gain_core @ P + Q

    dt = horizon / steps
    h = dt / refinement
    values = np.empty((steps + 1, n, n))
    values[steps] = G
    P = G.copy()
    for j in range(steps, 0, -1):
        for _ in range(refinement):
            k1 = rhs(P)
            k2 = rhs(P + 0.5 * h * k1)
            k3 = rhs(P + 0.5 * h * k2)
            k4 = rhs(P + h * k3)
            P = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        values[j - 1] = P
    return RiccatiSolution(
        knots=np.linspace(0.0, horizon, steps + 1),
        values=values,
        control_weight=R,
        input_map=B,
    )


def predicted_cost(solution: RiccatiSolution, x0: Array, sigma: Array | None = None) -> float:
    """Optimal cost x0'P(0)x0 / 2 plus the additive-noise correction.

    sigma, when given, is the constant (n, d) diffusion; the correction is
    int tr(sigma' P sigma) dt / 2 by trapezoid over the stored knots.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    value = 0.5 * float(x0 @ solution.values[0] @ x0)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        traces = np.einsum("kc,jkl,lc->j", sigma, solution.values, sigma)
        value += 0.5 * float(np.trapezoid(traces, solution.knots))
    return value
