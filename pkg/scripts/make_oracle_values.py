"""Closed-form reference values frozen into the test suite.

Everything here is derived with pencil-and-paper formulas plus plain
arithmetic, never by calling the package, so the numbers are independent
of the code under test.  Run it to regenerate the block pasted into
tests/reference_values.py.
"""

import math

# --- backward recursion for dy = -alpha*y dt, y(T) = c -------------------
# One explicit backward step multiplies by (1 + alpha*dt), so the solver
# must return exactly c*(1 + alpha*T/N)^N at the root; the continuous
# value is c*exp(alpha*T).
ALPHA, C, T = 0.5, 1.0, 1.0


def discrete_y0(steps: int) -> float:
    return C * (1.0 + ALPHA * T / steps) ** steps


# --- scalar Riccati with B=1, R=1 ------------------------------------------
# P' = P^2 - 2AP - Q has fixed points P± = A ± sqrt(A^2 + Q); the exact
# solution through P(T) = G is a logistic curve in e^{Δt}, Δ = P+ - P-.


def riccati_closed_form(a: float, q: float, g: float,
                        sigma: float, x0: float) -> tuple[float, float]:
    root = math.sqrt(a * a + q)
    p_plus, p_minus = a + root, a - root
    delta = p_plus - p_minus
    c = (g - p_plus) / (g - p_minus) * math.exp(-delta * T)

    def p_of(t: float) -> float:
        e = c * math.exp(delta * t)
        return (p_plus - p_minus * e) / (1.0 - e)

    p0 = p_of(0.0)
    # P = P+ - d/dt log(1 - c e^{Δt}), so the integral telescopes:
    integral = p_plus * T + math.log((1.0 - c) / (1.0 - c * math.exp(delta * T)))
    cost = 0.5 * x0 * x0 * p0 + 0.5 * sigma * sigma * integral
    return p0, cost


def main() -> None:
    print("# generated by scripts/make_oracle_values.py; do not edit by hand")
    print(f"EXP_HALF = {math.exp(0.5)!r}")
    print(f"Y0_LATTICE_256 = {discrete_y0(256)!r}")
    print(f"Y0_LATTICE_512 = {discrete_y0(512)!r}")
    err256 = abs(discrete_y0(256) - math.exp(0.5)) / math.exp(0.5)
    err512 = abs(discrete_y0(512) - math.exp(0.5)) / math.exp(0.5)
    print(f"# rel errors: {err256:.6e} at N=256, {err512:.6e} at N=512, "
          f"ratio {err256 / err512:.4f}")
    # steeper instance used by the ODE-module and CLI tests
    p0, cost = riccati_closed_form(a=0.3, q=1.0, g=2.0, sigma=0.2, x0=1.0)
    print(f"RICCATI_P0 = {p0!r}")
    print(f"RICCATI_COST = {cost!r}")
    # gentle instance used for the lattice-against-feedback comparison
    p0, cost = riccati_closed_form(a=0.2, q=0.1, g=0.5, sigma=0.2, x0=1.0)
    print(f"MILD_RICCATI_P0 = {p0!r}")
    print(f"MILD_RICCATI_COST = {cost!r}")


if __name__ == "__main__":
    main()
