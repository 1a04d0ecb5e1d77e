"""Discrete solver for the coupled forward-backward state system.

Forward half (explicit Euler, per scenario):

    x[j+1] = x[j] + b(t_j, x[j], y[j], z[j], u[j]) dt + sigma(...) dB[j]

Backward half (conditional-expectation recursion from y[N] = xi(B_T)):

    z[j] = E[y[j+1] dB[j]' | F_j] / dt
    y[j] = E[y[j+1] | F_j] + f(t_j, x[j], E[y[j+1] | F_j], z[j], u[j]) dt

``solve_fbsde`` couples the two halves by damped Picard iteration on the
backward pair (y, z) and finishes with one forward pass at the converged
pair, so the returned trajectory satisfies the forward recursion exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drivers import Backend
from .problem import GameProblem

Array = np.ndarray


class NonFiniteStateError(RuntimeError):
    """Forward pass produced a non-finite state value."""

    def __init__(self, step: int, scenario: int):
        super().__init__(f"non-finite state at step {step}, scenario {scenario}")
        self.step = step
        self.scenario = scenario


class PicardDivergenceError(RuntimeError):
    """Fixed-point residual grew beyond 10x its initial value."""

    def __init__(self, diagnostics: "SolveDiagnostics"):
        super().__init__(
            f"Picard iteration diverged after {diagnostics.iterations} iterations "
            f"(residual {diagnostics.final_residual:.3e})"
        )
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class FbsdeConfig:
    """Picard controls: damping theta in (0, 1], sup-over-time mean-square tol."""

    max_picard: int = 50
    damping: float = 0.5
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        if self.max_picard < 1:
            raise ValueError("max_picard must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    final_residual: float
    converged: bool
    residual_history: tuple[float, ...]
    ridge_fallbacks: int = 0
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ControlProcess:
    """Adapted controls, one array of shape (S_j, k_i) per step j = 0..N-1."""

    u1: tuple[Array, ...]
    u2: tuple[Array, ...]

    @classmethod
    def constant(cls, problem: GameProblem, backend: Backend, value1, value2) -> "ControlProcess":
        v1 = np.atleast_1d(np.asarray(value1, dtype=float))
        v2 = np.atleast_1d(np.asarray(value2, dtype=float))
        N = backend.grid.steps
        u1 = tuple(np.tile(v1, (backend.scenario_count(j), 1)) for j in range(N))
        u2 = tuple(np.tile(v2, (backend.scenario_count(j), 1)) for j in range(N))
        return cls(u1=u1, u2=u2)

    @classmethod
    def midpoint(cls, problem: GameProblem, backend: Backend) -> "ControlProcess":
        return cls.constant(
            problem, backend, problem.u1_box.midpoint(), problem.u2_box.midpoint()
        )

    def player(self, i: int) -> tuple[Array, ...]:
        return self.u1 if i == 1 else self.u2

    def replace_player(self, i: int, arrays) -> "ControlProcess":
        arrays = tuple(arrays)
        if i == 1:
            return ControlProcess(u1=arrays, u2=self.u2)
        return ControlProcess(u1=self.u1, u2=arrays)

    @property
    def steps(self) -> int:
        return len(self.u1)


@dataclass(frozen=True)
class StateTrajectory:
    """Solved (x, y, z) fields plus the backend that produced them.

    x and y live on steps 0..N, z on 0..N-1.
    """

    x: tuple[Array, ...]
    y: tuple[Array, ...]
    z: tuple[Array, ...]
    backend: Backend

    @property
    def steps(self) -> int:
        return len(self.x) - 1


def _zero_backward(problem: GameProblem, backend: Backend):
    N = backend.grid.steps
    m, d = problem.dims.m, problem.dims.d
    ys = [np.zeros((backend.scenario_count(j), m)) for j in range(N + 1)]
    zs = [np.zeros((backend.scenario_count(j), m, d)) for j in range(N)]
    return ys, zs


def forward_pass(
    problem: GameProblem,
    u: ControlProcess,
    ys,
    zs,
    backend: Backend,
) -> list[Array]:
    """Explicit Euler for x given the current backward guess. Raises on non-finite."""
    grid = backend.grid
    knots = grid.knots
    xs = [np.broadcast_to(problem.initial, (backend.scenario_count(0), problem.dims.n)).copy()]
    co = problem.coefficients
    for j in range(grid.steps):
        t = float(knots[j])
        x, y, z = xs[j], ys[j], zs[j]
        drift = co.b(t, x, y, z, u.u1[j], u.u2[j])
        diffusion = co.sigma(t, x, y, z, u.u1[j], u.u2[j])
        nxt = backend.step_forward(j, x, drift, diffusion)
        if not np.all(np.isfinite(nxt)):
            bad = np.argwhere(~np.isfinite(nxt))
            raise NonFiniteStateError(step=j + 1, scenario=int(bad[0][0]))
        xs.append(nxt)
    return xs


def backward_pass(
    problem: GameProblem,
    u: ControlProcess,
    xs,
    backend: Backend,
    y_guess=None,
) -> tuple[list[Array], list[Array], int]:
    """Conditional-expectation recursion for (y, z) given x.

    The driver is applied explicitly at E[y[j+1] | F_j].  Returns the pair
    plus the number of steps where regression fell back to ridge.
    """
    grid = backend.grid
    N = grid.steps
    dt = grid.dt
    co = problem.coefficients
    include_y = getattr(backend, "regression", None) is not None and backend.regression.include_y
    ys: list[Array | None] = [None] * (N + 1)
    zs: list[Array | None] = [None] * N
    ys[N] = np.asarray(problem.terminal.xi(backend.brownian(N)), dtype=float)
    ridge_events = 0
    for j in range(N - 1, -1, -1):
        regressors = xs[j]
        if include_y and y_guess is not None:
            regressors = np.concatenate([xs[j], y_guess[j]], axis=1)
        zvals, r1 = backend.cond_exp_increment(j, ys[j + 1], regressors)
        z = zvals / dt
        yhat, r2 = backend.cond_exp(j, ys[j + 1], regressors)
        t = float(grid.knots[j])
        y = yhat + co.f(t, xs[j], yhat, z, u.u1[j], u.u2[j]) * dt
        ys[j] = y
        zs[j] = z
        ridge_events += int(r1) + int(r2)
    return ys, zs, ridge_events


def _update_metric(backend: Backend, ys_new, zs_new, ys_old, zs_old) -> float:
    """Sup over time of the scenario-mean squared update of (y, z)."""
    worst = 0.0
    N = len(zs_new)
    for j in range(N + 1):
        dy = ys_new[j] - ys_old[j]
        total = np.einsum("sk,sk->s", dy, dy)
        if j < N:
            dz = (zs_new[j] - zs_old[j]).reshape(dy.shape[0], -1)
            total = total + np.einsum("sk,sk->s", dz, dz)
        worst = max(worst, float(backend.expect(j, total)))
    return worst


def solve_fbsde(
    problem: GameProblem,
    u: ControlProcess,
    backend: Backend,
    config: FbsdeConfig = FbsdeConfig(),
    initial=None,
) -> tuple[StateTrajectory, SolveDiagnostics]:
    """Damped Picard iteration until the (y, z) pass output stabilizes.

    `initial` warm-starts the backward pair with (ys, zs) from an earlier
    solve.  Divergence (residual above 10x its first value) raises
    PicardDivergenceError; hitting max_picard returns the best iterate with
    converged = False.
    """
    if initial is not None:
        ys_in = [np.array(a, dtype=float) for a in initial[0]]
        zs_in = [np.array(a, dtype=float) for a in initial[1]]
    else:
        ys_in, zs_in = _zero_backward(problem, backend)
    prev_y, prev_z = ys_in, zs_in
    theta = config.damping
    history: list[float] = []
    warnings: list[str] = []
    ridge_total = 0
    best: tuple[float, list, list, list] | None = None
    converged = False
    xs = ys_out = zs_out = None
    for it in range(1, config.max_picard + 1):
        xs = forward_pass(problem, u, ys_in, zs_in, backend)
        ys_out, zs_out, ridge = backward_pass(problem, u, xs, backend, y_guess=ys_in)
        ridge_total += ridge
        residual = _update_metric(backend, ys_out, zs_out, prev_y, prev_z)
        history.append(residual)
        if len(history) > 1 and residual > history[-2]:
            warnings.append(f"picard residual non-monotone at iteration {it}")
        if best is None or residual < best[0]:
            best = (residual, xs, ys_out, zs_out)
        if residual <= config.tol:
            converged = True
            break
        if history[0] > 0.0 and residual > 10.0 * history[0]:
            diag = SolveDiagnostics(
                iterations=it,
                final_residual=residual,
                converged=False,
                residual_history=tuple(history),
                ridge_fallbacks=ridge_total,
                warnings=tuple(warnings),
            )
            raise PicardDivergenceError(diag)
        ys_in = [theta * new + (1.0 - theta) * old for new, old in zip(ys_out, ys_in)]
        zs_in = [theta * new + (1.0 - theta) * old for new, old in zip(zs_out, zs_in)]
        prev_y, prev_z = ys_out, zs_out
    if not converged and best is not None:
        _, xs, ys_out, zs_out = best
    # one more forward sweep so the forward recursion holds at the returned pair
    xs = forward_pass(problem, u, ys_out, zs_out, backend)
    traj = StateTrajectory(x=tuple(xs), y=tuple(ys_out), z=tuple(zs_out), backend=backend)
    diagnostics = SolveDiagnostics(
        iterations=len(history),
        final_residual=history[-1] if history else 0.0,
        converged=converged,
        residual_history=tuple(history),
        ridge_fallbacks=ridge_total,
        warnings=tuple(warnings),
    )
    return traj, diagnostics
