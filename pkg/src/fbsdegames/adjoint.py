"""Per-player costate system along a solved trajectory.

For player i the costate triple (k, p, q) obeys, along a fixed state
trajectory and control pair,

    k[0]   = -dh_i/dy (y[0])
    k[j+1] = k[j] - G_y dt - G_z dB        (forward, explicit)
    p[N]   = dphi_i/dx (x[N])
    q[j]   = E[p[j+1] dB' | F_j] / dt
    p[j]   = E[p[j+1] | F_j] + G_x dt      (backward)

where G_v is the costate combination b_v' p + sigma_v' q - f_v' k + l_iv,
assembled here directly from the coefficient partials.  The same vectors are
exposed by the `hamiltonian` module as gradients of a scalar; the two builds
are kept independent so tests can cross-check them.

Because the combination is linear in (k, p, q), the damped pass-to-pass
iteration used by `solve_fbsde` applies unchanged and contracts geometrically
for moderate coupling.

`duality_residual` evaluates the discrete integration-by-parts identity that
links a costate solved at one control to the state perturbation induced by
another; the result decays at first order in dt and vanishes termwise when
the controls agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drivers import Backend
from .fbsde import (
    ControlProcess,
    FbsdeConfig,
    NonFiniteStateError,
    PicardDivergenceError,
    SolveDiagnostics,
    StateTrajectory,
    _update_metric,
)
from .problem import GameProblem

Array = np.ndarray


@dataclass(frozen=True)
class AdjointTrajectory:
    """Costate fields for one player: k, p on steps 0..N, q on 0..N-1."""

    player: int
    k: tuple[Array, ...]
    p: tuple[Array, ...]
    q: tuple[Array, ...]

    @property
    def steps(self) -> int:
        return len(self.p) - 1


def costate_combination(
    problem: GameProblem,
    player: int,
    var: str,
    t: float,
    x: Array,
    y: Array,
    z: Array,
    u1: Array,
    u2: Array,
    p: Array,
    q: Array,
    k: Array,
) -> Array:
    """b_v' p + sigma_v' q - f_v' k + l_iv for var v, shape (S, dim_v).

    sigma_v' q contracts each Brownian column's Jacobian with the matching
    column of q.  For var = "z" the result is flattened C-order like z.
    """
    co = problem.coefficients
    args = (t, x, y, z, u1, u2)
    out = np.einsum("sov,so->sv", getattr(co, f"b_{var}")(*args), p)
    out += np.einsum("scov,soc->sv", getattr(co, f"sigma_{var}")(*args), q)
    out -= np.einsum("sov,so->sv", getattr(co, f"f_{var}")(*args), k)
    out += problem.costs.running_grad(player, var)(*args)
    return out


def _forward_k(problem, traj, u, player, backend, ps, qs, k0) -> list[Array]:
    grid = backend.grid
    m = problem.dims.m
    ks = [k0]
    for j in range(grid.steps):
        t = float(grid.knots[j])
        state = (t, traj.x[j], traj.y[j], traj.z[j], u.u1[j], u.u2[j])
        gy = costate_combination(problem, player, "y", *state, ps[j], qs[j], ks[j])
        gz = costate_combination(problem, player, "z", *state, ps[j], qs[j], ks[j])
        diffusion = -gz.reshape(gz.shape[0], m, backend.d)
        nxt = backend.step_forward(j, ks[j], -gy, diffusion)
        if not np.all(np.isfinite(nxt)):
            bad = np.argwhere(~np.isfinite(nxt))
            raise NonFiniteStateError(step=j + 1, scenario=int(bad[0][0]))
        ks.append(nxt)
    return ks


def _backward_pq(problem, traj, u, player, backend, ks, p_terminal):
    grid = backend.grid
    N, dt = grid.steps, grid.dt
    regression = getattr(backend, "regression", None)
    include_y = regression is not None and regression.include_y
    ps: list[Array | None] = [None] * (N + 1)
    qs: list[Array | None] = [None] * N
    ps[N] = p_terminal
    ridge_events = 0
    for j in range(N - 1, -1, -1):
        regressors = traj.x[j]
        if include_y:
            regressors = np.concatenate([traj.x[j], traj.y[j]], axis=1)
        qv, r1 = backend.cond_exp_increment(j, ps[j + 1], regressors)
        q = qv / dt
        p_hat, r2 = backend.cond_exp(j, ps[j + 1], regressors)
        t = float(grid.knots[j])
        state = (t, traj.x[j], traj.y[j], traj.z[j], u.u1[j], u.u2[j])
        gx = costate_combination(problem, player, "x", *state, p_hat, q, ks[j])
        ps[j] = p_hat + gx * dt
        qs[j] = q
        ridge_events += int(r1) + int(r2)
    return ps, qs, ridge_events


def solve_adjoint(
    problem: GameProblem,
    traj: StateTrajectory,
    u: ControlProcess,
    player: int,
    backend: Backend,
    config: FbsdeConfig = FbsdeConfig(),
    initial=None,
) -> tuple[AdjointTrajectory, SolveDiagnostics]:
    """Solve the coupled costate pair for one player by damped iteration.

    The iterate is (p, q); k is rebuilt from it each pass and once more after
    convergence so the forward recursion holds at the returned triple.  The
    boundary values k[0] and p[N] are evaluated data, never iterated.
    `initial` warm-starts the pair with (ps, qs) from an earlier solve.
    """
    if player not in (1, 2):
        raise ValueError("player must be 1 or 2")
    grid = backend.grid
    N = grid.steps
    n, d = problem.dims.n, problem.dims.d
    p_terminal = np.asarray(problem.costs.terminal_grad(player)(traj.x[N]), dtype=float)
    k0 = -np.asarray(problem.costs.initial_grad(player)(traj.y[0]), dtype=float)
    if initial is not None:
        ps_in = [np.array(a, dtype=float) for a in initial[0]]
        qs_in = [np.array(a, dtype=float) for a in initial[1]]
    else:
        ps_in = [np.zeros((backend.scenario_count(j), n)) for j in range(N + 1)]
        qs_in = [np.zeros((backend.scenario_count(j), n, d)) for j in range(N)]
    ps_in[N] = p_terminal
    prev_p, prev_q = ps_in, qs_in
    theta = config.damping
    history: list[float] = []
    warnings: list[str] = []
    ridge_total = 0
    best = None
    converged = False
    ps_out = qs_out = None
    for it in range(1, config.max_picard + 1):
        ks = _forward_k(problem, traj, u, player, backend, ps_in, qs_in, k0)
        ps_out, qs_out, ridge = _backward_pq(problem, traj, u, player, backend, ks, p_terminal)
        ridge_total += ridge
        residual = _update_metric(backend, ps_out, qs_out, prev_p, prev_q)
        history.append(residual)
        if len(history) > 1 and residual > history[-2]:
            warnings.append(f"costate residual non-monotone at iteration {it}")
        if best is None or residual < best[0]:
            best = (residual, ps_out, qs_out)
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
        ps_in = [theta * new + (1.0 - theta) * old for new, old in zip(ps_out, ps_in)]
        qs_in = [theta * new + (1.0 - theta) * old for new, old in zip(qs_out, qs_in)]
        ps_in[N] = p_terminal
        prev_p, prev_q = ps_out, qs_out
    if not converged and best is not None:
        _, ps_out, qs_out = best
    ks = _forward_k(problem, traj, u, player, backend, ps_out, qs_out, k0)
    adj = AdjointTrajectory(player=player, k=tuple(ks), p=tuple(ps_out), q=tuple(qs_out))
    diagnostics = SolveDiagnostics(
        iterations=len(history),
        final_residual=history[-1] if history else 0.0,
        converged=converged,
        residual_history=tuple(history),
        ridge_fallbacks=ridge_total,
        warnings=tuple(warnings),
    )
    return adj, diagnostics


@dataclass(frozen=True)
class DualityReport:
    """Discrete integration-by-parts bookkeeping between two solved controls.

    forward_identity groups the terms whose continuous-time sum telescopes
    through <p, dx - dx_bar>; backward_identity does the same for
    <k, dy - dy_bar>.  Both tend to zero at first order in dt, hence so does
    residual = forward_identity - backward_identity.
    """

    residual: float
    dt: float
    scenario_count: int
    terminal_term: float
    initial_term: float
    integral_gx: float
    integral_gy: float
    integral_gz: float
    integral_pb: float
    integral_qsigma: float
    integral_kf: float

    @property
    def forward_identity(self) -> float:
        return self.terminal_term + self.integral_gx - self.integral_pb - self.integral_qsigma

    @property
    def backward_identity(self) -> float:
        return self.initial_term - self.integral_gy - self.integral_gz - self.integral_kf


def duality_residual(
    problem: GameProblem,
    traj: StateTrajectory,
    traj_bar: StateTrajectory,
    adj_bar: AdjointTrajectory,
    u: ControlProcess,
    u_bar: ControlProcess,
    backend: Backend,
) -> DualityReport:
    """Evaluate the discrete pairing of adj_bar against the (u - u_bar) deltas.

    Both trajectories must come from the same backend, initial state and
    terminal map.  Left-endpoint quadrature throughout; expectations use the
    backend's scenario weights.
    """
    grid = backend.grid
    N, dt = grid.steps, grid.dt
    if len(traj.x) != N + 1 or len(traj_bar.x) != N + 1:
        raise ValueError("trajectory length does not match the backend grid")
    for j in range(N + 1):
        if traj.x[j].shape != traj_bar.x[j].shape:
            raise ValueError(f"scenario mismatch between trajectories at step {j}")
    co = problem.coefficients
    player = adj_bar.player
    int_gx = int_gy = int_gz = int_pb = int_qs = int_kf = 0.0
    for j in range(N):
        t = float(grid.knots[j])
        dx = traj.x[j] - traj_bar.x[j]
        dy = traj.y[j] - traj_bar.y[j]
        dz = traj.z[j] - traj_bar.z[j]
        args = (t, traj.x[j], traj.y[j], traj.z[j], u.u1[j], u.u2[j])
        args_bar = (t, traj_bar.x[j], traj_bar.y[j], traj_bar.z[j], u_bar.u1[j], u_bar.u2[j])
        pb, qb, kb = adj_bar.p[j], adj_bar.q[j], adj_bar.k[j]
        gx = costate_combination(problem, player, "x", *args_bar, pb, qb, kb)
        gy = costate_combination(problem, player, "y", *args_bar, pb, qb, kb)
        gz = costate_combination(problem, player, "z", *args_bar, pb, qb, kb)
        gz_mat = gz.reshape(gz.shape[0], problem.dims.m, backend.d)
        db = co.b(*args) - co.b(*args_bar)
        dsigma = co.sigma(*args) - co.sigma(*args_bar)
        df = co.f(*args) - co.f(*args_bar)
        int_gx += dt * float(backend.expect(j, np.einsum("sv,sv->s", gx, dx)))
        int_gy += dt * float(backend.expect(j, np.einsum("sv,sv->s", gy, dy)))
        int_gz += dt * float(backend.expect(j, np.einsum("svc,svc->s", gz_mat, dz)))
        int_pb += dt * float(backend.expect(j, np.einsum("sv,sv->s", pb, db)))
        int_qs += dt * float(backend.expect(j, np.einsum("svc,svc->s", qb, dsigma)))
        int_kf += dt * float(backend.expect(j, np.einsum("sv,sv->s", kb, df)))
    dx_T = traj.x[N] - traj_bar.x[N]
    dy_0 = traj.y[0] - traj_bar.y[0]
    terminal = float(backend.expect(N, np.einsum("sv,sv->s", adj_bar.p[N], dx_T)))
    initial = float(backend.expect(0, np.einsum("sv,sv->s", adj_bar.k[0], dy_0)))
    residual = (
        terminal
        - initial
        + int_gx
        + int_gy
        + int_gz
        - (int_pb + int_qs - int_kf)
    )
    return DualityReport(
        residual=residual,
        dt=dt,
        scenario_count=backend.scenario_count(N),
        terminal_term=terminal,
        initial_term=initial,
        integral_gx=int_gx,
        integral_gy=int_gy,
        integral_gz=int_gz,
        integral_pb=int_pb,
        integral_qsigma=int_qs,
        integral_kf=int_kf,
    )
