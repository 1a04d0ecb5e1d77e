"""Hamiltonian evaluation, stationarity residuals, pointwise checks, certificates."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsdegames import (
    CertificateOptions,
    ControlBox,
    ControlProcess,
    FbsdeConfig,
    build_certificate,
    certificate_as_dict,
    check_convexity,
    check_pointwise_min,
    control_gradient,
    eval_hamiltonian,
    lq_to_problem,
    solve_adjoint,
    solve_fbsde,
    vi_residual,
)
from fbsdegames.hamiltonian import CONVENTION_NOTE, _control_grid

from conftest import coupled_lq_spec, lattice, zero_spec


def _random_point(problem, S=6, seed=0):
    dims = problem.dims
    rng = np.random.default_rng(seed)
    return dict(
        t=0.4,
        x=rng.normal(size=(S, dims.n)),
        y=rng.normal(size=(S, dims.m)),
        z=rng.normal(size=(S, dims.m, dims.d)),
        u1=rng.normal(size=(S, dims.k1)),
        u2=rng.normal(size=(S, dims.k2)),
        p=rng.normal(size=(S, dims.n)),
        q=rng.normal(size=(S, dims.n, dims.d)),
        k=rng.normal(size=(S, dims.m)),
    )


def _fd_grad(problem, player, point, var, step=1e-6):
    base = dict(point)
    target = base[var]
    flat = target.reshape(target.shape[0], -1)
    cols = []
    for c in range(flat.shape[1]):
        for sign in (+1.0, -1.0):
            bumped = flat.copy()
            bumped[:, c] += sign * step
            base[var] = bumped.reshape(target.shape)
            hp = eval_hamiltonian(problem, player, **base)
            cols.append(hp.value)
    base[var] = target
    up = np.stack(cols[0::2], axis=1)
    dn = np.stack(cols[1::2], axis=1)
    return (up - dn) / (2.0 * step)


@pytest.mark.parametrize("player", [1, 2])
@pytest.mark.parametrize("var", ["x", "y", "z", "u1", "u2"])
def test_hamiltonian_gradients_match_finite_differences(player, var):
    problem = lq_to_problem(coupled_lq_spec())
    point = _random_point(problem, seed=17 + player)
    hp = eval_hamiltonian(problem, player, **point)
    claimed = getattr(hp, f"grad_{var}")
    claimed = claimed.reshape(claimed.shape[0], -1)
    fd = _fd_grad(problem, player, point, var)
    np.testing.assert_allclose(claimed, fd, rtol=1e-6, atol=1e-8)


def test_hamiltonian_value_assembles_inner_products():
    # with everything but p zeroed, H reduces to <p, b>
    problem = lq_to_problem(coupled_lq_spec())
    point = _random_point(problem, seed=3)
    point["q"] = np.zeros_like(point["q"])
    point["k"] = np.zeros_like(point["k"])
    zero_costs = dataclasses.replace(
        problem.costs,
        l1=lambda t, x, y, z, u1, u2: np.zeros(x.shape[0]),
    )
    stripped = dataclasses.replace(problem, costs=zero_costs)
    hp = eval_hamiltonian(stripped, 1, **point)
    b = problem.coefficients.b(
        point["t"], point["x"], point["y"], point["z"], point["u1"], point["u2"]
    )
    np.testing.assert_allclose(hp.value, np.einsum("sn,sn->s", point["p"], b), atol=1e-13)


def test_control_gradient_agrees_with_hamiltonian_point():
    backend = lattice(8)
    problem = lq_to_problem(coupled_lq_spec())
    u = ControlProcess.constant(problem, backend, 0.4, -0.3)
    traj, _ = solve_fbsde(problem, u, backend, FbsdeConfig(tol=1e-12))
    adj, _ = solve_adjoint(problem, traj, u, 1, backend)
    grads = control_gradient(problem, traj, adj, u, 1)
    j = 5
    hp = eval_hamiltonian(
        problem, 1, float(backend.grid.knots[j]),
        traj.x[j], traj.y[j], traj.z[j], u.u1[j], u.u2[j],
        adj.p[j], adj.q[j], adj.k[j],
    )
    np.testing.assert_allclose(grads[j], hp.grad_u1, atol=1e-13)


def _constant_gradient_problem(c: float):
    """Zero dynamics with l1 = c * u1, so H_1u1 = c identically."""
    spec = zero_spec()
    problem = lq_to_problem(spec)
    costs = dataclasses.replace(
        problem.costs,
        l1=lambda t, x, y, z, u1, u2: c * u1[:, 0],
        l1_u1=lambda t, x, y, z, u1, u2: np.full((u1.shape[0], 1), c),
    )
    return dataclasses.replace(problem, costs=costs)


def _vi_at(problem, backend, value1):
    u = ControlProcess.constant(problem, backend, value1, 0.0)
    traj, _ = solve_fbsde(problem, u, backend)
    adj1, _ = solve_adjoint(problem, traj, u, 1, backend)
    adj2, _ = solve_adjoint(problem, traj, u, 2, backend)
    return vi_residual(problem, traj, adj1, adj2, u)


def test_vi_interior_point_sees_full_gradient():
    problem = _constant_gradient_problem(0.5)
    vi = _vi_at(problem, lattice(4), 0.0)
    # interior u = 0 with gradient 0.5: residual is the whole step
    assert vi.rho1 == pytest.approx(0.5, abs=1e-12)
    assert vi.inner_min_1 < -1e-3  # some feasible direction decreases H
    assert vi.rho2 == 0.0


def test_vi_boundary_stationarity():
    problem = _constant_gradient_problem(0.5)
    vi = _vi_at(problem, lattice(4), -1.0)  # box is [-1, 1]
    assert vi.rho1 == pytest.approx(0.0, abs=1e-12)
    assert vi.inner_min_1 >= -1e-9  # positive gradient, u at lower bound
    assert vi.convention == CONVENTION_NOTE


def test_vi_invariant_to_constant_cost_shift():
    base = _constant_gradient_problem(0.5)
    l0 = base.costs.l1
    shifted_costs = dataclasses.replace(
        base.costs, l1=lambda t, x, y, z, u1, u2: l0(t, x, y, z, u1, u2) + 7.0
    )
    shifted = dataclasses.replace(base, costs=shifted_costs)
    a = _vi_at(base, lattice(4), 0.25)
    b = _vi_at(shifted, lattice(4), 0.25)
    assert a.rho1 == b.rho1
    assert a.inner_min_1 == b.inner_min_1


@given(
    u=st.floats(-1.0, 1.0),
    g=st.floats(-3.0, 3.0),
)
@settings(max_examples=300, deadline=None)
def test_projection_residual_iff_inner_condition(u, g):
    # classical equivalence on a box: |u - proj(u - g)| = 0 exactly when
    # <g, v - u> >= 0 for all v in the box
    box = ControlBox(np.array([-1.0]), np.array([1.0]))
    r = abs(u - box.project(np.array([u - g]))[0])
    inner_min = min(g * (v - u) for v in (-1.0, 1.0))
    if r < 1e-12:
        assert inner_min >= -1e-12
    else:
        assert inner_min < 0.0


def _solved_equilibrium(backend):
    from fbsdegames import GradientConfig, solve_nash

    problem = lq_to_problem(coupled_lq_spec())
    report = solve_nash(
        problem, backend,
        fbsde_config=FbsdeConfig(tol=1e-12),
        grad_config=GradientConfig(step=0.5, max_iterations=400, tolerance=1e-9),
    )
    assert report.converged
    return problem, report


def _resolve(problem, u, backend):
    traj, _ = solve_fbsde(problem, u, backend, FbsdeConfig(tol=1e-12))
    adj1, _ = solve_adjoint(problem, traj, u, 1, backend)
    adj2, _ = solve_adjoint(problem, traj, u, 2, backend)
    return traj, adj1, adj2


class TestPointwiseMin:
    def test_equilibrium_passes(self):
        backend = lattice(16)
        problem, report = _solved_equilibrium(backend)
        traj, adj1, _ = _resolve(problem, report.controls, backend)
        out = check_pointwise_min(
            problem, traj, adj1, report.controls, 1, grid_density=21, tol=1e-4
        )
        assert out.passed

    def test_shifted_control_is_beaten_on_grid(self):
        backend = lattice(16)
        problem, report = _solved_equilibrium(backend)
        shifted = report.controls.replace_player(
            1, tuple(a + 0.5 for a in report.controls.u1)
        )
        traj, adj1, _ = _resolve(problem, shifted, backend)
        out = check_pointwise_min(problem, traj, adj1, shifted, 1, grid_density=21)
        assert not out.passed
        # quadratic own-cost: a 0.5 shift leaves roughly N/2 * 0.25 on the table
        assert out.violation > 0.05
        assert out.best_alternative is not None

    def test_unbounded_box_needs_radius(self):
        box = ControlBox.unbounded(1)
        with pytest.raises(ValueError, match="radius"):
            _control_grid(box, 9, None)
        grid = _control_grid(box, 9, 2.0)
        assert grid.shape == (9, 1)
        assert grid.min() == -2.0 and grid.max() == 2.0


class TestConvexity:
    def test_parabola_not_refuted(self):
        rep = check_convexity(
            lambda v: (v**2).sum(axis=1),
            np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
            samples=300, seed=1, label="|v|^2",
        )
        assert rep.passed

    def test_concave_function_refuted_with_witness(self):
        rep = check_convexity(
            lambda v: -(v**2).sum(axis=1), np.array([-1.0]), np.array([1.0]),
            samples=300, seed=1, label="-|v|^2",
        )
        assert not rep.passed
        assert rep.violation > 0.0
        a, b = rep.witness_a, rep.witness_b
        mid = 0.5 * (a + b)
        lhs = -float(mid @ mid)
        rhs = 0.5 * (-float(a @ a) - float(b @ b))
        assert lhs > rhs  # the recorded pair really does violate midpoint convexity


class TestCertificate:
    def test_equilibrium_certified(self):
        backend = lattice(16)
        problem, report = _solved_equilibrium(backend)
        traj, adj1, adj2 = _resolve(problem, report.controls, backend)
        cert = build_certificate(
            problem, traj, (adj1, adj2), report.controls,
            CertificateOptions(grid_density=21, pointwise_tol=1e-4),
        )
        assert cert.verdict == "certified"
        assert CONVENTION_NOTE in cert.notes
        payload = certificate_as_dict(cert)
        assert payload["verdict"] == "certified"
        assert payload["player1"]["pointwise"]["passed"]

    def test_shifted_controls_refuted_with_stationarity_witness(self):
        backend = lattice(16)
        problem, report = _solved_equilibrium(backend)
        shifted = report.controls.replace_player(
            1, tuple(a + 0.5 for a in report.controls.u1)
        )
        traj, adj1, adj2 = _resolve(problem, shifted, backend)
        cert = build_certificate(
            problem, traj, (adj1, adj2), shifted,
            CertificateOptions(grid_density=21),
        )
        assert cert.verdict == "refuted"
        assert cert.witness is not None
        assert "player 1" in cert.witness

    def test_concave_control_cost_refuted_on_convexity(self):
        # H_1 = -u1^2/2 has its box minimum at the corner, so a corner
        # control passes the pointwise check and only convexity can fail
        spec = zero_spec()
        spec = dataclasses.replace(
            spec,
            cost1=dataclasses.replace(spec.cost1, N=np.array([[-1.0]])),
            u1_box=ControlBox(np.array([-2.0]), np.array([2.0])),
        )
        problem = lq_to_problem(spec)
        backend = lattice(12)
        u = ControlProcess.constant(problem, backend, 2.0, 0.0)
        traj, adj1, adj2 = _resolve(problem, u, backend)
        cert = build_certificate(
            problem, traj, (adj1, adj2), u, CertificateOptions(grid_density=15)
        )
        assert cert.verdict == "refuted"
        assert not cert.player1.hamiltonian_convexity[0].passed
        assert "convex" in (cert.witness or "")

    def test_unbounded_box_without_radius_is_inconclusive(self):
        spec = coupled_lq_spec()
        spec = dataclasses.replace(spec, u1_box=ControlBox.unbounded(1))
        problem = lq_to_problem(spec)
        backend = lattice(8)
        u = ControlProcess.constant(problem, backend, 0.0, 0.0)
        traj, adj1, adj2 = _resolve(problem, u, backend)
        cert = build_certificate(problem, traj, (adj1, adj2), u, CertificateOptions())
        assert cert.verdict in ("inconclusive", "refuted")
        if cert.verdict == "inconclusive":
            assert any("radius" in n or "unbounded" in n for n in cert.notes)
