"""Time grid, Brownian scenario generation and conditional-expectation backends.

Two interchangeable backends drive every solver:

* ``LatticeBackend``: recombining binomial lattice (d = 1).  Level j holds
  j + 1 nodes; node (j, l) carries B = (2l - j) sqrt(dt) and the up/down
  transition has probability 1/2.  Conditional expectations are exact node
  averages, which makes the backend suitable for brute-force oracles.
* ``MonteCarloBackend``: a seeded path ensemble with least-squares
  regression onto a polynomial basis for conditional expectations.

Scenario-indexed processes are stored per step as arrays with a leading
scenario axis: lattice step j has j + 1 rows, Monte Carlo always P rows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Array = np.ndarray

GENERATOR_NAME = "philox4x64"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def knots(self) -> Array:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def _path_generator(seed: int, path: int) -> np.random.Generator:
    # stream keyed by (seed, path) only, immune to path count and scheduling
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(path)))


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian increments, one substream per path."""

    grid: TimeGrid
    increments: Array  # (N, P, d), read-only
    seed: int
    generator: str = GENERATOR_NAME

    @property
    def paths(self) -> int:
        return self.increments.shape[1]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    def cumulative(self) -> Array:
        """B values on the knots, shape (N + 1, P, d), B_0 = 0."""
        out = np.zeros((self.grid.steps + 1,) + self.increments.shape[1:])
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_ensemble(grid: TimeGrid, paths: int, d: int, seed: int) -> PathEnsemble:
    """Draw N(0, dt) increments; path p depends on (seed, p) only."""
    if paths < 1 or d < 1:
        raise ValueError("paths and d must be >= 1")
    scale = np.sqrt(grid.dt)
    inc = np.empty((grid.steps, paths, d))
    for p in range(paths):
        inc[:, p, :] = scale * _path_generator(seed, p).standard_normal((grid.steps, d))
    inc.setflags(write=False)
    return PathEnsemble(grid=grid, increments=inc, seed=int(seed))


@dataclass(frozen=True)
class BinomialLattice:
    """Node bookkeeping for the recombining tree."""

    grid: TimeGrid

    def node_count(self, j: int) -> int:
        return j + 1

    def brownian(self, j: int) -> Array:
        """Node B values at level j, shape (j + 1, 1)."""
        l = np.arange(j + 1, dtype=float)
        return ((2.0 * l - j) * np.sqrt(self.grid.dt))[:, None]

    def level_weights(self, j: int) -> Array:
        """Binomial(1/2) node probabilities at level j."""
        w = np.array([1.0])
        for _ in range(j):
            nxt = np.zeros(w.shape[0] + 1)
            nxt[1:] += 0.5 * w
            nxt[:-1] += 0.5 * w
            w = nxt
        return w


@dataclass(frozen=True)
class RegressionConfig:
    """Least-squares conditional expectation settings for Monte Carlo."""

    degree: int = 2
    include_y: bool = False
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if not 1 <= self.degree <= 4:
            raise ValueError("degree must be in 1..4")


def polynomial_design(regressors: Array, degree: int) -> Array:
    """All monomials of total degree <= degree, constant column first."""
    S, r = regressors.shape
    cols = [np.ones(S)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(r), deg):
            col = np.ones(S)
            for idx in combo:
                col = col * regressors[:, idx]
            cols.append(col)
    return np.stack(cols, axis=1)


def _lstsq_fit(design: Array, targets: Array, ridge: float) -> tuple[Array, bool]:
    """Fitted values of OLS with SVD; ridge fallback on rank deficiency."""
    coef, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank == design.shape[1]:
        return design @ coef, False
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    coef = np.linalg.solve(gram, design.T @ targets)
    return design @ coef, True


class LatticeBackend:
    """Exact recombining-lattice backend; requires d = 1."""

    kind = "lattice"

    def __init__(self, grid: TimeGrid):
        self.grid = grid
        self.d = 1
        self.lattice = BinomialLattice(grid)
        self._weights = [self.lattice.level_weights(j) for j in range(grid.steps + 1)]

    def scenario_count(self, j: int) -> int:
        return j + 1

    def brownian(self, j: int) -> Array:
        return self.lattice.brownian(j)

    def weights(self, j: int) -> Array:
        return self._weights[j]

    def expect(self, j: int, values: Array) -> Array:
        """Expectation over level-j nodes; works on any trailing shape."""
        return np.tensordot(self._weights[j], np.asarray(values), axes=(0, 0))

    def cond_exp(self, j: int, values_next: Array, regressors: Array | None = None):
        v = np.asarray(values_next)
        return 0.5 * (v[1:] + v[:-1]), False

    def cond_exp_increment(self, j: int, values_next: Array, regressors: Array | None = None):
        """E[V dB' | node], shape (j + 1, ..., 1)."""
        v = np.asarray(values_next)
        root_dt = np.sqrt(self.grid.dt)
        return (0.5 * root_dt * (v[1:] - v[:-1]))[..., None], False

    def step_forward(self, j: int, state: Array, drift: Array, diffusion: Array) -> Array:
        """Push a level-j node process one step with arrival-weighted recombination.

        Candidates x + drift dt +/- diffusion sqrt(dt) land on level j + 1;
        a node there averages its incoming edge values with the conditional
        arrival probabilities l'/(j+1) (up edge) and (j+1-l')/(j+1) (down).
        """
        dt = self.grid.dt
        root_dt = np.sqrt(dt)
        base = state + drift * dt
        up = base + diffusion[..., 0] * root_dt  # from node l to node l+1
        down = base - diffusion[..., 0] * root_dt  # from node l to node l
        out = np.zeros((j + 2,) + state.shape[1:])
        lprime = np.arange(j + 2, dtype=float).reshape((j + 2,) + (1,) * (state.ndim - 1))
        w_up = lprime / (j + 1)
        w_down = 1.0 - w_up
        out[1:] += w_up[1:] * up
        out[: j + 1] += w_down[: j + 1] * down
        return out


class MonteCarloBackend:
    """Path-ensemble backend with regression conditional expectations."""

    kind = "montecarlo"

    def __init__(self, ensemble: PathEnsemble, regression: RegressionConfig | None = None):
        self.grid = ensemble.grid
        self.ensemble = ensemble
        self.d = ensemble.d
        self.regression = regression or RegressionConfig()
        self._brownian = ensemble.cumulative()

    def scenario_count(self, j: int) -> int:
        return self.ensemble.paths

    def brownian(self, j: int) -> Array:
        return self._brownian[j]

    def weights(self, j: int) -> Array:
        P = self.ensemble.paths
        return np.full(P, 1.0 / P)

    def expect(self, j: int, values: Array) -> Array:
        return np.asarray(values).mean(axis=0)

    def _fit(self, values: Array, regressors: Array) -> tuple[Array, bool]:
        v = np.asarray(values)
        design = polynomial_design(regressors, self.regression.degree)
        flat = v.reshape(v.shape[0], -1)
        fitted, used_ridge = _lstsq_fit(design, flat, self.regression.ridge)
        return fitted.reshape(v.shape), used_ridge

    def cond_exp(self, j: int, values_next: Array, regressors: Array | None = None):
        if regressors is None:
            raise ValueError("Monte Carlo conditional expectation needs regressors")
        return self._fit(values_next, regressors)

    def cond_exp_increment(self, j: int, values_next: Array, regressors: Array | None = None):
        if regressors is None:
            raise ValueError("Monte Carlo conditional expectation needs regressors")
        v = np.asarray(values_next)
        db = self.ensemble.increments[j]  # (P, d)
        prod = v[..., None] * db.reshape((v.shape[0],) + (1,) * (v.ndim - 1) + (self.d,))
        return self._fit(prod, regressors)

    def step_forward(self, j: int, state: Array, drift: Array, diffusion: Array) -> Array:
        db = self.ensemble.increments[j]
        return state + drift * self.grid.dt + np.einsum("s...d,sd->s...", diffusion, db)


Backend = LatticeBackend | MonteCarloBackend


def conditional_expectation(
    backend: Backend, j: int, values_next: Array, regressors: Array | None = None
) -> Array:
    """E[values at step j+1 | info at step j] under the backend's scheme.

    Lattice: exact half-half average of the two successor nodes (regressors
    ignored).  Monte Carlo: fitted values of a least-squares projection onto
    monomials of the regressors up to the configured degree.
    """
    out, _ = backend.cond_exp(j, values_next, regressors)
    return out
