"""Command-line runner: solve / verify / oracle / check on JSON configs.

Config layout (all matrices are nested lists; every omitted block defaults
to zeros or to the documented defaults; unknown keys are rejected):

    {
      "name": "demo",                       optional label
      "seed": 0,                            u64, Monte Carlo substream key
      "horizon": 1.0, "steps": 64,
      "dims": {"n":1, "m":1, "d":1, "k1":1, "k2":1},
      "backend": {"kind":"lattice"} |
                 {"kind":"montecarlo", "paths":4096,
                  "regression":{"degree":2, "include_y":false, "ridge":1e-8}},
      "initial": [1.0],
      "terminal": {"constant":[0.0], "linear":[[0.0]]},      linear optional
      "drift"|"driver": {"A":..,"B":..,"C":..,"D1":..,"D2":..,"const":..},
      "diffusion": [affine, ...],           one block per Brownian column
      "cost1"|"cost2": {"Q":..,"R":..,"S":0.0,"N":..,"M":..,"G":..,"H":..},
      "box1"|"box2": {"radius":2.0} | {"lower":[..],"upper":[..]} | "unbounded",
      "fbsde": {"max_picard":50,"damping":0.5,"tol":1e-8},
      "gradient": {"step":0.1,"max_iterations":500,"tolerance":1e-6,
                   "mode":"simultaneous","max_halvings":20,"stall_limit":50},
      "certificate": {"radius":null,"grid_density":33,"pointwise_tol":1e-8,
                      "convexity_samples":400,"convexity_tol":1e-9,
                      "anchors":4,"sample_radius":3.0,"seed":0},
      "oracle": {"grid1":{"points":5}|{"values":[[..]]}, "grid2":...,
                 "budget":1000000, "max_rounds":50, "riccati":false},
      "check": {"samples":120,"probe_radius":null,"corrupt":null}
    }

Outputs are deterministic byte-for-byte for a fixed config and seed: wall
time goes to stdout only, never into a file, and --threads influences
nothing but scheduling.  CSV floats carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import AdjointTrajectory, solve_adjoint
from .drivers import (
    GENERATOR_NAME,
    Backend,
    LatticeBackend,
    MonteCarloBackend,
    RegressionConfig,
    TimeGrid,
    sample_ensemble,
)
from .equilibrium import (
    BudgetExceededError,
    EquilibriumReport,
    GradientConfig,
    NonConvergenceError,
    brute_force_nash,
    solve_nash,
)
from .fbsde import (
    ControlProcess,
    FbsdeConfig,
    PicardDivergenceError,
    solve_fbsde,
)
from .hamiltonian import (
    CertificateOptions,
    build_certificate,
    certificate_as_dict,
    vi_residual,
)
from .lq import AffineMap, LQGameSpec, QuadraticCost, lq_to_problem
from .problem import ControlBox, Dims, GameProblem, validate_problem
from .riccati import predicted_cost, solve_riccati

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_REFUTED = 2
EXIT_INCONCLUSIVE = 3
EXIT_CONFIG = 64
EXIT_BUDGET = 65


class ConfigError(ValueError):
    """Config rejected; `where` is the dotted field path."""

    def __init__(self, where: str, message: str):
        super().__init__(f"config error at '{where}': {message}")
        self.where = where


# ---------------------------------------------------------------------------
# schema helpers
# ---------------------------------------------------------------------------


def _require_mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(where, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(obj: dict, where: str, allowed: set[str]) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _as_int(value, where: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(where, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(where, f"must be <= {maximum}, got {value}")
    return value


def _as_float(value, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    out = float(value)
    if positive and not out > 0.0:
        raise ConfigError(where, f"must be positive, got {out}")
    return out


def _as_bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(where, f"expected true/false, got {value!r}")
    return value


def _as_str(value, where: str, choices: tuple[str, ...] | None = None) -> str:
    if not isinstance(value, str):
        raise ConfigError(where, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(where, f"expected one of {list(choices)}, got {value!r}")
    return value


def _as_array(value, shape: tuple[int, ...], where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(where, "expected a numeric array") from None
    if arr.shape != shape:
        raise ConfigError(where, f"expected shape {list(shape)}, got {list(arr.shape)}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ConfigError(where, "entries must be finite")
    return arr


# ---------------------------------------------------------------------------
# config model
# ---------------------------------------------------------------------------


@dataclass
class OracleOptions:
    grid1: np.ndarray
    grid2: np.ndarray
    budget: int
    max_rounds: int
    riccati: bool


@dataclass
class CheckOptions:
    samples: int
    probe_radius: float | None
    corrupt: str | None


@dataclass
class RunConfig:
    name: str
    seed: int
    horizon: float
    steps: int
    dims: Dims
    backend_kind: str
    paths: int
    regression: RegressionConfig
    spec: LQGameSpec
    problem: GameProblem
    fbsde: FbsdeConfig
    gradient: GradientConfig
    certificate: CertificateOptions
    oracle: OracleOptions | None
    check: CheckOptions
    echo: dict


def _parse_affine(obj, dims: Dims, rows: int, where: str) -> AffineMap:
    if obj is None:
        return AffineMap.zeros(rows, dims)
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, where, {"A", "B", "C", "D1", "D2", "const"})
    base = AffineMap.zeros(rows, dims)
    shapes = {
        "A": (rows, dims.n),
        "B": (rows, dims.m),
        "C": (rows, dims.dz),
        "D1": (rows, dims.k1),
        "D2": (rows, dims.k2),
        "const": (rows,),
    }
    fields = {}
    for key, shape in shapes.items():
        if key in obj:
            fields[key] = _as_array(obj[key], shape, f"{where}.{key}")
        else:
            fields[key] = getattr(base, key)
    return AffineMap(**fields)


def _parse_cost(obj, dims: Dims, own: int, other: int, where: str) -> QuadraticCost:
    base = QuadraticCost.zeros(dims, own, other)
    if obj is None:
        return base
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, where, {"Q", "R", "S", "N", "M", "G", "H"})
    shapes = {
        "Q": (dims.n, dims.n),
        "R": (dims.m, dims.m),
        "N": (own, own),
        "M": (other, other),
        "G": (dims.n, dims.n),
        "H": (dims.m, dims.m),
    }
    fields = {}
    for key, shape in shapes.items():
        if key in obj:
            fields[key] = _as_array(obj[key], shape, f"{where}.{key}")
        else:
            fields[key] = getattr(base, key)
    fields["S"] = _as_float(obj.get("S", 0.0), f"{where}.S")
    return QuadraticCost(**fields)


def _parse_box(obj, k: int, where: str) -> ControlBox:
    if obj is None or obj == "unbounded":
        return ControlBox.unbounded(k)
    obj = _require_mapping(obj, where)
    if "radius" in obj:
        _reject_unknown(obj, where, {"radius"})
        return ControlBox.symmetric(k, _as_float(obj["radius"], f"{where}.radius", positive=True))
    _reject_unknown(obj, where, {"lower", "upper"})
    if "lower" not in obj or "upper" not in obj:
        raise ConfigError(where, "expected both 'lower' and 'upper' (or 'radius')")
    lower = _as_array(obj["lower"], (k,), f"{where}.lower")
    upper = _as_array(obj["upper"], (k,), f"{where}.upper")
    if np.any(lower > upper):
        raise ConfigError(where, "lower bound exceeds upper bound")
    return ControlBox(lower, upper)


def _parse_grid(obj, box: ControlBox, k: int, where: str) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0))
    if obj is None:
        obj = {"points": 5}
    obj = _require_mapping(obj, where)
    if "values" in obj:
        _reject_unknown(obj, where, {"values"})
        values = np.asarray(obj["values"], dtype=float)
        if values.ndim != 2 or values.shape[1] != k:
            raise ConfigError(f"{where}.values", f"expected shape [G, {k}]")
        return values
    _reject_unknown(obj, where, {"points", "lower", "upper"})
    points = _as_int(obj.get("points", 5), f"{where}.points", minimum=2)
    if "lower" in obj or "upper" in obj:
        if "lower" not in obj or "upper" not in obj:
            raise ConfigError(where, "give both 'lower' and 'upper' or neither")
        lower = _as_array(obj["lower"], (k,), f"{where}.lower")
        upper = _as_array(obj["upper"], (k,), f"{where}.upper")
    else:
        lower, upper = box.lower, box.upper
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigError(where, "unbounded box: grid needs explicit 'lower'/'upper'")
    axes = [np.linspace(lower[c], upper[c], points) for c in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


_CORRUPTIBLE = (
    {f"{fn}_{v}" for fn in ("b", "sigma", "f") for v in ("x", "y", "z", "u1", "u2")}
    | {f"l{i}_{v}" for i in (1, 2) for v in ("x", "y", "z", "u1", "u2")}
    | {"phi1_x", "phi2_x", "h1_y", "h2_y"}
)


def _corrupt_problem(problem: GameProblem, target: str) -> GameProblem:
    """Test hook: add a constant 0.05 to one partial so checks must fail."""

    def tilt(fn):
        def wrapped(*args, _fn=fn):
            return _fn(*args) + 0.05

        return wrapped

    co_fields = {f.name for f in dataclasses.fields(problem.coefficients)}
    cost_fields = {f.name for f in dataclasses.fields(problem.costs)}
    if target in co_fields:
        coefficients = dataclasses.replace(
            problem.coefficients, **{target: tilt(getattr(problem.coefficients, target))}
        )
        return dataclasses.replace(problem, coefficients=coefficients)
    if target in cost_fields:
        costs = dataclasses.replace(problem.costs, **{target: tilt(getattr(problem.costs, target))})
        return dataclasses.replace(problem, costs=costs)
    raise ConfigError("check.corrupt", f"unknown derivative name {target!r}")


_TOP_KEYS = {
    "name", "seed", "horizon", "steps", "dims", "backend", "initial", "terminal",
    "drift", "diffusion", "driver", "cost1", "cost2", "box1", "box2",
    "fbsde", "gradient", "certificate", "oracle", "check",
}


def parse_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    raw = _require_mapping(raw, "")
    _reject_unknown(raw, "", _TOP_KEYS)
    name = _as_str(raw.get("name", "run"), "name")
    seed = _as_int(raw.get("seed", 0), "seed", minimum=0, maximum=2**64 - 1)
    if seed_override is not None:
        seed = seed_override
    horizon = _as_float(raw.get("horizon", 1.0), "horizon", positive=True)
    steps = _as_int(raw.get("steps", 64), "steps", minimum=1)

    dobj = _require_mapping(raw.get("dims", {"n": 1, "m": 1, "d": 1, "k1": 1, "k2": 1}), "dims")
    _reject_unknown(dobj, "dims", {"n", "m", "d", "k1", "k2"})
    dims = Dims(
        n=_as_int(dobj.get("n", 1), "dims.n", minimum=1),
        m=_as_int(dobj.get("m", 1), "dims.m", minimum=1),
        d=_as_int(dobj.get("d", 1), "dims.d", minimum=1),
        k1=_as_int(dobj.get("k1", 1), "dims.k1", minimum=0),
        k2=_as_int(dobj.get("k2", 1), "dims.k2", minimum=0),
    )

    bobj = _require_mapping(raw.get("backend", {"kind": "lattice"}), "backend")
    kind = _as_str(bobj.get("kind"), "backend.kind", choices=("lattice", "montecarlo"))
    paths = 0
    regression = RegressionConfig()
    if kind == "lattice":
        _reject_unknown(bobj, "backend", {"kind"})
        if dims.d != 1:
            raise ConfigError("backend.kind", "the lattice backend supports d = 1 only")
    else:
        _reject_unknown(bobj, "backend", {"kind", "paths", "regression"})
        paths = _as_int(bobj.get("paths", 4096), "backend.paths", minimum=2)
        robj = _require_mapping(bobj.get("regression", {}), "backend.regression")
        _reject_unknown(robj, "backend.regression", {"degree", "include_y", "ridge"})
        regression = RegressionConfig(
            degree=_as_int(robj.get("degree", 2), "backend.regression.degree", minimum=1, maximum=4),
            include_y=_as_bool(robj.get("include_y", False), "backend.regression.include_y"),
            ridge=_as_float(robj.get("ridge", 1e-8), "backend.regression.ridge", positive=True),
        )

    initial = _as_array(raw.get("initial", [0.0] * dims.n), (dims.n,), "initial")
    tobj = _require_mapping(raw.get("terminal", {"constant": [0.0] * dims.m}), "terminal")
    _reject_unknown(tobj, "terminal", {"constant", "linear"})
    xi = _as_array(tobj.get("constant", [0.0] * dims.m), (dims.m,), "terminal.constant")
    xi_linear = None
    if tobj.get("linear") is not None:
        xi_linear = _as_array(tobj["linear"], (dims.m, dims.d), "terminal.linear")

    diffusion_raw = raw.get("diffusion")
    if diffusion_raw is None:
        diffusion = tuple(AffineMap.zeros(dims.n, dims) for _ in range(dims.d))
    else:
        if not isinstance(diffusion_raw, list) or len(diffusion_raw) != dims.d:
            raise ConfigError("diffusion", f"expected a list of {dims.d} affine blocks")
        diffusion = tuple(
            _parse_affine(entry, dims, dims.n, f"diffusion[{i}]")
            for i, entry in enumerate(diffusion_raw)
        )

    box1 = _parse_box(raw.get("box1"), dims.k1, "box1")
    box2 = _parse_box(raw.get("box2"), dims.k2, "box2")
    spec = LQGameSpec(
        dims=dims,
        horizon=horizon,
        initial=initial,
        xi=xi,
        xi_linear=xi_linear,
        drift=_parse_affine(raw.get("drift"), dims, dims.n, "drift"),
        diffusion=diffusion,
        driver=_parse_affine(raw.get("driver"), dims, dims.m, "driver"),
        cost1=_parse_cost(raw.get("cost1"), dims, dims.k1, dims.k2, "cost1"),
        cost2=_parse_cost(raw.get("cost2"), dims, dims.k2, dims.k1, "cost2"),
        u1_box=box1,
        u2_box=box2,
    )
    problem = lq_to_problem(spec)

    fobj = _require_mapping(raw.get("fbsde", {}), "fbsde")
    _reject_unknown(fobj, "fbsde", {"max_picard", "damping", "tol"})
    damping = _as_float(fobj.get("damping", 0.5), "fbsde.damping", positive=True)
    if damping > 1.0:
        raise ConfigError("fbsde.damping", f"must be in (0, 1], got {damping}")
    fbsde = FbsdeConfig(
        max_picard=_as_int(fobj.get("max_picard", 50), "fbsde.max_picard", minimum=1),
        damping=damping,
        tol=_as_float(fobj.get("tol", 1e-8), "fbsde.tol", positive=True),
    )

    gobj = _require_mapping(raw.get("gradient", {}), "gradient")
    _reject_unknown(
        gobj, "gradient",
        {"step", "max_iterations", "tolerance", "mode", "max_halvings", "stall_limit"},
    )
    gradient = GradientConfig(
        step=_as_float(gobj.get("step", 0.1), "gradient.step", positive=True),
        max_iterations=_as_int(gobj.get("max_iterations", 500), "gradient.max_iterations", minimum=1),
        tolerance=_as_float(gobj.get("tolerance", 1e-6), "gradient.tolerance", positive=True),
        mode=_as_str(
            gobj.get("mode", "simultaneous"), "gradient.mode",
            choices=("simultaneous", "best-response"),
        ),
        max_halvings=_as_int(gobj.get("max_halvings", 20), "gradient.max_halvings", minimum=0),
        stall_limit=_as_int(gobj.get("stall_limit", 50), "gradient.stall_limit", minimum=1),
    )

    cobj = _require_mapping(raw.get("certificate", {}), "certificate")
    _reject_unknown(
        cobj, "certificate",
        {"radius", "grid_density", "pointwise_tol", "convexity_samples",
         "convexity_tol", "anchors", "sample_radius", "seed"},
    )
    radius = cobj.get("radius")
    certificate = CertificateOptions(
        radius=None if radius is None else _as_float(radius, "certificate.radius", positive=True),
        grid_density=_as_int(cobj.get("grid_density", 33), "certificate.grid_density", minimum=3),
        pointwise_tol=_as_float(cobj.get("pointwise_tol", 1e-8), "certificate.pointwise_tol", positive=True),
        convexity_samples=_as_int(cobj.get("convexity_samples", 400), "certificate.convexity_samples", minimum=1),
        convexity_tol=_as_float(cobj.get("convexity_tol", 1e-9), "certificate.convexity_tol", positive=True),
        anchors=_as_int(cobj.get("anchors", 4), "certificate.anchors", minimum=1),
        sample_radius=_as_float(cobj.get("sample_radius", 3.0), "certificate.sample_radius", positive=True),
        seed=_as_int(cobj.get("seed", 0), "certificate.seed", minimum=0),
    )

    oracle = None
    if raw.get("oracle") is not None:
        oobj = _require_mapping(raw["oracle"], "oracle")
        _reject_unknown(oobj, "oracle", {"grid1", "grid2", "budget", "max_rounds", "riccati"})
        oracle = OracleOptions(
            grid1=_parse_grid(oobj.get("grid1"), box1, dims.k1, "oracle.grid1"),
            grid2=_parse_grid(oobj.get("grid2"), box2, dims.k2, "oracle.grid2"),
            budget=_as_int(oobj.get("budget", 10**6), "oracle.budget", minimum=1),
            max_rounds=_as_int(oobj.get("max_rounds", 50), "oracle.max_rounds", minimum=1),
            riccati=_as_bool(oobj.get("riccati", False), "oracle.riccati"),
        )

    kobj = _require_mapping(raw.get("check", {}), "check")
    _reject_unknown(kobj, "check", {"samples", "probe_radius", "corrupt"})
    probe = kobj.get("probe_radius")
    corrupt = kobj.get("corrupt")
    check = CheckOptions(
        samples=_as_int(kobj.get("samples", 120), "check.samples", minimum=1),
        probe_radius=None if probe is None else _as_float(probe, "check.probe_radius", positive=True),
        corrupt=None if corrupt is None else _as_str(corrupt, "check.corrupt"),
    )
    if check.corrupt is not None and check.corrupt not in _CORRUPTIBLE:
        raise ConfigError("check.corrupt", f"unknown derivative name {check.corrupt!r}")

    return RunConfig(
        name=name,
        seed=seed,
        horizon=horizon,
        steps=steps,
        dims=dims,
        backend_kind=kind,
        paths=paths,
        regression=regression,
        spec=spec,
        problem=problem,
        fbsde=fbsde,
        gradient=gradient,
        certificate=certificate,
        oracle=oracle,
        check=check,
        echo=raw,
    )


def load_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            str(path), f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return parse_config(raw, seed_override)


def build_backend(cfg: RunConfig) -> Backend:
    grid = TimeGrid(horizon=cfg.horizon, steps=cfg.steps)
    if cfg.backend_kind == "lattice":
        return LatticeBackend(grid)
    ensemble = sample_ensemble(grid, cfg.paths, cfg.dims.d, cfg.seed)
    return MonteCarloBackend(ensemble, cfg.regression)


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    v = float(value)
    if v == 0.0:
        v = 0.0  # normalize -0.0 so equal values print identically
    return f"{v:.17g}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _metadata(cfg: RunConfig) -> dict:
    return {
        "version": __version__,
        "seed": cfg.seed,
        "generator": GENERATOR_NAME,
        "backend": cfg.backend_kind,
        "config": cfg.echo,
    }


def _matrix_header(prefix: str, rows: int, cols: int) -> list[str]:
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(rows) for j in range(cols)]


def _vector_header(prefix: str, k: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(k)]


def write_trajectory(
    path: Path,
    problem: GameProblem,
    traj,
    u: ControlProcess,
    adj1: AdjointTrajectory,
    adj2: AdjointTrajectory,
) -> None:
    dims = problem.dims
    backend = traj.backend
    N = backend.grid.steps
    knots = backend.grid.knots
    header = (
        ["step", "t", "scenario_id"]
        + _vector_header("x", dims.n)
        + _vector_header("y", dims.m)
        + _matrix_header("z", dims.m, dims.d)
        + _vector_header("u1", dims.k1)
        + _vector_header("u2", dims.k2)
        + _vector_header("k1", dims.m)
        + _vector_header("p1", dims.n)
        + _matrix_header("q1", dims.n, dims.d)
        + _vector_header("k2", dims.m)
        + _vector_header("p2", dims.n)
        + _matrix_header("q2", dims.n, dims.d)
    )
    rows = []
    for j in range(N + 1):
        live = j < N
        blank_z = [""] * (dims.m * dims.d)
        blank_q = [""] * (dims.n * dims.d)
        for s in range(backend.scenario_count(j)):
            row = [str(j), _fmt(knots[j]), str(s)]
            row += [_fmt(v) for v in traj.x[j][s]]
            row += [_fmt(v) for v in traj.y[j][s]]
            row += [_fmt(v) for v in traj.z[j][s].ravel()] if live else blank_z
            row += [_fmt(v) for v in u.u1[j][s]] if live else [""] * dims.k1
            row += [_fmt(v) for v in u.u2[j][s]] if live else [""] * dims.k2
            row += [_fmt(v) for v in adj1.k[j][s]]
            row += [_fmt(v) for v in adj1.p[j][s]]
            row += [_fmt(v) for v in adj1.q[j][s].ravel()] if live else blank_q
            row += [_fmt(v) for v in adj2.k[j][s]]
            row += [_fmt(v) for v in adj2.p[j][s]]
            row += [_fmt(v) for v in adj2.q[j][s].ravel()] if live else blank_q
            rows.append(row)
    _write_csv(path, header, rows)


def write_controls(path: Path, problem: GameProblem, backend: Backend, u: ControlProcess) -> None:
    dims = problem.dims
    header = (
        ["step", "scenario_id"]
        + _vector_header("u1", dims.k1)
        + _vector_header("u2", dims.k2)
    )
    rows = []
    for j in range(backend.grid.steps):
        for s in range(backend.scenario_count(j)):
            row = [str(j), str(s)]
            row += [_fmt(v) for v in u.u1[j][s]]
            row += [_fmt(v) for v in u.u2[j][s]]
            rows.append(row)
    _write_csv(path, header, rows)


def read_controls(path: Path, problem: GameProblem, backend: Backend) -> ControlProcess:
    dims = problem.dims
    expected_header = (
        ["step", "scenario_id"]
        + _vector_header("u1", dims.k1)
        + _vector_header("u2", dims.k2)
    )
    try:
        lines = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read controls: {exc}") from None
    if not lines or lines[0].split(",") != expected_header:
        raise ConfigError(str(path), "controls header does not match the configured dimensions")
    N = backend.grid.steps
    u1 = [np.zeros((backend.scenario_count(j), dims.k1)) for j in range(N)]
    u2 = [np.zeros((backend.scenario_count(j), dims.k2)) for j in range(N)]
    filled = [np.zeros(backend.scenario_count(j), dtype=bool) for j in range(N)]
    for ln, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(expected_header):
            raise ConfigError(f"{path}:{ln}", "wrong column count")
        try:
            j = int(cells[0])
            s = int(cells[1])
            values = [float(c) for c in cells[2:]]
        except ValueError:
            raise ConfigError(f"{path}:{ln}", "malformed numeric cell") from None
        if not 0 <= j < N or not 0 <= s < backend.scenario_count(j):
            raise ConfigError(f"{path}:{ln}", f"step/scenario ({j}, {s}) outside the grid")
        u1[j][s] = values[: dims.k1]
        u2[j][s] = values[dims.k1:]
        filled[j][s] = True
    if not all(f.all() for f in filled):
        raise ConfigError(str(path), "controls file does not cover every (step, scenario)")
    return ControlProcess(u1=tuple(u1), u2=tuple(u2))


def _diag_dict(diag) -> dict:
    return {
        "iterations": diag.iterations,
        "final_residual": diag.final_residual,
        "converged": diag.converged,
        "ridge_fallbacks": diag.ridge_fallbacks,
        "warnings": list(diag.warnings),
    }


def write_report(path: Path, cfg: RunConfig, report: EquilibriumReport) -> None:
    payload = {
        "metadata": _metadata(cfg),
        "converged": report.converged,
        "iterations": report.iterations,
        "j1": report.j1,
        "j2": report.j2,
        "stderr1": report.stderr1,
        "stderr2": report.stderr2,
        "rho1": report.rho1,
        "rho2": report.rho2,
        "certificate": certificate_as_dict(report.certificate),
        "verdict": report.certificate.verdict,
        "fbsde": _diag_dict(report.fbsde_diagnostics),
        "adjoint": [_diag_dict(d) for d in report.adjoint_diagnostics],
        "warnings": list(report.warnings),
    }
    _write_json(path, payload)


def write_history(path: Path, report: EquilibriumReport) -> None:
    header = ["iteration", "J1", "J2", "rho1", "rho2", "alpha"]
    rows = [
        [str(rec.iteration), _fmt(rec.j1), _fmt(rec.j2),
         _fmt(rec.rho1), _fmt(rec.rho2), _fmt(rec.step_size)]
        for rec in report.history
    ]
    _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _prepare(args) -> tuple[RunConfig, Backend, Path]:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, build_backend(cfg), out


def cmd_solve(args) -> int:
    started = time.perf_counter()
    cfg, backend, out = _prepare(args)
    try:
        report = solve_nash(
            cfg.problem, backend,
            fbsde_config=cfg.fbsde,
            grad_config=cfg.gradient,
            certificate_options=cfg.certificate,
        )
    except (PicardDivergenceError, NonConvergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    u = report.controls
    traj, _ = solve_fbsde(cfg.problem, u, backend, cfg.fbsde)
    adj1, _ = solve_adjoint(cfg.problem, traj, u, 1, backend, cfg.fbsde)
    adj2, _ = solve_adjoint(cfg.problem, traj, u, 2, backend, cfg.fbsde)
    write_report(out / "report.json", cfg, report)
    write_history(out / "history.csv", report)
    write_trajectory(out / "trajectory.csv", cfg.problem, traj, u, adj1, adj2)
    write_controls(out / "controls.csv", cfg.problem, backend, u)
    elapsed = time.perf_counter() - started
    print(f"solve: converged={report.converged} verdict={report.certificate.verdict} "
          f"J1={report.j1:.6g} J2={report.j2:.6g} rho=({report.rho1:.3e}, {report.rho2:.3e})")
    print(f"wall time: {elapsed:.3f} s")
    if report.certificate.verdict == "refuted":
        return EXIT_REFUTED
    if report.converged:
        return EXIT_OK
    return EXIT_SOLVER_FAILURE


def cmd_verify(args) -> int:
    started = time.perf_counter()
    cfg, backend, out = _prepare(args)
    u = read_controls(Path(args.controls), cfg.problem, backend)
    try:
        traj, fdiag = solve_fbsde(cfg.problem, u, backend, cfg.fbsde)
        adj1, d1 = solve_adjoint(cfg.problem, traj, u, 1, backend, cfg.fbsde)
        adj2, d2 = solve_adjoint(cfg.problem, traj, u, 2, backend, cfg.fbsde)
    except PicardDivergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    vi = vi_residual(cfg.problem, traj, adj1, adj2, u)
    certificate = build_certificate(cfg.problem, traj, (adj1, adj2), u, cfg.certificate)
    payload = {
        "metadata": _metadata(cfg),
        "rho1": vi.rho1,
        "rho2": vi.rho2,
        "inner_min_1": vi.inner_min_1,
        "inner_min_2": vi.inner_min_2,
        "convention": vi.convention,
        "verdict": certificate.verdict,
        "certificate": certificate_as_dict(certificate),
        "solves": {
            "fbsde": _diag_dict(fdiag),
            "adjoint": [_diag_dict(d1), _diag_dict(d2)],
        },
    }
    _write_json(out / "certificate.json", payload)
    elapsed = time.perf_counter() - started
    print(f"verify: verdict={certificate.verdict} rho=({vi.rho1:.3e}, {vi.rho2:.3e})")
    print(f"wall time: {elapsed:.3f} s")
    return {
        "certified": EXIT_OK,
        "refuted": EXIT_REFUTED,
        "inconclusive": EXIT_INCONCLUSIVE,
    }[certificate.verdict]


def cmd_oracle(args) -> int:
    started = time.perf_counter()
    cfg, backend, out = _prepare(args)
    if cfg.oracle is None:
        raise ConfigError("oracle", "the oracle command needs an 'oracle' config block")
    try:
        result = brute_force_nash(
            cfg.problem, backend,
            cfg.oracle.grid1, cfg.oracle.grid2,
            budget=cfg.oracle.budget,
            max_rounds=cfg.oracle.max_rounds,
        )
    except BudgetExceededError as exc:
        print(f"oracle budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    riccati_payload = None
    if cfg.oracle.riccati:
        spec = cfg.spec
        solution = solve_riccati(
            A=spec.drift.A,
            B=spec.drift.D1,
            Q=spec.cost1.Q,
            R=spec.cost1.N,
            G=spec.cost1.G,
            horizon=cfg.horizon,
            steps=cfg.steps,
        )
        sigma_const = np.stack([c.const for c in spec.diffusion], axis=1)
        riccati_payload = {
            "p0": solution.values[0].tolist(),
            "predicted_cost": predicted_cost(solution, spec.initial, sigma_const),
        }
    payload = {
        "metadata": _metadata(cfg),
        "equilibrium": result.equilibrium,
        "cycle_detected": result.cycle_detected,
        "rounds": result.rounds,
        "evaluations": result.evaluations,
        "j1": result.j1,
        "j2": result.j2,
        "resolution_bound_1": result.resolution_bound_1,
        "resolution_bound_2": result.resolution_bound_2,
        "assignment_1": list(result.assignment_1),
        "assignment_2": list(result.assignment_2),
        "u1": [a.tolist() for a in result.u1],
        "u2": [a.tolist() for a in result.u2],
        "riccati": riccati_payload,
    }
    _write_json(out / "oracle.json", payload)
    if args.solve_report:
        try:
            solved = json.loads(Path(args.solve_report).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read solve report {args.solve_report}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        gap1 = abs(solved["j1"] - result.j1)
        gap2 = abs(solved["j2"] - result.j2)
        print(f"cost gap player 1: {gap1:.6g} (bound {result.resolution_bound_1:.6g})")
        print(f"cost gap player 2: {gap2:.6g} (bound {result.resolution_bound_2:.6g})")
    elapsed = time.perf_counter() - started
    print(f"oracle: equilibrium={result.equilibrium} J1={result.j1:.6g} J2={result.j2:.6g} "
          f"evaluations={result.evaluations}")
    print(f"wall time: {elapsed:.3f} s")
    return EXIT_OK


def cmd_check(args) -> int:
    started = time.perf_counter()
    cfg, _, out = _prepare(args)
    problem = cfg.problem
    if cfg.check.corrupt is not None:
        problem = _corrupt_problem(problem, cfg.check.corrupt)
    report = validate_problem(
        problem,
        samples=cfg.check.samples,
        seed=cfg.seed,
        probe_radius=cfg.check.probe_radius,
    )
    status = "PASS" if report.passed else "FAIL"
    checks = [c for r in report.derivative_reports for c in r.checks]
    print(f"derivative check: {status} "
          f"({len(checks)} partials, {cfg.check.samples} samples)")
    for check in checks:
        marker = "ok " if check.passed else "BAD"
        print(f"  [{marker}] {check.function}/{check.partial}: "
              f"max scaled error {check.max_error:.3e}")
    for warning in report.warnings:
        print(f"  warning: {warning}")
    elapsed = time.perf_counter() - started
    print(f"wall time: {elapsed:.3f} s")
    return EXIT_OK if report.passed else EXIT_REFUTED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbsdegames",
        description="Open-loop Nash solver for coupled forward-backward stochastic games",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("verify", cmd_verify),
        ("oracle", cmd_oracle),
        ("check", cmd_check),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker hint; affects speed only, never results")
        if name == "verify":
            p.add_argument("--controls", required=True, help="controls.csv to verify")
        if name == "oracle":
            p.add_argument("--solve-report", default=None,
                           help="report.json from a solve run, for cost-gap printing")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
