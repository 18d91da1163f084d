"""Command runners behind the CLI: config dict in, results and scalar metrics out."""

from __future__ import annotations

import copy
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .bvp import (
    CoefficientBlock,
    cauchy_norm,
    cauchy_system,
    continuity_path,
    kato_sqrt,
    neumann_solve,
    neumann_system,
    positive_projection,
    rellich_check,
)
from .calculus import (
    Quadrature,
    default_quadrature,
    inhomogeneous_split,
    offdiag_profile,
    sgn_columns,
    sgn_constant,
    sgn_oracle_data,
    spectrum,
    square_function,
    square_function_ratios,
    torus_distance,
)
from .calculus.sign import numeric_sgn_integral
from .dyadic import (
    DyadicCube,
    PrincipalPart,
    carleson_embedding_ratio,
    carleson_norm,
    cube_average_bound,
    gamma_family,
    tb_pipeline,
    top_level,
)
from .errors import ConfigurationError
from .operators import (
    DEFAULT_BUDGET,
    DiracSystem,
    cauchy_coefficient,
    make_multop,
    symbol_dirac1d,
    symbol_higher_order,
    symbol_hodge_dirac,
    symbol_inhomogeneous,
)
from .spectral import Field, Grid, multi_indices


def jsonable(value):
    """Plain JSON types; NaN becomes null and infinities become the strings ``"inf"``/``"-inf"``."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (complex, np.complexfloating)):
        return [jsonable(value.real), jsonable(value.imag)]
    return value


@dataclass
class Outcome:
    results: dict
    metrics: dict
    timings: dict = field(default_factory=dict)
    table: list | None = None  # rows for the CSV companion


class Context:
    """A mutable copy of the config; knobs read with defaults are written back so the report shows them."""

    def __init__(self, config: dict):
        self.config = copy.deepcopy(config)
        self.seed = int(self.config["seed"])
        self.timings = {}

    def knob(self, name: str, default):
        exp = self.config.setdefault("experiment", {})
        if name not in exp:
            exp[name] = default
        return exp[name]

    @contextmanager
    def timed(self, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[phase] = self.timings.get(phase, 0.0) + time.perf_counter() - start

    # grid and coefficient construction

    def grid(self, m: int) -> Grid:
        g = self.config["grid"]
        if "m" in g and g["m"] != m:
            raise ConfigurationError(
                f"grid.m = {g['m']} does not match the fiber {m} this command needs", pointer="/grid/m", expected=m
            )
        g["m"] = m
        return Grid(int(g["n"]), m, int(g["points_per_axis"]), float(g["period"]))

    @property
    def n(self) -> int:
        return int(self.config["grid"]["n"])

    @property
    def budget(self) -> int:
        return int(self.config.get("budget", DEFAULT_BUDGET))

    def coefficients(self, grid: Grid):
        cfg = self.config["coefficients"]
        _inherit_seeds(cfg, self.seed)
        return make_multop(grid, cfg)

    def quadrature(self, system: DiracSystem, side: str = "BD") -> Quadrature:
        cfg = self.config.get("quadrature")
        if cfg is None:
            q = default_quadrature(system, side)
            self.config["quadrature"] = q.to_dict()
            return q
        return Quadrature.from_dict(cfg)

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


def _inherit_seeds(cfg: dict, seed: int) -> None:
    """Random coefficient kinds without their own seed take the top-level one."""
    kind = cfg.get("kind")
    if kind == "random_accretive":
        cfg.setdefault("seed", seed)
    elif kind == "block_diag":
        _inherit_seeds(cfg["A"], seed)
    elif kind == "cauchy" and cfg["a"].get("kind") == "rough_graph":
        cfg["a"].setdefault("seed", seed)


def operator_fiber(kind: str, n: int, N: int, k: int) -> int:
    if kind == "dirac1d":
        return 1
    if kind == "hodge_dirac":
        return N * (1 + n)
    if kind == "higher_order":
        return N * (1 + len(multi_indices(n, k)))
    if kind == "inhomogeneous":
        return n + 2
    raise ConfigurationError(f"unknown operator kind {kind!r}", pointer="/operator/kind")


def build_system(ctx: Context) -> DiracSystem:
    op = ctx.config["operator"]
    kind = op["kind"]
    N, k = int(op.get("N", 1)), int(op.get("k", 1))
    if kind != "higher_order" and k != 1:
        raise ConfigurationError(f"{kind} is first order; k must be 1", pointer="/operator/k")
    if kind in ("dirac1d", "inhomogeneous") and N != 1:
        raise ConfigurationError(f"{kind} has no N parameter", pointer="/operator/N")
    grid = ctx.grid(operator_fiber(kind, ctx.n, N, k))
    if kind == "dirac1d":
        D = symbol_dirac1d(grid)
    elif kind == "hodge_dirac":
        D = symbol_hodge_dirac(grid, N)
    elif kind == "higher_order":
        D = symbol_higher_order(grid, k, N)
    else:
        D = symbol_inhomogeneous(grid)
    with ctx.timed("validate"):
        return DiracSystem(D, ctx.coefficients(grid), budget=ctx.budget, seed=ctx.seed)


def _require_validated(system: DiracSystem, command: str) -> None:
    system.require_validated(f"the {command} command")


def _random_in_range(system: DiracSystem, rng, count: int) -> np.ndarray:
    g = system.grid
    X = rng.standard_normal((count,) + g.field_shape) + 1j * rng.standard_normal((count,) + g.field_shape)
    return system.D.project_range_array(X)


def _mean_free_data(grid: Grid, rng, modes: int) -> Field:
    """Random trigonometric polynomial with integer frequencies up to ``modes`` and no constant term."""
    P = grid.points_per_axis
    if 2 * modes + 1 > P:
        raise ConfigurationError("data_modes too large for the grid", pointer="/experiment/data_modes")
    coeffs = np.zeros(grid.field_shape, dtype=np.complex128)
    idx = np.arange(-modes, modes + 1) % P
    block = np.ix_(*([idx] * grid.n))
    shape = (2 * modes + 1,) * grid.n + (grid.m,)
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    for c in range(grid.m):
        coeffs[(*block, c)] = vals[..., c]
    coeffs[(0,) * grid.n] = 0.0
    f = Field.from_fourier(grid, coeffs)
    return f / f.norm()


def _box_mask(grid: Grid, box, name: str) -> np.ndarray:
    if len(box) != grid.n:
        raise ConfigurationError(f"{name} needs one interval per axis", pointer=f"/experiment/{name}", n=grid.n)
    x = grid.coordinates()
    mask = np.ones(grid.shape, dtype=bool)
    for axis, (lo, hi) in enumerate(box):
        mask &= (x[..., axis] >= lo) & (x[..., axis] < hi)
    return mask


def _loglog_fit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return None, None
    slope, intercept = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope), float(math.exp(intercept))


# ---------------------------------------------------------------------------
# system commands


def run_validate(ctx: Context) -> Outcome:
    ctx.knob("probes", 6)
    system = build_system(ctx)
    rep = system.report
    metrics = {
        "hypotheses_passed": float(rep.passed),
        "delta": rep.delta,
        "omega": rep.omega,
        "c3": rep.c3,
        "b_norm": rep.b_norm,
    }
    return Outcome({"report": rep.to_dict()}, metrics, ctx.timings)


def run_spectrum(ctx: Context) -> Outcome:
    side = ctx.knob("side", "BD")
    angles, radii = ctx.knob("angles", 5), ctx.knob("radii", 10)
    system = build_system(ctx)
    _require_validated(system, "spectrum")
    with ctx.timed("spectrum"):
        rep = spectrum(system, side, angles, radii)
    metrics = {
        "max_violation": rep.max_violation,
        "max_resolvent_product": rep.max_product,
        "omega": rep.omega_bound,
    }
    table = [{"re": float(z.real), "im": float(z.imag)} for z in rep.eigenvalues]
    return Outcome(rep.to_dict(), metrics, ctx.timings, table)


def run_sqfn(ctx: Context) -> Outcome:
    side = ctx.knob("side", "BD")
    trials = ctx.knob("trials", 100)
    in_range = ctx.knob("in_range", True)
    system = build_system(ctx)
    _require_validated(system, "sqfn")
    q = ctx.quadrature(system, side)
    rng = ctx.rng()
    g = system.grid
    if in_range:
        X = _random_in_range(system, rng, trials)
    else:
        X = rng.standard_normal((trials,) + g.field_shape) + 1j * rng.standard_normal((trials,) + g.field_shape)
    fields = [Field(g, x) for x in X]
    with ctx.timed("ratios"):
        ratios = square_function_ratios(system, fields, q, side)
        detail = square_function(system, fields[0], q, side)
    results = {
        "quadrature": q.to_dict(),
        "ratios": ratios.tolist(),
        "first_trial": detail.to_dict(),
    }
    metrics = {
        "sup_ratio": float(ratios.max()),
        "min_ratio": float(ratios.min()),
        "mean_ratio": float(ratios.mean()),
        "resolved": float(detail.resolved),
    }
    if not system.D.homogeneous:
        with ctx.timed("inhomogeneous_split"):
            split = inhomogeneous_split(system, q, probes=min(trials, 8), seed=ctx.seed)
        results["inhomogeneous_split"] = split
        metrics["head_partial_max"] = split["head_partial_max"]
        metrics["tail_partial_max"] = split["tail_partial_max"]
    table = [{"trial": i, "ratio": float(r)} for i, r in enumerate(ratios)]
    return Outcome(results, metrics, ctx.timings, table)


def run_sgn(ctx: Context) -> Outcome:
    side = ctx.knob("side", "BD")
    probes = ctx.knob("probes", 10)
    system = build_system(ctx)
    _require_validated(system, "sgn")
    q = ctx.quadrature(system, side)
    rng = ctx.rng()
    g = system.grid
    X = (rng.standard_normal((g.dof, probes)) + 1j * rng.standard_normal((g.dof, probes)))
    with ctx.timed("oracle"):
        oracle = sgn_oracle_data(system, side)
        S = oracle.matrix
        ref = S @ X
        PX = oracle.range_projector @ X
    with ctx.timed("quadrature"):
        quad = sgn_columns(system, X, q, side)
        quad2 = sgn_columns(system, quad, q, side)
    pn = np.maximum(np.linalg.norm(PX, axis=0), 1e-300)
    rel = np.linalg.norm(quad - ref, axis=0) / np.maximum(np.linalg.norm(ref, axis=0), 1e-300)
    sq_quad = np.linalg.norm(quad2 - PX, axis=0) / pn
    sq_oracle = np.linalg.norm(S @ ref - PX, axis=0) / pn
    k = system.k
    constant = sgn_constant(k)
    constant_defect = abs(constant - 1.0 / numeric_sgn_integral(k))
    results = {
        "quadrature": q.to_dict(),
        "relative_difference": rel.tolist(),
        "square_defect_quadrature": sq_quad.tolist(),
        "square_defect_oracle": sq_oracle.tolist(),
        "constant": constant,
        "oracle_compression_defect": oracle.compression_defect,
        "oracle_eigen_margin": oracle.eigen_margin,
    }
    metrics = {
        "quadrature_vs_oracle": float(rel.max()),
        "square_defect_quadrature": float(sq_quad.max()),
        "square_defect_oracle": float(sq_oracle.max()),
        "constant_defect": constant_defect,
    }
    return Outcome(results, metrics, ctx.timings)


def run_offdiag(ctx: Context) -> Outcome:
    period = float(ctx.config["grid"]["period"])
    n = ctx.n
    E = ctx.knob("E", [[0.0, 0.25 * period]] * n)
    F = ctx.knob("F", [[0.5 * period, 0.75 * period]] * n)
    trials = ctx.knob("trials", 4)
    modes = ctx.knob("modes", 6)
    collapse = ctx.knob("collapse", 0.5)
    side = ctx.knob("side", "BD")
    system = build_system(ctx)
    _require_validated(system, "offdiag")
    g = system.grid
    mE, mF = _box_mask(g, E, "E"), _box_mask(g, F, "F")
    t_list = ctx.config["experiment"].get("t_list")
    if t_list is None:
        d = torus_distance(g, mE, mF)
        t_list = (d / np.linspace(4.0, 24.0, 11)).tolist()
        ctx.config["experiment"]["t_list"] = t_list
    with ctx.timed("profile"):
        prof = offdiag_profile(system, mE, mF, t_list, trials, ctx.seed, side, modes=modes, collapse=collapse)
    metrics = {
        "alpha": prof.alpha,
        "r_squared": prof.r_squared,
        "C": prof.C,
        "distance": prof.distance,
        "window_points": float(prof.in_window.sum()),
    }
    table = [
        {"t": float(t), "ratio": float(prof.distance / t), "sup": float(s), "in_window": bool(w)}
        for t, s, w in zip(prof.t, prof.sup, prof.in_window)
    ]
    return Outcome(prof.to_dict(), metrics, ctx.timings, table)


def run_carleson(ctx: Context) -> Outcome:
    per_level = ctx.knob("per_level", 1)
    trials = ctx.knob("trials", 100)
    restrict = ctx.knob("restrict_to_D", True)
    system = build_system(ctx)
    _require_validated(system, "carleson")
    g = system.grid
    with ctx.timed("family"):
        family = gamma_family(system, per_level=per_level)
    with ctx.timed("carleson"):
        rep = carleson_norm(family, restrict_to_D=restrict)
        embed = carleson_embedding_ratio(system, family, trials, ctx.seed, restrict)
    averages = []
    for t, lvl, mats in zip(family.t, family.levels, family.matrices):
        if lvl == top_level(g):
            continue  # a single cube: max equals median
        bound = cube_average_bound(PrincipalPart(float(t), int(lvl), mats, family.subspace), g, restrict)
        bound.pop("values")
        averages.append(bound)
    active = [a for a in averages if a["max"] > 0]
    worst = max((a["max_over_median"] for a in active), default=1.0)
    results = {
        "carleson": rep.to_dict(),
        "cube_averages": averages,
        "embedding": {"kappa": embed["kappa"], "kappas": embed["kappas"].tolist(), "trials": embed["trials"]},
    }
    metrics = {
        "carleson_norm_squared": rep.norm_squared,
        "kappa": embed["kappa"],
        "max_over_median": worst,
        "subspace_dim": float(rep.subspace_dim),
    }
    table = [
        {"t": a["t"], "level": a["level"], "max": a["max"], "median": a["median"], "max_over_median": a["max_over_median"]}
        for a in averages
    ]
    return Outcome(results, metrics, ctx.timings, table)


def run_tb(ctx: Context) -> Outcome:
    eps_knob = ctx.knob("eps", [0.4, 0.2, 0.1])
    eps_list = [float(eps_knob)] if isinstance(eps_knob, (int, float)) else [float(e) for e in eps_knob]
    nu = ctx.knob("nu", 0.5)
    sector_budget = ctx.knob("sector_budget", 256)
    per_level = ctx.knob("per_level", 1)
    system = build_system(ctx)
    _require_validated(system, "tb")
    g = system.grid
    cube_spec = ctx.knob("cube", {"level": max(0, top_level(g) - 2), "corner": [0] * g.n})
    cube_spec.setdefault("corner", [0] * g.n)
    cube = DyadicCube(g, int(cube_spec["level"]), tuple(cube_spec["corner"]))
    runs, table = [], []
    for eps in eps_list:
        with ctx.timed("pipeline"):
            rep = tb_pipeline(system, cube, eps, nu, budget=sector_budget, per_level=per_level, seed=ctx.seed)
        defect = max(b.constants["C3"] * math.sqrt(eps) for b in rep.bundles)
        row = {
            "eps": eps,
            "defect": defect,
            "max_constant": max(b.C for b in rep.bundles),
            "max_packing": max(s.packing for s in rep.stops),
            "packing_bound": 1.0 - eps,
            "good_set_points": sum(s.good_checks["good_set_points"] for s in rep.stops),
            "good_set_violations": sum(s.good_checks["good_set_violations"] for s in rep.stops),
            "sectors": len(rep.bundles),
        }
        table.append(row)
        runs.append(rep.to_dict())
    defects = [r["defect"] for r in table]
    slope, prefactor = _loglog_fit(eps_list, defects)
    metrics = {
        "max_defect": max(defects),
        "sqrt_constant": max(r["defect"] / math.sqrt(r["eps"]) for r in table),
        "defect_slope": slope,
        "defect_prefactor": prefactor,
        "max_constant": max(r["max_constant"] for r in table),
        "max_packing_excess": max(r["max_packing"] - r["packing_bound"] for r in table),
        "good_set_violations": float(sum(r["good_set_violations"] for r in table)),
    }
    return Outcome({"cube": cube.to_dict(), "runs": runs, "summary": table}, metrics, ctx.timings, table)


# ---------------------------------------------------------------------------
# Kato, Cauchy and the boundary value problem


def run_kato(ctx: Context) -> Outcome:
    k = ctx.knob("k", 1)
    N = ctx.knob("N", 1)
    trials = ctx.knob("trials", 50)
    route = ctx.knob("route", "oracle")
    grid = ctx.grid(N)
    inner = grid.with_fiber(N * len(multi_indices(grid.n, k)))
    A = ctx.coefficients(inner)
    rng = ctx.rng()
    us = [Field.random(grid, rng) for _ in range(trials)]
    q = Quadrature.from_dict(ctx.config["quadrature"]) if "quadrature" in ctx.config else None
    with ctx.timed("sqrt"):
        res = kato_sqrt(A, k, us, N, route=route, q=q, budget=ctx.budget)
    r = res.ratios
    metrics = {
        "min_ratio": float(r.min()),
        "max_ratio": float(r.max()),
        "max_unit_deviation": float(np.max(np.abs(r - 1.0))),
        "delta": res.system.report.delta,
    }
    table = [{"trial": i, "ratio": float(v)} for i, v in enumerate(r)]
    return Outcome(res.to_dict(), metrics, ctx.timings, table)


def _cauchy_samples(ctx: Context, grid: Grid) -> np.ndarray:
    cfg = ctx.config["coefficients"]
    if cfg.get("kind") != "cauchy":
        raise ConfigurationError("the cauchy command needs coefficients of kind 'cauchy'", pointer="/coefficients/kind")
    _inherit_seeds(cfg, ctx.seed)
    return cauchy_coefficient(grid, **cfg["a"])


def run_cauchy(ctx: Context) -> Outcome:
    if ctx.n != 1:
        raise ConfigurationError("the Cauchy operator lives on the circle (n = 1)", pointer="/grid/n")
    probes = ctx.knob("probes", 10)
    route = ctx.knob("route", "oracle")
    grid = ctx.grid(1)
    a = _cauchy_samples(ctx, grid)
    with ctx.timed("validate"):
        system = cauchy_system(grid, a)
    q = ctx.quadrature(system) if route == "quadrature" else None
    rng = ctx.rng()
    X = rng.standard_normal((grid.dof, probes)) + 1j * rng.standard_normal((grid.dof, probes))
    with ctx.timed("sign"):
        S = sgn_oracle_data(system).matrix
        Y = S @ X if route == "oracle" else sgn_columns(system, X, q)
        op_norm = cauchy_norm(grid, a)
    ratios = np.linalg.norm(Y, axis=0) / np.linalg.norm(X, axis=0)
    constant = bool(np.all(a == a.reshape(-1)[0]))
    multiplier_defect = None
    if constant:
        # a constant a with Re a > 0 leaves the sign of every frequency unchanged
        xi = grid.frequencies()[..., 0].reshape(-1)
        Fx = np.fft.fft(X, axis=0)
        ref = np.fft.ifft(np.sign(xi)[:, None] * Fx, axis=0)
        multiplier_defect = float(np.max(np.linalg.norm(Y - ref, axis=0) / np.linalg.norm(X, axis=0)))
    results = {
        "route": route,
        "constant_coefficient": constant,
        "sgn_norm": op_norm,
        "probe_ratios": ratios.tolist(),
        "multiplier_defect": multiplier_defect,
        "delta": system.report.delta,
    }
    metrics = {
        "sgn_norm": op_norm,
        "probe_max_ratio": float(ratios.max()),
        "multiplier_defect": multiplier_defect,
    }
    return Outcome(results, metrics, ctx.timings)


def _coefficient_block(ctx: Context, N: int) -> CoefficientBlock:
    grid = ctx.grid(N * (1 + ctx.n))
    return CoefficientBlock(grid, N, ctx.coefficients(grid).matrices)


def run_neumann(ctx: Context) -> Outcome:
    N = ctx.knob("N", 1)
    t_list = ctx.knob("t_list", [0.01, 0.1, 1.0])
    modes = ctx.knob("data_modes", 4)
    allow = ctx.knob("allow_non_self_adjoint", False)
    A = _coefficient_block(ctx, N)
    w = _mean_free_data(A.grid.with_fiber(N), ctx.rng(), modes)
    with ctx.timed("solve"):
        sol = neumann_solve(A, w, t_list, allow_non_self_adjoint=allow)
    d = sol.diagnostics
    results = sol.to_dict()
    results["v"] = sol.v.to_payload()
    results["w"] = w.to_payload()
    metrics = {
        "condition": sol.condition,
        "well_posed": float(sol.well_posed),
        "trace_defect": d["trace_defect"],
        "pde_residual": d["pde_residual"],
        "membership_defect": d["membership_defect"],
        "large_t_norm": d["large_t_norm"],
    }
    table = [{"t": t, "norm_V": float(V.norm()), "norm_U": float(U.norm())} for t, V, U in zip(sol.times, sol.V, sol.U)]
    return Outcome(results, metrics, ctx.timings, table)


def run_rellich(ctx: Context) -> Outcome:
    N = ctx.knob("N", 1)
    trials = ctx.knob("trials", 20)
    A = _coefficient_block(ctx, N)
    with ctx.timed("system"):
        system = neumann_system(A)
    rng = ctx.rng()
    X = _random_in_range(system, rng, trials).reshape(trials, -1).T
    rows = []
    with ctx.timed("checks"):
        V = positive_projection(system, X)
        for i in range(trials):
            v = Field(system.grid, V[:, i])
            rows.append(dict(trial=i, **rellich_check(system, v)))
    metrics = {
        "max_residual": max(r["residual"] for r in rows),
        "max_ratio": max(r["ratio"] for r in rows),
        "min_ratio": min(r["ratio"] for r in rows),
        "max_membership_defect": max(r["membership_defect"] for r in rows),
    }
    return Outcome({"checks": rows}, metrics, ctx.timings, rows)


def run_homotopy(ctx: Context) -> Outcome:
    N = ctx.knob("N", 1)
    steps = ctx.knob("steps", 11)
    probes = ctx.knob("probes", 4)
    A = _coefficient_block(ctx, N)
    with ctx.timed("path"):
        rep = continuity_path(A, steps=steps, probes=probes, seed=ctx.seed)
    finite = [c for c in rep.conditions if c is not None and math.isfinite(c)]
    metrics = {
        "max_condition": max(finite) if len(finite) == len(rep.conditions) else float("inf"),
        "max_slope": max(rep.slopes, default=0.0),
        "order_estimate": rep.order_estimate,
        "failures": float(len(rep.failures)),
    }
    table = [{"tau": t, "condition": c} for t, c in zip(rep.taus, rep.conditions)]
    return Outcome(rep.to_dict(), metrics, ctx.timings, table)


@dataclass(frozen=True)
class Command:
    runner: object
    knobs: frozenset
    metrics: tuple
    headline: str
    uses_operator: bool


COMMANDS = {
    "validate": Command(run_validate, frozenset({"probes"}), ("hypotheses_passed", "delta", "omega", "c3", "b_norm"), "delta", True),
    "spectrum": Command(
        run_spectrum, frozenset({"side", "angles", "radii"}), ("max_violation", "max_resolvent_product", "omega"), "max_violation", True
    ),
    "sqfn": Command(
        run_sqfn,
        frozenset({"side", "trials", "in_range"}),
        ("sup_ratio", "min_ratio", "mean_ratio", "resolved", "head_partial_max", "tail_partial_max"),
        "sup_ratio",
        True,
    ),
    "sgn": Command(
        run_sgn,
        frozenset({"side", "probes"}),
        ("quadrature_vs_oracle", "square_defect_quadrature", "square_defect_oracle", "constant_defect"),
        "quadrature_vs_oracle",
        True,
    ),
    "offdiag": Command(
        run_offdiag,
        frozenset({"E", "F", "t_list", "trials", "modes", "collapse", "side"}),
        ("alpha", "r_squared", "C", "distance", "window_points"),
        "alpha",
        True,
    ),
    "carleson": Command(
        run_carleson,
        frozenset({"per_level", "trials", "restrict_to_D"}),
        ("carleson_norm_squared", "kappa", "max_over_median", "subspace_dim"),
        "carleson_norm_squared",
        True,
    ),
    "tb": Command(
        run_tb,
        frozenset({"eps", "nu", "cube", "sector_budget", "per_level"}),
        ("max_defect", "sqrt_constant", "defect_slope", "defect_prefactor", "max_constant", "max_packing_excess", "good_set_violations"),
        "max_defect",
        True,
    ),
    "kato": Command(
        run_kato, frozenset({"k", "N", "trials", "route"}), ("min_ratio", "max_ratio", "max_unit_deviation", "delta"), "max_ratio", False
    ),
    "cauchy": Command(
        run_cauchy, frozenset({"probes", "route"}), ("sgn_norm", "probe_max_ratio", "multiplier_defect"), "sgn_norm", False
    ),
    "neumann": Command(
        run_neumann,
        frozenset({"N", "t_list", "data_modes", "allow_non_self_adjoint"}),
        ("condition", "well_posed", "trace_defect", "pde_residual", "membership_defect", "large_t_norm"),
        "condition",
        False,
    ),
    "rellich": Command(
        run_rellich, frozenset({"N", "trials"}), ("max_residual", "max_ratio", "min_ratio", "max_membership_defect"), "max_residual", False
    ),
    "homotopy": Command(
        run_homotopy, frozenset({"N", "steps", "probes"}), ("max_condition", "max_slope", "order_estimate", "failures"), "max_condition", False
    ),
}


def check_command_config(command: str, config: dict) -> None:
    """Cross-field rules the schema cannot express, reported with a pointer."""
    entry = COMMANDS[command]
    if entry.uses_operator and "operator" not in config:
        raise ConfigurationError(f"{command} needs an operator section", pointer="/operator")
    if not entry.uses_operator and "operator" in config:
        raise ConfigurationError(f"{command} builds its own operator; remove the operator section", pointer="/operator")
    for key in config.get("experiment", {}):
        if key not in entry.knobs:
            raise ConfigurationError(
                f"experiment knob {key!r} does not apply to {command}", pointer=f"/experiment/{key}", allowed=sorted(entry.knobs)
            )
    for key in config.get("thresholds", {}):
        if key not in entry.metrics:
            raise ConfigurationError(
                f"{command} reports no metric {key!r}", pointer=f"/thresholds/{key}", metrics=list(entry.metrics)
            )
    q = config.get("quadrature")
    if q is not None and not q["t_min"] < q["t_max"]:
        raise ConfigurationError("quadrature needs t_min < t_max", pointer="/quadrature/t_max")


def run_command(command: str, config: dict) -> tuple:
    """``(resolved_config, Outcome)``; raises ``BDCalcError`` subclasses on failure."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}", known=sorted(COMMANDS))
    check_command_config(command, config)
    ctx = Context(config)
    ctx.config.setdefault("budget", ctx.budget)
    outcome = COMMANDS[command].runner(ctx)
    outcome.timings = dict(ctx.timings)
    return ctx.config, outcome
