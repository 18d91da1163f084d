"""Boundary value problems through BD and DB: Kato square roots, the Cauchy
integral, the block map ``A -> A_hat``, Neumann solvability and the Rellich identity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, SolverError, ValidationError
from .operators import (
    DiracSystem,
    MultOp,
    block_diag_multop,
    cauchy_multop,
    identity_multop,
    random_accretive,
    symbol_dirac1d,
    symbol_hodge_dirac,
    symbol_higher_order,
    validate,
)
from .spectral import Field, Grid, forward, grad_k_norm, inverse, multi_indices
from .calculus.evolution import Semigroup
from .calculus.quadrature import Quadrature
from .calculus.sign import sgn_columns, sgn_oracle_data, spectral_projections
from .calculus.sqfn import default_quadrature

INVOLUTION_TOL = 1e-11
SINGULAR_COND = 1e12


def _cols(grid: Grid, fields) -> np.ndarray:
    return np.stack([f.flat for f in fields], axis=1)


def _sign_apply(system: DiracSystem, X: np.ndarray, route: str, q: Quadrature | None) -> np.ndarray:
    if route == "oracle":
        return sgn_oracle_data(system).matrix @ X
    if route == "quadrature":
        return sgn_columns(system, X, q if q is not None else default_quadrature(system))
    raise ConfigurationError("route must be 'oracle' or 'quadrature'", route=route)


# ---------------------------------------------------------------------------
# Kato


@dataclass
class KatoResult:
    sqrt_u: list
    ratios: np.ndarray
    system: DiracSystem = field(repr=False)
    route: str = "oracle"

    def to_dict(self) -> dict:
        r = self.ratios
        return {"route": self.route, "ratios": r.tolist(), "min": float(r.min()), "max": float(r.max())}


def kato_system(A, grid: Grid, k: int, N: int = 1, budget: int | None = None) -> DiracSystem:
    """``(D, B)`` with ``D = [[0, (grad^k)^*], [grad^k, 0]]`` and ``B = diag(I_N, A)``.

    ``grid`` carries the fiber of ``u`` (``N``); ``A`` acts on the ``N p`` stacked
    order-``k`` derivatives and may be a ``MultOp``, a constant matrix or per-sample matrices.
    """
    p = len(multi_indices(grid.n, k))
    big = grid.with_fiber(N + N * p)
    inner = big.with_fiber(N * p)
    if isinstance(A, MultOp):
        mats = A.matrices
    else:
        mats = np.asarray(A, dtype=np.complex128)
        if mats.shape[-2:] != (N * p, N * p):
            raise DimensionError("A must act on the stacked order-k derivatives", expected=N * p, got=list(mats.shape[-2:]))
        mats = np.broadcast_to(mats, inner.shape + (N * p, N * p))
    B = block_diag_multop(big, N, mats)
    kwargs = {} if budget is None else {"budget": budget}
    system = DiracSystem(symbol_higher_order(big, k, N), B, **kwargs)
    if not system.validated:
        raise ValidationError("the Kato coefficient fails the Garding check on the range of grad^k", report=system.report.to_dict())
    return system


def kato_sqrt(A, k: int, us, N: int = 1, route: str = "oracle", q: Quadrature | None = None, budget: int | None = None) -> KatoResult:
    """``sqrt(L) u`` for ``L = (grad^k)^* A grad^k``, read off ``sgn(BD) BD [u, 0]``,
    with the ratios ``||sqrt(L) u|| / ||grad^k u||``."""
    fields = [us] if isinstance(us, Field) else list(us)
    grid = fields[0].grid
    if grid.m != N:
        raise ConfigurationError("u must take values in C^N", m=grid.m, N=N)
    system = kato_system(A, grid, k, N, budget)
    big = system.grid
    lifted = np.zeros((len(fields),) + big.field_shape, dtype=np.complex128)
    for i, f in enumerate(fields):
        lifted[i, ..., :N] = f.values
    BDu = system.apply_array(lifted, "BD")
    X = BDu.reshape(len(fields), -1).T
    out = _sign_apply(system, X, route, q).T.reshape((len(fields),) + big.field_shape)
    roots = [Field(grid, out[i, ..., :N]) for i in range(len(fields))]
    ratios = np.array([r.norm() / grad_k_norm(f, k) for r, f in zip(roots, fields)])
    return KatoResult(roots, ratios, system, route)


# ---------------------------------------------------------------------------
# Cauchy integral


def cauchy_system(grid: Grid, a) -> DiracSystem:
    a = np.asarray(a, dtype=np.complex128).reshape(grid.shape)
    system = DiracSystem(symbol_dirac1d(grid), cauchy_multop(grid, a))
    if not system.validated:
        raise ValidationError("1/a is not accretive", report=system.report.to_dict())
    return system


def cauchy_operator(a, u: Field, route: str = "oracle", q: Quadrature | None = None) -> Field:
    """``sgn(BD) u`` for ``D = -i d/dx`` and ``B`` multiplication by ``1/a``."""
    system = cauchy_system(u.grid, a)
    return Field(u.grid, _sign_apply(system, u.flat.reshape(-1, 1), route, q)[:, 0])


def cauchy_norm(grid: Grid, a) -> float:
    """``||sgn(BD)||`` on L^2 (the sampling weights are uniform, so the Euclidean norm)."""
    return float(np.linalg.norm(sgn_oracle_data(cauchy_system(grid, a)).matrix, 2))


# ---------------------------------------------------------------------------
# coefficient blocks and A_hat


@dataclass
class CoefficientBlock:
    """``A = [[a, b], [c, d]]`` per sample, ``a`` acting on ``C^N``, ``d`` on ``C^(nN)``."""

    grid: Grid
    N: int
    matrices: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.N * (1 + self.grid.n)
        if self.grid.m != m:
            raise ConfigurationError("grid fiber must be N (1 + n)", m=self.grid.m, expected=m)
        mats = np.asarray(self.matrices, dtype=np.complex128)
        self.matrices = np.ascontiguousarray(np.broadcast_to(mats, self.grid.shape + (m, m)))

    @property
    def a(self):
        return self.matrices[..., : self.N, : self.N]

    @property
    def b(self):
        return self.matrices[..., : self.N, self.N :]

    @property
    def c(self):
        return self.matrices[..., self.N :, : self.N]

    @property
    def d(self):
        return self.matrices[..., self.N :, self.N :]

    @property
    def hermitian_defect(self) -> float:
        M = self.matrices
        return float(np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2)))))

    @property
    def self_adjoint(self) -> bool:
        return self.hermitian_defect <= 1e-12

    def multop(self) -> MultOp:
        return MultOp(self.grid, self.matrices, "coefficient_block", {"N": self.N})

    def kappa(self) -> float:
        """Accretivity on the closure of ``{[f, grad g]}``, the range of the Hodge-Dirac operator."""
        if "kappa" not in self.diagnostics:
            self.diagnostics["kappa"] = validate(symbol_hodge_dirac(self.grid, self.N), self.multop()).delta
        return self.diagnostics["kappa"]

    @classmethod
    def identity(cls, grid: Grid, N: int = 1) -> "CoefficientBlock":
        g = grid.with_fiber(N * (1 + grid.n))
        return cls(g, N, np.eye(g.m))

    @classmethod
    def random(cls, grid: Grid, N: int, delta: float, seed: int, skew: float = 0.0, smooth_modes: int | None = None) -> "CoefficientBlock":
        """Pointwise accretive ``delta I + W W^* + i skew S``; self-adjoint when ``skew = 0``."""
        g = grid.with_fiber(N * (1 + grid.n))
        return cls(g, N, random_accretive(g, delta, skew, seed, smooth_modes).matrices)


def _upper_factor_inverse(A: CoefficientBlock):
    """Per-sample ``a^{-1}`` with a singularity check."""
    a = A.a
    cond = np.linalg.cond(a)
    bad = ~np.isfinite(cond) | (cond > SINGULAR_COND)
    if bad.any():
        loc = [int(i) for i in np.unravel_index(int(np.argmax(np.where(np.isfinite(cond), cond, np.inf))), cond.shape)]
        raise ConfigurationError("the block a is singular at some sample", sample=loc, condition=float(np.max(cond)))
    return np.linalg.inv(a)


def _hat_matrices(A: CoefficientBlock) -> np.ndarray:
    ainv = _upper_factor_inverse(A)
    out = np.empty_like(A.matrices)
    N = A.N
    out[..., :N, :N] = ainv
    out[..., :N, N:] = -ainv @ A.b
    out[..., N:, :N] = A.c @ ainv
    out[..., N:, N:] = A.d - A.c @ ainv @ A.b
    return out


def k_symmetry_defect(A: CoefficientBlock) -> float:
    """``max ||A^* K - K A||`` per sample with ``K = diag(I, -I)``."""
    sign = np.ones(A.grid.m)
    sign[A.N :] = -1.0
    M = A.matrices
    lhs = np.conj(np.swapaxes(M, -1, -2)) * sign[None, :]
    rhs = sign[:, None] * M
    return float(np.max(np.abs(lhs - rhs)))


def hat_transform(A: CoefficientBlock, check: bool = True) -> CoefficientBlock:
    """``A_hat = [[1, 0], [c, d]] [[a, b], [0, 1]]^{-1}``, with the involution and accretivity checks."""
    H = CoefficientBlock(A.grid, A.N, _hat_matrices(A))
    if check:
        back = _hat_matrices(H)
        scale = max(1.0, float(np.max(np.abs(A.matrices))))
        H.diagnostics["involution"] = float(np.max(np.abs(back - A.matrices))) / scale
        if H.diagnostics["involution"] > INVOLUTION_TOL:
            raise SolverError("A_hat_hat differs from A", defect=H.diagnostics["involution"])
        report = validate(symbol_hodge_dirac(H.grid, H.N), H.multop())
        H.diagnostics["accretive"] = report.passed
        H.diagnostics["delta"] = report.delta
        H.diagnostics["k_symmetry"] = k_symmetry_defect(H)
        if not report.passed:
            raise ValidationError("A_hat is not accretive on the range of D", report=report.to_dict())
    return H


# ---------------------------------------------------------------------------
# Neumann problem


def neumann_system(A: CoefficientBlock, hat: bool = True) -> DiracSystem:
    """The pair ``(D, A_hat)`` with ``D = [[0, div], [-grad, 0]]`` (or ``(D, A)`` if ``hat`` is False)."""
    B = hat_transform(A) if hat else A
    system = DiracSystem(symbol_hodge_dirac(B.grid, B.N), B.multop())
    system.require_validated("the Neumann system")
    return system


def _semigroup(system: DiracSystem) -> Semigroup:
    return system.cached(("semigroup", "DB"), lambda: Semigroup(system, "DB"))


def trace_map(system: DiracSystem, N: int):
    """The map ``v -> v_0`` on an orthonormal basis of the positive spectral subspace.

    Returns the matrix, its singular values and the semigroup holding the basis.
    """
    sg = _semigroup(system)
    grid = system.grid
    Y = sg.basis.reshape(grid.num_points, grid.m, sg.dim)
    T = Y[:, :N, :].reshape(grid.num_points * N, sg.dim)
    s = np.linalg.svd(T, compute_uv=False)
    return T, s, sg


@dataclass
class NeumannSolution:
    v: Field
    times: list
    V: list
    U: list
    condition: float
    singular_values: np.ndarray
    well_posed: bool
    diagnostics: dict
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "min_singular_value": float(self.singular_values[-1]) if self.singular_values.size else 0.0,
            "max_singular_value": float(self.singular_values[0]) if self.singular_values.size else 0.0,
            "well_posed": self.well_posed,
            "times": list(self.times),
            "diagnostics": dict(self.diagnostics),
            "warnings": list(self.warnings),
        }


def _curl_defect(grid: Grid, N: int, vecs: np.ndarray) -> float:
    """``max ||d_i V_j - d_j V_i|| / ||V||`` over pairs of directions (zero for ``n = 1``)."""
    n = grid.n
    if n == 1:
        return 0.0
    g = grid.with_fiber(N)
    xi = grid.frequencies()
    comps = [forward(g, vecs[..., N + j * N : N + (j + 1) * N]) for j in range(n)]
    total = float(np.sqrt(np.sum(np.abs(vecs[..., N:]) ** 2)))
    worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            c = 1j * xi[..., i, None] * comps[j] - 1j * xi[..., j, None] * comps[i]
            worst = max(worst, float(np.sqrt(np.sum(np.abs(inverse(g, c)) ** 2))))
    return worst / max(total, 1e-300)


def neumann_solve(A: CoefficientBlock, w: Field, t_list, allow_non_self_adjoint: bool = False, rank_tol: float = 1e-10) -> NeumannSolution:
    """Solve for ``v`` in the positive spectral subspace of ``D A_hat`` with ``v_0 = w``.

    On the torus the first block of the range of ``D`` consists of mean-free
    functions, so ``w`` must have zero mean. ``V(t) = exp(-t D A_hat) v`` is
    evaluated at ``t_list`` and ``U = [[a, b], [0, 1]]^{-1} V``.
    """
    N = A.N
    if not A.self_adjoint and not allow_non_self_adjoint:
        raise ConfigurationError(
            "A is not self-adjoint; pass allow_non_self_adjoint=True to study solvability anyway",
            hermitian_defect=A.hermitian_defect,
        )
    grid = A.grid
    if w.grid != grid.with_fiber(N):
        raise ConfigurationError("w must be a C^N field on the coefficient grid")
    wn = w.norm()
    mean = np.abs(w.values.reshape(-1, N).mean(axis=0)).max()
    if mean > 1e-12 * max(wn, 1e-300) and mean > 1e-300:
        raise ConfigurationError("the Neumann datum must have zero mean on the torus", mean=float(mean))
    times = sorted(float(t) for t in t_list)
    if any(t <= 0 for t in times):
        raise ConfigurationError("t_list must be positive")

    system = neumann_system(A)
    T, s, sg = trace_map(system, N)
    warnings = []
    if s.size == 0 or s[-1] <= rank_tol * s[0]:
        warnings.append("the trace map is numerically rank deficient")
        well = False
    else:
        well = True
    cond = float(s[0] / s[-1]) if s.size and s[-1] > 0 else float("inf")
    coef, *_ = np.linalg.lstsq(T, w.flat, rcond=None)
    v = Field(grid, sg.basis @ coef)
    trace_defect = float(np.linalg.norm(T @ coef - w.flat) / max(np.linalg.norm(w.flat), 1e-300))

    ainv = np.linalg.inv(A.a)
    Vs, Us, resid_v, resid_op, curls, norms = [], [], [], [], [], []
    rate = max(sg.max_rate, 1e-300)
    for t in times:
        c_t = sg.evolve_coords(t, coef)
        Vt = (sg.basis @ c_t).reshape(grid.field_shape)
        Vs.append(Field(grid, Vt))
        U0 = np.einsum("...ij,...j->...i", ainv, Vt[..., :N] - np.einsum("...ij,...j->...i", A.b, Vt[..., N:]))
        Us.append(Field(grid, np.concatenate([U0, Vt[..., N:]], axis=-1)))
        curls.append(_curl_defect(grid, N, Vt))
        norms.append(float(np.linalg.norm(Vt)))
        h = min(0.25 * t, 2e-3 / rate)
        stencil = [sg.basis @ sg.evolve_coords(t + o * h, coef) for o in (-2, -1, 1, 2)]
        dV = (stencil[0] - 8 * stencil[1] + 8 * stencil[2] - stencil[3]) / (12 * h)
        gen = system.apply_array(Vt[None], "DB")[0].reshape(-1)
        r = np.linalg.norm(dV + gen)
        resid_v.append(float(r / max(norms[-1], 1e-300)))
        resid_op.append(float(r / max(np.linalg.norm(gen), 1e-300)))
    vn = max(float(np.linalg.norm(v.flat)), 1e-300)
    envelope = max((norms[j] / norms[i] for i in range(len(norms)) for j in range(i + 1, len(norms)) if norms[i] > 0), default=0.0)
    diagnostics = {
        "trace_defect": trace_defect,
        "membership_defect": sg.membership_defect(v) if vn > 1e-300 else 0.0,
        "pde_residual": max(resid_v, default=0.0),
        "pde_residual_relative_to_generator": max(resid_op, default=0.0),
        "curl_defect": max(curls, default=0.0),
        "small_t_defect": float(np.linalg.norm(Vs[0].flat - v.flat) / vn) if Vs else None,
        "large_t_norm": norms[-1] / vn if norms else None,
        "semigroup_bound": sg.bound,
        "envelope_ratio": envelope,
        "positive_dimension": sg.dim,
    }
    if envelope > sg.bound * (1 + 1e-9):
        warnings.append("||V(t)|| grew beyond the semigroup bound")
    return NeumannSolution(v, times, Vs, Us, cond, s, well, diagnostics, warnings)


def rellich_check(system: DiracSystem, v: Field, tol: float = 1e-8) -> dict:
    """``|(alpha v0, v0) + 2 Re (beta v', v0) - (delta v', v')| / ||v||^2`` and ``||v'|| / ||v0||``.

    ``system`` is ``(D, A_hat)`` from ``neumann_system``; ``v`` must lie in the
    positive spectral subspace of ``D A_hat``.
    """
    N = system.D.params.get("N", 1)
    H = CoefficientBlock(system.grid, N, system.B.matrices)
    ks = k_symmetry_defect(H)
    if ks > 1e-10 * max(1.0, float(np.max(np.abs(H.matrices)))):
        raise ConfigurationError("A_hat is not K-symmetric, so A is not self-adjoint", defect=ks)
    sg = _semigroup(system)
    defect = sg.membership_defect(v)
    if defect > tol:
        raise ValidationError("v is not in the positive spectral subspace", defect=defect)
    vals = v.values
    v0, vv = vals[..., :N], vals[..., N:]
    ip = lambda x, y: np.vdot(y, x) * system.grid.cell_volume  # (x, y), linear in x
    alpha = np.einsum("...ij,...j->...i", H.a, v0)
    beta = np.einsum("...ij,...j->...i", H.b, vv)
    delta = np.einsum("...ij,...j->...i", H.d, vv)
    value = ip(alpha, v0) + 2 * np.real(ip(beta, v0)) - ip(delta, vv)
    n2 = v.norm() ** 2
    n0 = math.sqrt(float(np.real(ip(v0, v0))))
    n1 = math.sqrt(float(np.real(ip(vv, vv))))
    return {
        "residual": float(abs(value) / n2) if n2 > 0 else 0.0,
        "ratio": n1 / n0 if n0 > 0 else float("inf"),
        "membership_defect": defect,
    }


def positive_projection(system: DiracSystem, X: np.ndarray) -> np.ndarray:
    """``E_+`` of ``D A_hat`` applied to flat columns (dense spectral projection)."""
    return spectral_projections(system, "DB").E_plus.matrix @ X


# ---------------------------------------------------------------------------
# continuity path


@dataclass
class ContinuityReport:
    taus: list
    conditions: list
    min_singular: list
    drift: list
    slopes: list
    order_estimate: float | None
    failures: list

    def to_dict(self) -> dict:
        return {
            "taus": self.taus,
            "conditions": self.conditions,
            "min_singular": self.min_singular,
            "drift": self.drift,
            "slopes": self.slopes,
            "max_slope": max(self.slopes, default=0.0),
            "order_estimate": self.order_estimate,
            "failures": self.failures,
            "truncated": bool(self.failures),
        }


def _path_system(H: CoefficientBlock, tau: float) -> DiracSystem:
    mats = tau * H.matrices + (1.0 - tau) * np.eye(H.grid.m)
    return DiracSystem(symbol_hodge_dirac(H.grid, H.N), MultOp(H.grid, mats, "path", {"tau": tau}))


def continuity_path(A: CoefficientBlock, steps: int = 11, probes: int = 4, seed: int = 0) -> ContinuityReport:
    """Trace-map conditioning and projection drift along ``B_tau = tau A_hat + (1 - tau) I``."""
    if steps < 2:
        raise ConfigurationError("need at least two steps", steps=steps)
    H = hat_transform(A)
    N, grid = A.N, A.grid
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((probes,) + grid.field_shape) + 1j * rng.standard_normal((probes,) + grid.field_shape)
    hodge = symbol_hodge_dirac(grid, N)
    X = hodge.project_range_array(X).reshape(probes, -1).T
    X /= np.linalg.norm(X, axis=0)

    taus = [i / (steps - 1) for i in range(steps)]
    conds, smins, proj, failures = [], [], [], []
    for tau in taus:
        system = _path_system(H, tau)
        if not system.validated:
            failures.append({"tau": tau, "report": system.report.to_dict()})
            break
        _, s, _ = trace_map(system, N)
        conds.append(float(s[0] / s[-1]))
        smins.append(float(s[-1]))
        proj.append(positive_projection(system, X))
    h = 1.0 / (steps - 1)
    drift = [float(np.max(np.linalg.norm(b - a, axis=0))) for a, b in zip(proj, proj[1:])]
    slopes = [d / h for d in drift]

    order = None
    if not failures:
        mid = 0.5
        E = [positive_projection(_path_system(H, mid + dt), X) for dt in (0.0, h, h / 2)]
        d1 = float(np.max(np.linalg.norm(E[1] - E[0], axis=0)))
        d2 = float(np.max(np.linalg.norm(E[2] - E[0], axis=0)))
        order = math.log2(d1 / d2) if d1 > 0 and d2 > 0 else None
    return ContinuityReport(taus[: len(conds)], conds, smins, drift, slopes, order, failures)
