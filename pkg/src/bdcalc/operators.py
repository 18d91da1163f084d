"""Constant-coefficient operators D, multiplication operators B, and the checks
that a pair (D, B) meets the structural assumptions of the calculus.

D is stored through its Fourier symbol on the lattice of a :class:`Grid`; B through
one ``m x m`` matrix per spatial sample.  :func:`validate` measures the constants
attached to each hypothesis and records where the worst case occurs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import BudgetError, ConfigurationError, DimensionError, ValidationError
from .spectral import Field, Grid, Multiplier, apply_symbol_array, multi_indices

DEFAULT_BUDGET = 4096
_RANK_RTOL = 1e-9


# ---------------------------------------------------------------------------
# D: symbols


@dataclass(frozen=True, eq=False)
class SymbolOp:
    grid: Grid
    order_k: int
    symbol: Callable[[np.ndarray], np.ndarray]
    homogeneous: bool
    kind: str
    constant_part: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @cached_property
    def lattice(self) -> np.ndarray:
        arr = np.asarray(self.symbol(self.grid.frequencies()), dtype=np.complex128)
        expected = self.grid.shape + (self.grid.m, self.grid.m)
        if arr.shape != expected:
            raise DimensionError("symbol returned the wrong shape", expected=list(expected), got=list(arr.shape))
        arr.setflags(write=False)
        return arr

    @property
    def multiplier(self) -> Multiplier:
        return Multiplier(self.grid, self.lattice)

    @cached_property
    def _eig(self):
        # The lattice symbol is Hermitian; symmetrize to remove rounding noise before eigh.
        herm = 0.5 * (self.lattice + np.conj(np.swapaxes(self.lattice, -1, -2)))
        vals, vecs = np.linalg.eigh(herm)
        tol = _RANK_RTOL * max(1.0, float(np.max(np.abs(vals))))
        return vals, vecs, np.abs(vals) > tol

    @cached_property
    def range_projector(self) -> np.ndarray:
        """Per-frequency orthogonal projector onto the range of the symbol."""
        vals, vecs, mask = self._eig
        sel = vecs * mask[..., None, :]
        proj = np.matmul(sel, np.conj(np.swapaxes(vecs, -1, -2)))
        proj.setflags(write=False)
        return proj

    def apply(self, f: Field) -> Field:
        if f.grid != self.grid:
            raise DimensionError("operator and field live on different grids")
        return Field(self.grid, apply_symbol_array(self.grid, self.lattice, f.values))

    def apply_array(self, arr: np.ndarray) -> np.ndarray:
        return apply_symbol_array(self.grid, self.lattice, arr)

    def project_range_array(self, arr: np.ndarray) -> np.ndarray:
        return apply_symbol_array(self.grid, self.range_projector, arr)

    def _basis(self, want_range: bool) -> np.ndarray:
        grid = self.grid
        vals, vecs, mask = self._eig
        sel = mask if want_range else ~mask
        npts = grid.num_points
        flat_vecs = vecs.reshape(npts, grid.m, grid.m)
        flat_sel = sel.reshape(npts, grid.m)
        q_idx, j_idx = np.nonzero(flat_sel)
        xi = grid.frequencies().reshape(npts, grid.n)
        x = grid.coordinates().reshape(npts, grid.n)
        phases = np.exp(1j * (x @ xi[q_idx].T)) / np.sqrt(npts)  # (npts, r)
        u = flat_vecs[q_idx, :, j_idx]  # (r, m)
        basis = phases[:, None, :] * u.T[None, :, :]
        return basis.reshape(grid.dof, len(q_idx))

    def range_basis(self, budget: int = DEFAULT_BUDGET) -> np.ndarray:
        """Orthonormal (Euclidean) basis of the discrete range of D, one column per mode."""
        self.grid.check_budget(budget)
        return self._cached_basis(True)

    def null_basis(self, budget: int = DEFAULT_BUDGET) -> np.ndarray:
        self.grid.check_budget(budget)
        return self._cached_basis(False)

    def _cached_basis(self, want_range):
        key = "_range_basis" if want_range else "_null_basis"
        cached = self.__dict__.get(key)
        if cached is None:
            cached = self._basis(want_range)
            cached.setflags(write=False)
            self.__dict__[key] = cached
        return cached

    def derivative_coefficients(self) -> dict:
        """Constant matrices ``A_beta`` with ``symbol(xi) = sum_beta A_beta (i xi)^beta``.

        Only the homogeneous top-order part is represented; recovered by a
        least-squares fit on random directions.
        """
        k = self.order_k
        betas = multi_indices(self.grid.n, k)
        rng = np.random.default_rng(12345)
        pts = rng.standard_normal((4 * len(betas) + 4, self.grid.n))
        values = np.asarray(self.symbol(pts), dtype=np.complex128)
        if self.constant_part is not None:
            values = values - self.constant_part
        design = np.stack([np.prod((1j * pts) ** np.asarray(b), axis=-1) for b in betas], axis=-1)
        m = self.grid.m
        coef, *_ = np.linalg.lstsq(design, values.reshape(len(pts), m * m), rcond=None)
        return {b: coef[i].reshape(m, m) for i, b in enumerate(betas)}


def _require_fiber(grid: Grid, m: int, what: str):
    if grid.m != m:
        raise ConfigurationError(f"{what} needs fiber dimension {m}, grid has m={grid.m}", expected=m, got=grid.m)


def symbol_dirac1d(grid: Grid) -> SymbolOp:
    """``D = -i d/dx`` on the circle, symbol ``xi``."""
    if grid.n != 1 or grid.m != 1:
        raise ConfigurationError("dirac1d requires n = m = 1", n=grid.n, m=grid.m)

    def symbol(xi):
        return np.asarray(xi, dtype=np.complex128)[..., 0][..., None, None]

    return SymbolOp(grid, 1, symbol, True, "dirac1d")


def _hodge_blocks(xi: np.ndarray, N: int, m: int) -> np.ndarray:
    n = xi.shape[-1]
    out = np.zeros(xi.shape[:-1] + (m, m), dtype=np.complex128)
    eye = np.eye(N)
    for j in range(n):
        c = (1j * xi[..., j])[..., None, None] * eye
        cols = slice(N + j * N, N + (j + 1) * N)
        out[..., :N, cols] = c  # div
        out[..., cols, :N] = -c  # -grad
    return out


def symbol_hodge_dirac(grid: Grid, N: int = 1) -> SymbolOp:
    """``D = [[0, div], [-grad, 0]]`` acting on ``C^N`` times ``(C^N)^n``."""
    m = N * (1 + grid.n)
    _require_fiber(grid, m, "hodge_dirac")

    def symbol(xi):
        return _hodge_blocks(np.asarray(xi, dtype=float), N, m)

    return SymbolOp(grid, 1, symbol, True, "hodge_dirac", params={"N": N})


def symbol_higher_order(grid: Grid, k: int, N: int = 1) -> SymbolOp:
    """``D = [[0, (grad^k)^*], [grad^k, 0]]`` where ``grad^k`` stacks all ``d^alpha``, ``|alpha| = k``."""
    if k < 1:
        raise ConfigurationError("order k must be at least 1", k=k)
    alphas = multi_indices(grid.n, k)
    p = len(alphas)
    m = N + N * p
    _require_fiber(grid, m, f"higher_order(k={k}, N={N})")
    exps = [np.asarray(a) for a in alphas]
    eye = np.eye(N)

    def symbol(xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1] + (m, m), dtype=np.complex128)
        for a, e in enumerate(exps):
            c = np.prod((1j * xi) ** e, axis=-1)[..., None, None] * eye
            rows = slice(N + a * N, N + (a + 1) * N)
            out[..., rows, :N] = c
            out[..., :N, rows] = np.conj(c)
        return out

    return SymbolOp(grid, k, symbol, True, "higher_order", params={"k": k, "N": N, "p": p})


def symbol_inhomogeneous(grid: Grid) -> SymbolOp:
    """First-order part of Hodge type plus a constant coupling of the first and last slots."""
    n = grid.n
    m = n + 2
    _require_fiber(grid, m, "inhomogeneous")
    d0 = np.zeros((m, m), dtype=np.complex128)
    d0[0, m - 1] = d0[m - 1, 0] = 1.0
    d0.setflags(write=False)

    def first_order(xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1] + (m, m), dtype=np.complex128)
        out[..., : n + 1, : n + 1] = _hodge_blocks(xi, 1, n + 1)
        return out

    def symbol(xi):
        return first_order(xi) + d0

    return SymbolOp(
        grid, 1, symbol, False, "inhomogeneous", constant_part=d0, params={"first_order": first_order}
    )


def symbol_custom(grid: Grid, order_k: int, symbol, homogeneous: bool = True) -> SymbolOp:
    return SymbolOp(grid, order_k, symbol, homogeneous, "custom")


# ---------------------------------------------------------------------------
# B: multiplication operators


def _hermitian_part(mats):
    return 0.5 * (mats + np.conj(np.swapaxes(mats, -1, -2)))


def _skew_part(mats):
    return (mats - np.conj(np.swapaxes(mats, -1, -2))) / 2j


def numerical_range_angle(mats: np.ndarray) -> np.ndarray:
    """Exact half-angle of the numerical range for each matrix in a stack.

    For ``M = H + iK`` with ``H`` positive definite the angle is
    ``arctan(max |eig(H^{-1/2} K H^{-1/2})|)``.  Matrices whose Hermitian part is not
    positive definite get ``pi/2``.
    """
    mats = np.asarray(mats, dtype=np.complex128)
    flat = mats.reshape((-1,) + mats.shape[-2:])
    H = _hermitian_part(flat)
    K = _skew_part(flat)
    K = _hermitian_part(K)
    out = np.full(flat.shape[0], np.pi / 2)
    hmin = np.linalg.eigvalsh(H)[:, 0]
    ok = hmin > 0
    if np.any(ok):
        L = np.linalg.cholesky(H[ok])
        X = np.linalg.solve(L, K[ok])
        Y = np.linalg.solve(L, np.conj(np.swapaxes(X, -1, -2)))
        ev = np.linalg.eigvalsh(_hermitian_part(Y))
        out[ok] = np.arctan(np.max(np.abs(ev), axis=-1))
    return out.reshape(mats.shape[:-2])


class MultOp:
    """Per-sample matrices ``B(x)``; immutable.

    ``delta`` is the pointwise lower bound ``min_x lambda_min(Re B(x))`` (a valid
    accretivity constant on every subspace).  The constant on R(D) is measured by
    :func:`validate`.
    """

    def __init__(self, grid: Grid, matrices, kind: str = "custom", params: dict | None = None):
        arr = np.array(matrices, dtype=np.complex128)
        if arr.ndim == 2 and arr.shape == (grid.m, grid.m):
            arr = np.broadcast_to(arr, grid.shape + arr.shape).copy()
        if arr.shape != grid.shape + (grid.m, grid.m):
            raise DimensionError(
                "coefficient matrices must have shape lattice + (m, m)",
                expected=list(grid.shape + (grid.m, grid.m)),
                got=list(arr.shape),
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("coefficient matrices must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.matrices = arr
        self.kind = kind
        self.params = dict(params or {})

    @cached_property
    def norm(self) -> float:
        flat = self.matrices.reshape(-1, self.grid.m, self.grid.m)
        return float(np.max(np.linalg.norm(flat, ord=2, axis=(-2, -1))))

    @cached_property
    def pointwise_hermitian_min(self) -> np.ndarray:
        return np.linalg.eigvalsh(_hermitian_part(self.matrices))[..., 0]

    @property
    def delta(self) -> float:
        return float(np.min(self.pointwise_hermitian_min))

    @cached_property
    def pointwise_angle(self) -> np.ndarray:
        return numerical_range_angle(self.matrices)

    @property
    def omega(self) -> float:
        return float(np.max(self.pointwise_angle))

    @cached_property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrices, np.broadcast_to(np.eye(self.grid.m), self.matrices.shape)))

    def adjoint(self) -> "MultOp":
        return MultOp(self.grid, np.conj(np.swapaxes(self.matrices, -1, -2)), kind=f"adjoint({self.kind})", params=self.params)

    def apply_array(self, arr: np.ndarray) -> np.ndarray:
        return np.matmul(self.matrices, arr[..., None])[..., 0]

    def apply(self, f: Field) -> Field:
        if f.grid != self.grid:
            raise DimensionError("operator and field live on different grids")
        return Field(self.grid, self.apply_array(f.values))

    def dense(self) -> np.ndarray:
        g = self.grid
        npts, m = g.num_points, g.m
        out = np.zeros((npts, m, npts, m), dtype=np.complex128)
        idx = np.arange(npts)
        out[idx, :, idx, :] = self.matrices.reshape(npts, m, m)
        return out.reshape(g.dof, g.dof)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "norm": self.norm, "pointwise_delta": self.delta, "omega": self.omega}


def _random_fields(grid: Grid, rng, count: int, smooth_modes: int | None) -> np.ndarray:
    """``count`` complex Gaussian sample arrays on the grid.

    With ``smooth_modes = K`` the fields are random trigonometric polynomials with
    integer frequencies ``|k_i| <= K``, drawn coefficient by coefficient, so a fixed
    seed gives the same continuum function on every grid with more than ``2K``
    points per axis. Each field has unit root-mean-square over the torus.
    """
    if smooth_modes is None:
        raw = rng.standard_normal((count,) + grid.shape) + 1j * rng.standard_normal((count,) + grid.shape)
        return raw / np.sqrt(2.0)
    K = int(smooth_modes)
    P = grid.points_per_axis
    if K < 0 or 2 * K + 1 > P:
        raise ConfigurationError("smooth_modes must satisfy 0 <= 2K+1 <= points_per_axis", smooth_modes=K, points=P)
    width = 2 * K + 1
    shape = (count,) + (width,) * grid.n
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c /= np.sqrt(np.sum(np.abs(c) ** 2, axis=tuple(range(1, grid.n + 1)), keepdims=True))
    coeffs = np.zeros((count,) + grid.shape, dtype=np.complex128)
    idx = np.arange(-K, K + 1) % P  # centred frequency order -> FFT storage order
    coeffs[(slice(None),) + np.ix_(*([idx] * grid.n))] = c
    return np.fft.ifftn(coeffs, axes=tuple(range(1, grid.n + 1))) * grid.num_points


def random_accretive(
    grid: Grid,
    delta_target: float,
    skew_scale: float,
    seed: int,
    smooth_modes: int | None = None,
) -> MultOp:
    """``B(x) = delta I + W W^* + i * skew * S`` with ``S`` Hermitian; pointwise accretive.

    ``skew_scale = 0`` gives self-adjoint coefficients.  ``smooth_modes`` keeps only
    Fourier modes up to that integer frequency in the random entries (rough if None).
    """
    if not delta_target > 0:
        raise ConfigurationError("delta_target must be positive", delta_target=delta_target)
    if skew_scale < 0:
        raise ConfigurationError("skew_scale must be nonnegative", skew_scale=skew_scale)
    m = grid.m
    rng = np.random.default_rng(seed)
    fields = _random_fields(grid, rng, 2 * m * m, smooth_modes)
    W = np.moveaxis(fields[: m * m], 0, -1).reshape(grid.shape + (m, m)) / np.sqrt(m)
    S = np.moveaxis(fields[m * m :], 0, -1).reshape(grid.shape + (m, m)) / np.sqrt(m)
    S = _hermitian_part(S)
    mats = delta_target * np.eye(m) + W @ np.conj(np.swapaxes(W, -1, -2)) + 1j * skew_scale * S
    params = {
        "delta_target": delta_target,
        "skew_scale": skew_scale,
        "seed": seed,
        "smooth_modes": smooth_modes,
    }
    return MultOp(grid, mats, "random_accretive", params)


def identity_multop(grid: Grid) -> MultOp:
    return MultOp(grid, np.eye(grid.m), "identity")


def scalar_multop(grid: Grid, value: complex) -> MultOp:
    return MultOp(grid, value * np.eye(grid.m), "scalar", {"value": value})


def block_diag_multop(grid: Grid, identity_dim: int, A: MultOp | np.ndarray) -> MultOp:
    """``B = diag(I_identity_dim, A(x))`` (the coefficient of the square-root problem)."""
    A_mats = A.matrices if isinstance(A, MultOp) else np.asarray(A, dtype=np.complex128)
    r = grid.m - identity_dim
    if A_mats.shape[-2:] != (r, r):
        raise DimensionError("block A has the wrong size", expected=r, got=list(A_mats.shape[-2:]))
    A_mats = np.broadcast_to(A_mats, grid.shape + (r, r))
    mats = np.zeros(grid.shape + (grid.m, grid.m), dtype=np.complex128)
    mats[..., :identity_dim, :identity_dim] = np.eye(identity_dim)
    mats[..., identity_dim:, identity_dim:] = A_mats
    return MultOp(grid, mats, "block_diag", {"identity_dim": identity_dim})


def cauchy_multop(grid: Grid, a_samples) -> MultOp:
    """Multiplication by ``1/a`` for scalar samples ``a`` (n = m = 1)."""
    if grid.m != 1:
        raise ConfigurationError("cauchy coefficients need m = 1", m=grid.m)
    a = np.asarray(a_samples, dtype=np.complex128).reshape(grid.shape)
    if np.any(a == 0):
        raise ConfigurationError("a vanishes at some sample")
    return MultOp(grid, (1.0 / a)[..., None, None], "cauchy")


def make_multop(grid: Grid, cfg) -> MultOp:
    """Build a coefficient operator from a cfg dict (``{"kind": ..., ...}``)."""
    if isinstance(cfg, MultOp):
        return cfg
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind")
    if kind == "identity":
        return identity_multop(grid)
    if kind == "scalar":
        v = cfg["value"]
        return scalar_multop(grid, complex(*v) if isinstance(v, (list, tuple)) else complex(v))
    if kind == "random_accretive":
        for key in ("delta_target", "skew_scale", "seed"):
            if key not in cfg:
                raise ConfigurationError(f"random_accretive requires '{key}'", key=key)
        return random_accretive(
            grid, float(cfg["delta_target"]), float(cfg["skew_scale"]), int(cfg["seed"]), cfg.get("smooth_modes")
        )
    if kind == "file":
        fgrid, mats = read_coefficients(cfg["path"])
        if fgrid != grid:
            raise DimensionError("coefficient file grid differs from the configured grid", file=fgrid.to_dict(), grid=grid.to_dict())
        return MultOp(grid, mats, "file", {"path": str(cfg["path"])})
    if kind == "block_diag":
        ident = int(cfg["identity_dim"])
        inner_grid = grid.with_fiber(grid.m - ident)
        A = make_multop(inner_grid, cfg["A"])
        return block_diag_multop(grid, ident, A)
    if kind == "cauchy":
        a = cfg["a"]
        if isinstance(a, dict):
            a = cauchy_coefficient(grid, **a)
        return cauchy_multop(grid, a)
    raise ConfigurationError(f"unknown coefficient kind {kind!r}", kind=kind)


def cauchy_coefficient(grid: Grid, kind: str = "constant", value=1.0, seed: int | None = None, amplitude: float = 1.0):
    """Scalar samples ``a(x)`` with ``Re a > 0``: constant or a rough Lipschitz-graph slope ``1 + i g'(x)``."""
    if kind == "constant":
        v = complex(*value) if isinstance(value, (list, tuple)) else complex(value)
        return np.full(grid.shape, v)
    if kind == "rough_graph":
        if seed is None:
            raise ConfigurationError("rough_graph needs a seed")
        rng = np.random.default_rng(seed)
        slope = amplitude * rng.uniform(-1.0, 1.0, grid.shape)
        return 1.0 + 1j * slope
    raise ConfigurationError(f"unknown cauchy coefficient kind {kind!r}")


# ---------------------------------------------------------------------------
# coefficient files


def write_coefficients(path, grid: Grid, matrices, payload: str = "json") -> None:
    """Write coefficients: JSON header, samples row-major, entries column-major as (re, im)."""
    mats = np.asarray(matrices, dtype=np.complex128).reshape(grid.shape + (grid.m, grid.m))
    entries = np.swapaxes(mats, -1, -2).reshape(-1)  # column-major within each sample
    pairs = np.stack([entries.real, entries.imag], axis=-1).reshape(-1)
    header = {"format": "bdcalc.coefficients", "version": 1, **grid.to_dict(), "payload": payload}
    path = os.fspath(path)
    if payload == "json":
        header["entries"] = pairs.tolist()
    elif payload == "binary":
        data_file = os.path.splitext(os.path.basename(path))[0] + ".bin"
        header["data_file"] = data_file
        pairs.astype("<f8").tofile(os.path.join(os.path.dirname(path) or ".", data_file))
    else:
        raise ConfigurationError("payload must be 'json' or 'binary'", payload=payload)
    with open(path, "w") as fh:
        json.dump(header, fh)


def read_coefficients(path):
    path = os.fspath(path)
    try:
        with open(path) as fh:
            header = json.load(fh)
        grid = Grid(int(header["n"]), int(header["m"]), int(header["points_per_axis"]), float(header["period"]))
        if header.get("payload") == "binary":
            pairs = np.fromfile(os.path.join(os.path.dirname(path) or ".", header["data_file"]), dtype="<f8")
        else:
            pairs = np.asarray(header["entries"], dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"cannot parse coefficient file {path}: {exc}", path=path) from exc
    expected = 2 * grid.num_points * grid.m * grid.m
    if pairs.size != expected:
        raise ConfigurationError(
            "coefficient payload size does not match square m x m matrices per sample",
            expected=expected,
            got=int(pairs.size),
        )
    entries = pairs[0::2] + 1j * pairs[1::2]
    mats = np.swapaxes(entries.reshape(grid.shape + (grid.m, grid.m)), -1, -2)
    return grid, mats


# ---------------------------------------------------------------------------
# validation


@dataclass
class HypothesisReport:
    h1: bool
    h2: bool
    h3: bool
    h4: bool
    h5: bool
    c3: float
    delta: float
    delta_probe: float
    delta_eig: float
    omega: float
    omega_sampled: float
    b_norm: float
    homogeneity_defect: float
    hermitian_defect: float
    worst_frequency: list
    worst_sample: list
    pointwise_delta: float
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.h1 and self.h2 and self.h3 and self.h4 and self.h5

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["passed"] = self.passed
        return out


def _rayleigh_ritz_min(apply_op, X, iterations=60, depth=6, tol=1e-11, project=None):
    """Smallest eigenvalue of a Hermitian operator by restarted block Krylov Rayleigh-Ritz.

    ``X`` holds starting vectors as columns.  ``project`` (optional) is reapplied to
    keep iterates inside an invariant subspace.
    """
    dim = X.shape[0]
    X, _ = np.linalg.qr(X)
    prev = np.inf
    theta = np.inf
    for _ in range(iterations):
        blocks = [X]
        Y = X
        for _ in range(depth):
            Y = apply_op(Y)
            if project is not None:
                Y = project(Y)
            blocks.append(Y)
        Z = np.concatenate(blocks, axis=1)
        if Z.shape[1] > dim:
            Z = Z[:, :dim]
        Q, R = np.linalg.qr(Z)
        keep = np.abs(np.diag(R)) > 1e-12 * np.max(np.abs(np.diag(R)))
        Q = Q[:, keep]
        if project is not None:
            Q, _ = np.linalg.qr(project(Q))
        AQ = apply_op(Q)
        small = np.conj(Q.T) @ AQ
        small = 0.5 * (small + np.conj(small.T))
        w, v = np.linalg.eigh(small)
        theta = float(w[0])
        X = Q @ v[:, : X.shape[1]]
        if abs(prev - theta) <= tol * max(1.0, abs(theta)):
            break
        prev = theta
    return theta


def validate(
    D: SymbolOp,
    B: MultOp,
    seed: int = 0,
    probes: int = 6,
    dense_limit: int = 2048,
) -> HypothesisReport:
    """Measure the structural assumptions for the pair (D, B).  Failures are recorded, never raised."""
    if D.grid != B.grid:
        raise DimensionError("D and B live on different grids", D=D.grid.to_dict(), B=B.grid.to_dict())
    grid = D.grid
    rng = np.random.default_rng(seed)
    notes = []
    sym = D.lattice
    k = D.order_k

    # self-adjoint symbol
    herm_defect = float(np.max(np.abs(sym - np.conj(np.swapaxes(sym, -1, -2)))))
    h2 = herm_defect <= 1e-13

    # homogeneity on random lattice rays
    xi_all = grid.frequencies().reshape(-1, grid.n)
    nonzero = np.flatnonzero(np.linalg.norm(xi_all, axis=1) > 0)
    rays = xi_all[rng.choice(nonzero, size=min(100, nonzero.size), replace=False)]
    if D.homogeneous:
        a, b = D.symbol(rays), D.symbol(2.0 * rays)
    else:
        first = D.params["first_order"]
        a, b = first(rays), first(2.0 * rays)
        notes.append("homogeneity checked on the first-order part; the constant part is bounded")
    scale = np.maximum(np.max(np.abs(b), axis=(-2, -1)), 1e-300)
    homog_defect = float(np.max(np.max(np.abs(b - 2.0**k * a), axis=(-2, -1)) / scale))
    h1 = homog_defect <= 1e-12

    # coercivity: smallest nonzero singular value versus |xi|^k (or 1 + |xi| without homogeneity)
    vals, _, mask = D._eig
    absval = np.where(mask, np.abs(vals), np.inf)
    smin = np.min(absval, axis=-1)
    xi_norm = np.linalg.norm(grid.frequencies(), axis=-1)
    weight = xi_norm**k if D.homogeneous else 1.0 + xi_norm
    ratio = np.where((xi_norm > 0) & np.isfinite(smin), smin / np.where(weight > 0, weight, 1.0), np.inf)
    c3 = float(np.min(ratio))
    worst_freq = [int(i) for i in np.unravel_index(int(np.argmin(ratio)), ratio.shape)]
    h3 = np.isfinite(c3) and c3 > 0

    # bounded coefficients
    b_norm = B.norm
    h4 = bool(np.isfinite(b_norm))

    # accretivity on R(D): restricted eigen-solve and probe estimator
    herm_mats = _hermitian_part(B.matrices)
    fshape = grid.field_shape

    def as_fields(X):
        return X.T.reshape((X.shape[1],) + fshape)

    def as_cols(arr):
        return arr.reshape(arr.shape[0], -1).T

    def project(X):
        return as_cols(D.project_range_array(as_fields(X)))

    def restricted_op(X):
        PX = project(X)
        return project(as_cols(np.matmul(herm_mats, as_fields(PX)[..., None])[..., 0]))

    if grid.dof <= dense_limit:
        V = D.range_basis(budget=max(dense_limit, grid.dof))
        HV = as_cols(np.matmul(herm_mats, as_fields(V)[..., None])[..., 0])
        small = np.conj(V.T) @ HV
        delta_eig = float(np.linalg.eigvalsh(0.5 * (small + np.conj(small.T)))[0]) if V.shape[1] else np.inf
    else:
        shift = b_norm + 1.0
        op = LinearOperator(
            (grid.dof, grid.dof),
            matvec=lambda x: (restricted_op(x.reshape(-1, 1)) + shift * (x.reshape(-1, 1) - project(x.reshape(-1, 1))))[:, 0],
            dtype=np.complex128,
        )
        delta_eig = float(eigsh(op, k=1, which="SA", tol=1e-10, v0=project(rng.standard_normal((grid.dof, 1)) + 0j)[:, 0])[0][0])
        notes.append("restricted eigen-solve used the matrix-free Lanczos path")

    # probe estimator: D applied to random fields, refined by block Krylov Rayleigh-Ritz
    u = rng.standard_normal((probes,) + fshape) + 1j * rng.standard_normal((probes,) + fshape)
    Du = as_cols(D.apply_array(u))
    col_norm = np.linalg.norm(Du, axis=0)
    good = col_norm > 0
    if np.any(good):
        Du = Du[:, good] / col_norm[good]
        raw = np.real(np.sum(np.conj(Du) * restricted_op(Du), axis=0))
        delta_raw = float(np.min(raw))
        delta_probe = min(delta_raw, _rayleigh_ritz_min(restricted_op, Du, project=project))
    else:
        delta_probe = np.inf
    delta = min(delta_eig, delta_probe)
    h5 = bool(np.isfinite(delta) and delta > 1e-10)
    hmin = B.pointwise_hermitian_min
    worst_sample = [int(i) for i in np.unravel_index(int(np.argmin(hmin)), hmin.shape)]

    # omega: exact per-sample angle, plus a sampled estimate as a cross-check
    omega = B.omega
    flat = B.matrices.reshape(-1, grid.m, grid.m)
    pick = rng.choice(flat.shape[0], size=min(256, flat.shape[0]), replace=False)
    vecs = rng.standard_normal((pick.size, 64, grid.m)) + 1j * rng.standard_normal((pick.size, 64, grid.m))
    quad = np.einsum("svi,sij,svj->sv", np.conj(vecs), flat[pick], vecs)
    omega_sampled = float(np.max(np.abs(np.angle(quad))))
    if omega >= np.pi / 2:
        notes.append("some samples are not pointwise accretive; omega recorded as pi/2")

    return HypothesisReport(
        h1=bool(h1),
        h2=bool(h2),
        h3=bool(h3),
        h4=h4,
        h5=h5,
        c3=c3,
        delta=float(delta),
        delta_probe=float(delta_probe),
        delta_eig=float(delta_eig),
        omega=float(omega),
        omega_sampled=omega_sampled,
        b_norm=float(b_norm),
        homogeneity_defect=homog_defect,
        hermitian_defect=herm_defect,
        worst_frequency=worst_freq,
        worst_sample=worst_sample,
        pointwise_delta=float(np.min(hmin)),
        notes=notes,
    )


# ---------------------------------------------------------------------------
# the pair (D, B)


@dataclass(frozen=True)
class DenseCompression:
    """Dense matrices in the flat layout (Euclidean coordinates)."""

    D: np.ndarray
    B: np.ndarray
    BD: np.ndarray
    DB: np.ndarray
    P_R: np.ndarray


class DiracSystem:
    """A pair (D, B) on a common grid with its hypothesis report and cached machinery."""

    def __init__(self, D: SymbolOp, B: MultOp, report: HypothesisReport | None = None, budget: int = DEFAULT_BUDGET, seed: int = 0):
        if D.grid != B.grid:
            raise DimensionError("D and B live on different grids")
        self.D = D
        self.B = B
        self.grid = D.grid
        self.budget = int(budget)
        self.report = report if report is not None else validate(D, B, seed=seed)
        self._cache = {}

    @property
    def validated(self) -> bool:
        return self.report.passed

    @property
    def k(self) -> int:
        return self.D.order_k

    def require_validated(self, what: str = "this operation"):
        if not self.validated:
            raise ValidationError(f"{what} requires a validated system", report=self.report.to_dict())

    def adjoint(self) -> "DiracSystem":
        """The system (D, B^*)."""
        return DiracSystem(self.D, self.B.adjoint(), budget=self.budget)

    def with_coefficients(self, B: MultOp) -> "DiracSystem":
        return DiracSystem(self.D, B, budget=self.budget)

    # batched fast operators on arrays of shape (r,) + field_shape
    def apply_array(self, arr: np.ndarray, side: str = "BD") -> np.ndarray:
        if side == "BD":
            return self.B.apply_array(self.D.apply_array(arr))
        if side == "DB":
            return self.D.apply_array(self.B.apply_array(arr))
        raise ConfigurationError("side must be 'BD' or 'DB'", side=side)

    def bd(self, f: Field) -> Field:
        return Field(self.grid, self.apply_array(f.values, "BD"))

    def db(self, f: Field) -> Field:
        return Field(self.grid, self.apply_array(f.values, "DB"))

    def dense(self) -> DenseCompression:
        if "dense" not in self._cache:
            self._cache["dense"] = assemble_dense(self)
        return self._cache["dense"]

    def cached(self, key, factory):
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]


def _dense_from_array_op(grid: Grid, op, chunk: int = 512) -> np.ndarray:
    dof = grid.dof
    out = np.empty((dof, dof), dtype=np.complex128)
    for start in range(0, dof, chunk):
        stop = min(dof, start + chunk)
        E = np.zeros((stop - start, dof), dtype=np.complex128)
        E[np.arange(stop - start), np.arange(start, stop)] = 1.0
        res = op(E.reshape((stop - start,) + grid.field_shape))
        out[:, start:stop] = res.reshape(stop - start, dof).T
    return out


def assemble_dense(system: DiracSystem, probes: int = 5, seed: int = 0) -> DenseCompression:
    """Dense BD, DB and the range projector P_R, checked against the fast path."""
    grid = system.grid
    if grid.dof > system.budget:
        raise BudgetError(
            f"dense assembly needs {grid.dof} degrees of freedom but the budget is {system.budget}; "
            "use a coarser grid or construct the system with a larger budget",
            dof=grid.dof,
            budget=system.budget,
        )
    Dm = _dense_from_array_op(grid, system.D.apply_array)
    Pm = _dense_from_array_op(grid, system.D.project_range_array)
    Bm = system.B.dense()
    npts, m = grid.num_points, grid.m
    blocks = system.B.matrices.reshape(npts, m, m)
    BD = np.einsum("xij,xjk->xik", blocks, Dm.reshape(npts, m, -1)).reshape(grid.dof, grid.dof)
    DB = Dm @ Bm
    rng = np.random.default_rng(seed)
    for side, mat in (("BD", BD), ("DB", DB)):
        u = rng.standard_normal((probes,) + grid.field_shape) + 1j * rng.standard_normal((probes,) + grid.field_shape)
        fast = system.apply_array(u, side).reshape(probes, -1)
        slow = (mat @ u.reshape(probes, -1).T).T
        err = np.max(np.linalg.norm(fast - slow, axis=1) / np.maximum(np.linalg.norm(fast, axis=1), 1e-300))
        if err > 1e-10:
            raise ValidationError("dense assembly disagrees with the fast path", side=side, defect=float(err))
    for arr in (Dm, Bm, BD, DB, Pm):
        arr.setflags(write=False)
    return DenseCompression(Dm, Bm, BD, DB, Pm)
