"""Principal part ``gamma_t`` of ``Theta_t = Q_t B`` and dyadic Carleson box integrals."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, RangeError
from ..operators import DiracSystem
from ..spectral import Field, Grid, multi_indices
from ..calculus.quadrature import Quadrature
from ..calculus.resolvent import engine
from .cubes import DyadicCube, block_mean, block_sum, level_of, level_side, pt_array, st_array, top_level

LOG2 = math.log(2.0)


def polynomial_map(system: DiracSystem):
    """Top-degree coefficient map of ``D`` on polynomials of degree ``k``.

    For ``L(x) = sum_{|beta| = k} c_beta x^beta`` the field ``DL`` is the constant
    ``sum_beta beta! A_beta c_beta``. Returns the ``m x (m p)`` matrix of that map
    and the multi-indices, in the order of the coefficient blocks.
    """
    D = system.D
    if not D.homogeneous:
        raise ConfigurationError("constant fields DL need a homogeneous D")
    coeffs = D.derivative_coefficients()
    betas = multi_indices(system.grid.n, system.k)
    blocks = [math.prod(math.factorial(b) for b in beta) * coeffs[beta] for beta in betas]
    return np.hstack(blocks), betas


def image_subspace(system: DiracSystem, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the space of constants ``DL``, ``L`` of degree ``k``."""
    M, _ = polynomial_map(system)
    U, s, _ = np.linalg.svd(M)
    r = int(np.sum(s > tol * max(s[0], 1e-300))) if s.size else 0
    return U[:, :r]


def gamma_matrices(system: DiracSystem, t: float, method: str = "auto") -> np.ndarray:
    """``gamma_t(x)``, shape ``grid.shape + (m, m)``: column ``j`` is ``Q_t`` applied to the field ``B e_j``."""
    grid = system.grid
    eng = engine(system, "BD", method)
    cols = np.moveaxis(system.B.matrices, -1, 0)  # B e_j as fields, (m,) + field_shape
    cols = np.broadcast_to(cols, (grid.m,) + grid.field_shape)
    out = eng.qt_cols(t, eng.to_cols(np.ascontiguousarray(cols)))
    return np.moveaxis(eng.to_fields(out), 0, -1)


def pointwise_norm(mats: np.ndarray, basis: np.ndarray | None = None) -> np.ndarray:
    """Operator norm of each ``gamma(x)``, optionally restricted to the span of ``basis``."""
    if basis is not None:
        mats = mats @ basis
    if mats.shape[-1] == 0:
        return np.zeros(mats.shape[:-2])
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


@dataclass
class PrincipalPart:
    t: float
    level: int
    matrices: np.ndarray
    subspace: np.ndarray

    @property
    def restricted(self) -> np.ndarray:
        return self.matrices @ self.subspace

    def norms(self, restrict: bool = True) -> np.ndarray:
        return pointwise_norm(self.matrices, self.subspace if restrict else None)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        """``gamma_t(x) f(x)`` samplewise for an array with trailing fiber axis."""
        return np.einsum("...ij,...j->...i", self.matrices, arr)


def principal_part(system: DiracSystem, t: float, method: str = "auto") -> PrincipalPart:
    system.require_validated("the principal part")
    return PrincipalPart(t, level_of(system.grid, t), gamma_matrices(system, t, method), image_subspace(system))


def cube_average_bound(pp: PrincipalPart, grid: Grid, restrict: bool = True) -> dict:
    """``(1/|Q|) int_Q |gamma_t|^2`` over the cubes of ``Delta_t``."""
    avg = block_mean(pp.norms(restrict) ** 2, grid.n, pp.level).reshape(-1)
    med = float(np.median(avg))
    return {
        "t": pp.t,
        "level": pp.level,
        "max": float(avg.max()),
        "median": med,
        "max_over_median": float(avg.max() / med) if med > 0 else float("inf") if avg.max() > 0 else 1.0,
        "values": avg,
    }


def gamma_st_ratio(pp: PrincipalPart, f: Field) -> float:
    """``||gamma_t S_t f|| / ||f||``."""
    g = pp.apply(st_array(f.grid, f.values, pp.level))
    return float(np.sqrt(np.sum(np.abs(g) ** 2) * f.grid.cell_volume)) / f.norm()


def _field_norm2(grid, arr) -> float:
    return float(np.sum(np.abs(arr) ** 2) * grid.cell_volume)


def ppa_defect(system: DiracSystem, f: Field, q: Quadrature, method: str = "auto") -> dict:
    """Quadratures of the principal-part approximation over the representable ``t``.

    ``ppa``: ``int ||Theta_t P_t f - gamma_t S_t f||^2 dt/t / ||f||^2``;
    ``head``: ``int ||Theta_t (I - P_t) f||^2 dt/t / ||f||^2``;
    ``full``: ``int ||Theta_t f - gamma_t S_t f||^2 dt/t / ||f||^2``.
    The last two are the meaningful bounded quantities when ``f`` is in the range of ``D``.
    Nodes of ``q`` outside ``(h/2, period]`` are dropped and listed under ``dropped``.
    """
    system.require_validated("the principal part approximation")
    grid = system.grid
    lo, hi = grid.spacing / 2, grid.period
    nodes, weights = q.nodes()
    keep = (nodes > lo * (1 + 1e-12)) & (nodes <= hi)
    eng = engine(system, "BD", method)
    fv = f.values
    Bf = system.B.apply_array(fv[None])[0]
    acc = {"ppa": 0.0, "head": 0.0, "full": 0.0}
    for t, w in zip(nodes[keep], weights[keep]):
        j = level_of(grid, t)
        gam = gamma_matrices(system, t, method)
        gsf = np.einsum("...ij,...j->...i", gam, st_array(grid, fv, j))
        PtBf = system.B.apply_array(pt_array(grid, fv, t)[None])[0]
        X = eng.to_cols(np.stack([PtBf, Bf]))
        out = eng.to_fields(eng.qt_cols(t, X))
        theta_p, theta = out[0], out[1]
        acc["ppa"] += w * _field_norm2(grid, theta_p - gsf)
        acc["head"] += w * _field_norm2(grid, theta - theta_p)
        acc["full"] += w * _field_norm2(grid, theta - gsf)
    f2 = f.norm() ** 2
    res = {key: val / f2 for key, val in acc.items()}
    res["window"] = [float(nodes[keep].min()), float(nodes[keep].max())] if keep.any() else []
    res["dropped"] = int((~keep).sum())
    return res


# ---------------------------------------------------------------------------
# Carleson box integrals


@dataclass
class GammaFamily:
    """``gamma_t`` sampled on dyadic levels; the nodes at level ``j`` carry weights summing to ``log 2``."""

    grid: Grid
    t: np.ndarray
    weights: np.ndarray
    matrices: np.ndarray  # (T,) + grid.shape + (m, m)
    subspace: np.ndarray | None = None
    levels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.weights.shape or len(self.matrices) != self.t.size:
            raise ConfigurationError("t, weights and matrices must have matching lengths")
        try:
            self.levels = np.array([level_of(self.grid, t) for t in self.t], dtype=int)
        except RangeError as exc:
            raise RangeError("a node of the t-grid has no dyadic level", **exc.details) from exc
        top = int(self.levels.max()) if self.levels.size else -1
        sums = np.bincount(self.levels, weights=self.weights, minlength=top + 1)
        bad = [j for j in range(top + 1) if abs(sums[j] - LOG2) > 1e-12]
        if bad:
            raise ConfigurationError(
                "t-grid is not dyadic-aligned: every level from the grid scale up must carry total weight log 2",
                levels=bad,
                weights=[float(sums[j]) for j in bad],
            )

    @property
    def top(self) -> int:
        return int(self.levels.max())

    def energy(self, restrict: bool) -> np.ndarray:
        """Per-level weighted ``sum |gamma_t(x)|^2``, shape ``(top+1,) + grid.shape``."""
        basis = self.subspace if restrict else None
        if restrict and basis is None:
            raise ConfigurationError("no subspace recorded for the restricted norm")
        out = np.zeros((self.top + 1,) + self.grid.shape)
        for lvl, w, mats in zip(self.levels, self.weights, self.matrices):
            out[lvl] += w * pointwise_norm(mats, basis) ** 2
        return out


def level_nodes(grid: Grid, per_level: int = 1, top: int | None = None):
    """Nodes ``h 2^j 2^(-(i + 1/2)/s)`` and weights ``log 2 / s`` for levels ``0..top``."""
    J = top_level(grid) if top is None else top
    if per_level < 1:
        raise ConfigurationError("per_level must be at least 1", per_level=per_level)
    t, w = [], []
    for j in range(J + 1):
        for i in range(per_level):
            t.append(level_side(grid, j) * 2.0 ** (-(i + 0.5) / per_level))
            w.append(LOG2 / per_level)
    return np.array(t), np.array(w)


def gamma_family(system: DiracSystem, per_level: int = 1, top: int | None = None, method: str = "auto") -> GammaFamily:
    system.require_validated("the principal part")
    t, w = level_nodes(system.grid, per_level, top)
    mats = np.stack([gamma_matrices(system, ti, method) for ti in t])
    return GammaFamily(system.grid, t, w, mats, image_subspace(system))


@dataclass
class CarlesonReport:
    boxes: dict  # level -> array of box integrals, one per cube
    normalized: dict
    norm_squared: float
    argmax: DyadicCube | None
    restriction: str
    subspace_dim: int

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_squared)

    def to_dict(self) -> dict:
        return {
            "norm_squared": self.norm_squared,
            "norm": self.norm,
            "argmax": self.argmax.to_dict() if self.argmax is not None else None,
            "restriction": self.restriction,
            "subspace_dim": self.subspace_dim,
            "max_per_level": {str(j): float(v.max()) for j, v in self.normalized.items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["level", "corner", "box_integral", "normalized"])
        for j in sorted(self.boxes):
            for idx in np.ndindex(self.boxes[j].shape):
                w.writerow([j, " ".join(map(str, idx)), repr(float(self.boxes[j][idx])), repr(float(self.normalized[j][idx]))])
        return buf.getvalue()


def carleson_norm(family: GammaFamily, restrict_to_D: bool = True) -> CarlesonReport:
    """Box integrals ``int int_{R(Q)} |gamma_t(x)|^2 dx dt/t`` with ``R(Q) = Q x (0, l(Q)]``.

    The ``t``-integral over the levels ``j <= level(Q)`` is the weighted sum of the
    family's nodes; levels below the grid scale are not represented.
    """
    grid = family.grid
    E = family.energy(restrict_to_D)
    boxes, normalized = {}, {}
    best, arg = -1.0, None
    for L in range(family.top + 1):
        box = sum(block_sum(E[j], grid.n, L) for j in range(L + 1)) * grid.cell_volume
        vol = level_side(grid, L) ** grid.n
        boxes[L] = box
        normalized[L] = box / vol
        i = int(np.argmax(normalized[L]))
        if normalized[L].flat[i] > best:
            best = float(normalized[L].flat[i])
            arg = DyadicCube(grid, L, np.unravel_index(i, normalized[L].shape))
    dim = family.subspace.shape[1] if restrict_to_D and family.subspace is not None else grid.m
    return CarlesonReport(boxes, normalized, max(best, 0.0), arg, "D" if restrict_to_D else "full", dim)


def _random_potential(grid: Grid, rng, bandwidth: int) -> np.ndarray:
    coeffs = np.zeros(grid.field_shape, dtype=np.complex128)
    kint = np.fft.fftfreq(grid.points_per_axis, d=1.0 / grid.points_per_axis)
    mesh = np.meshgrid(*([kint] * grid.n), indexing="ij")
    keep = np.max(np.abs(np.stack(mesh)), axis=0) <= bandwidth
    noise = rng.standard_normal(grid.field_shape) + 1j * rng.standard_normal(grid.field_shape)
    coeffs[keep] = noise[keep]
    return Field.from_fourier(grid, coeffs).values


def carleson_embedding_ratio(system: DiracSystem, family: GammaFamily, trials: int = 100, seed: int = 0, restrict_to_D: bool = True) -> dict:
    """``kappa = int ||gamma_t S_t Dv||^2 dt/t / (N ||Dv||^2)`` over random ``v``, ``N`` the squared Carleson norm.

    Potentials ``v`` are random trigonometric polynomials with bandwidths spread
    over all dyadic scales of the grid.
    """
    grid = system.grid
    report = carleson_norm(family, restrict_to_D)
    N = report.norm_squared
    rng = np.random.default_rng(seed)
    widths = [2**i for i in range(top_level(grid))]
    mats = family.matrices
    if restrict_to_D:
        proj = family.subspace @ np.conj(family.subspace.T)
        mats = mats @ proj
    kappas = []
    for i in range(trials):
        v = _random_potential(grid, rng, widths[i % len(widths)])
        Dv = system.D.apply_array(v[None])[0]
        d2 = _field_norm2(grid, Dv)
        if d2 == 0:
            continue
        lhs = 0.0
        for lvl, w, g in zip(family.levels, family.weights, mats):
            lhs += w * _field_norm2(grid, np.einsum("...ij,...j->...i", g, st_array(grid, Dv, lvl)))
        kappas.append(lhs / d2 / N if N > 0 else (0.0 if lhs == 0 else np.inf))
    kappas = np.array(kappas)
    return {"kappa": float(kappas.max()), "kappas": kappas, "carleson_norm_squared": N, "trials": int(kappas.size)}
