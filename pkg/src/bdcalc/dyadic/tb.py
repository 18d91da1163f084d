"""Adapted test functions, sector covers and the stopping-time decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import BudgetError, ConfigurationError, RangeError
from ..operators import DiracSystem
from ..spectral import Field, multi_indices
from ..calculus.resolvent import engine
from .cubes import DyadicCube, block_mean, expand, level_side, top_level
from .principal import GammaFamily, carleson_norm, gamma_family, image_subspace, polynomial_map, pointwise_norm

MEMBERSHIP_TOL = 1e-10


# ---------------------------------------------------------------------------
# cutoff and polynomial


def smoothstep(x, order: int) -> np.ndarray:
    """Polynomial of degree ``2 order + 1`` rising from 0 to 1 on ``[0, 1]`` with ``order`` flat derivatives at both ends."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    r = order
    out = np.zeros_like(x)
    for i in range(r + 1):
        out += math.comb(r + i, i) * math.comb(2 * r + 1, r - i) * (-x) ** i
    return out * x ** (r + 1)


def _smoothstep_poly(order: int) -> np.polynomial.Polynomial:
    r = order
    coef = np.zeros(2 * r + 2)
    for i in range(r + 1):
        coef[r + 1 + i] = math.comb(r + i, i) * math.comb(2 * r + 1, r - i) * (-1) ** i
    return np.polynomial.Polynomial(coef)


def cutoff_profile(y, side: float, order: int) -> np.ndarray:
    """One-dimensional cutoff: 1 for ``|y| <= side``, 0 for ``|y| >= 1.5 side``."""
    s = (np.abs(y) - side) / (0.5 * side)
    return 1.0 - smoothstep(s, order)


def cutoff_derivative_constants(order: int, max_derivative: int, samples: int = 4001) -> dict:
    """``side^j sup |d^j/dy^j cutoff_profile|`` for ``j = 0..max_derivative`` (independent of ``side``)."""
    poly = _smoothstep_poly(order)
    s = np.linspace(0.0, 1.0, samples)
    out = {}
    for j in range(max_derivative + 1):
        out[j] = float(np.max(np.abs(poly.deriv(j)(s)))) * 2.0**j if j else 1.0
    return out


def minimum_image(grid, center) -> np.ndarray:
    x = grid.coordinates()
    L = grid.period
    return (x - np.asarray(center) + 0.5 * L) % L - 0.5 * L


def _monomials(y, betas) -> np.ndarray:
    return np.stack([np.prod(y ** np.asarray(b), axis=-1) for b in betas], axis=-1)


def _falling(b, a):
    return math.prod(math.factorial(bi) // math.factorial(bi - ai) for bi, ai in zip(b, a))


def _sub_indices(n, max_order):
    return [a for j in range(max_order + 1) for a in multi_indices(n, j)]


# ---------------------------------------------------------------------------
# test functions


@dataclass
class TestFunctionBundle:
    """The test function built on one cube for one direction."""

    __test__ = False  # not a pytest class

    cube: DyadicCube
    w: np.ndarray
    eps: float
    eta: np.ndarray
    coefficients: dict
    polynomial: np.ndarray
    v: Field
    b: Field
    constants: dict
    checks: dict
    k: int = 1
    family: GammaFamily | None = field(default=None, repr=False)

    @property
    def C(self) -> float:
        """Largest measured constant, floored at 2."""
        return max(2.0, max(self.constants.values()))

    def to_dict(self) -> dict:
        return {
            "cube": self.cube.to_dict(),
            "w": [[float(z.real), float(z.imag)] for z in self.w],
            "eps": self.eps,
            "constants": dict(self.constants),
            "C": self.C,
            "checks": dict(self.checks),
        }


def build_test_function(
    system: DiracSystem,
    cube: DyadicCube,
    w,
    eps: float,
    family: GammaFamily | None = None,
    smoothness: int | None = None,
    method: str = "auto",
) -> TestFunctionBundle:
    """``v = (I + i (eps l)^k BD)^{-1} (eta L)`` and ``b = D v`` for a cube of side ``l``.

    ``L`` is the minimal-norm homogeneous polynomial of degree ``k`` centred at the
    cube with ``DL = w``; ``eta`` equals 1 on the doubled cube and vanishes off
    the tripled one. The four measured constants are

    ``C1 = int_Q |v - L|^2 / ((eps l)^(2k) |Q|)``, ``C2 = int_Q |b - w|^2 / |Q|``,
    ``C3 = |avg_Q b - w| / sqrt(eps)``, ``C4 = sum_t int_Q |gamma_t S_t b|^2 / (eps^(-2k) |Q|)``.
    """
    system.require_validated("test functions")
    grid, k = system.grid, system.k
    if cube.grid.shape != grid.shape or cube.grid.period != grid.period or cube.grid.n != grid.n:
        raise ConfigurationError("cube and system live on different grids")
    if not 0 < eps < 1:
        raise ConfigurationError("eps must lie in (0, 1)", eps=eps)
    l = cube.side
    if 3 * l > grid.period:
        raise RangeError("the tripled cube wraps around the torus", side=l, period=grid.period)
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    if w.size != grid.m:
        raise ConfigurationError("w has the wrong length", expected=grid.m, got=w.size)
    M, betas = polynomial_map(system)
    coef, *_ = np.linalg.lstsq(M, w, rcond=None)
    resid = float(np.linalg.norm(M @ coef - w))
    if resid > MEMBERSHIP_TOL * max(1.0, np.linalg.norm(w)):
        raise ConfigurationError("w is not DL for any polynomial L of degree k", residual=resid)
    coef = coef.reshape(len(betas), grid.m)
    order = 3 * k + 3 if smoothness is None else int(smoothness)

    y = minimum_image(grid, cube.center)
    mono = _monomials(y, betas)
    Lvals = mono @ coef
    eta = np.prod(cutoff_profile(y, l, order), axis=-1)
    etaL = eta[..., None] * Lvals

    # masks of Q, 2Q, 3Q in minimum-image coordinates
    half = 0.5 * l
    tol = 1e-9 * grid.spacing
    cheb = np.max(np.abs(y), axis=-1)
    in2 = cheb <= 2 * half + tol
    in3 = cheb < 3 * half - tol
    qmask = cube.mask()

    Dop = system.D.apply_array
    wQ = Dop(etaL[None])[0]
    s = (eps * l) ** k
    eng = engine(system, "BD", method)
    v_arr = eng.to_fields(eng.resolvent_cols(s, eng.to_cols(etaL[None])))[0]
    b_arr = Dop(v_arr[None])[0]
    eng_db = engine(system, "DB", method)
    b_alt = eng_db.to_fields(eng_db.resolvent_cols(s, eng_db.to_cols(wQ[None])))[0]

    if family is None:
        family = gamma_family(system, per_level=1, top=cube.level, method=method)
    vol = cube.volume
    dv = grid.cell_volume
    diff_v = v_arr[qmask] - Lvals[qmask]
    diff_b = b_arr[qmask] - w
    avg_b = b_arr[qmask].mean(axis=0)
    carleson_part = _box_gamma_st(family, b_arr, cube)
    constants = {
        "C1": float(np.sum(np.abs(diff_v) ** 2) * dv / ((eps * l) ** (2 * k) * vol)),
        "C2": float(np.sum(np.abs(diff_b) ** 2) * dv / vol),
        "C3": float(np.linalg.norm(avg_b - w) / math.sqrt(eps)),
        "C4": float(carleson_part / (eps ** (-2 * k) * vol)),
    }

    # sup bounds for derivatives of L on 3Q, relative to l^(k - |alpha|)
    poly_bounds = {}
    for a in _sub_indices(grid.n, k):
        terms = [(i, b) for i, b in enumerate(betas) if all(bi >= ai for bi, ai in zip(b, a))]
        vals = sum(
            _falling(b, a) * np.prod(y[in3] ** (np.asarray(b) - np.asarray(a)), axis=-1)[:, None] * coef[i]
            for i, b in terms
        )
        order_a = sum(a)
        sup = float(np.max(np.linalg.norm(np.atleast_2d(vals), axis=-1))) if terms else 0.0
        poly_bounds[order_a] = max(poly_bounds.get(order_a, 0.0), sup / l ** (k - order_a))
    bnorm = float(np.sqrt(np.sum(np.abs(b_arr) ** 2) * dv))
    checks = {
        "b_identity": float(np.sqrt(np.sum(np.abs(b_arr - b_alt) ** 2) * dv) / max(bnorm, 1e-300)),
        "wQ_on_2Q": float(np.max(np.abs(wQ[in2] - w))) / max(np.linalg.norm(w), 1e-300),
        "wQ_off_3Q": float(np.max(np.abs(wQ[~in3]))) if (~in3).any() else 0.0,
        "etaL_off_3Q": float(np.max(np.abs(etaL[~in3]))) if (~in3).any() else 0.0,
        "polynomial_residual": resid,
        "polynomial_sup": {str(j): v for j, v in sorted(poly_bounds.items())},
        "cutoff_derivatives": {str(j): v for j, v in cutoff_derivative_constants(order, k).items()},
        "cutoff_order": order,
        "shift": s,
    }
    return TestFunctionBundle(
        cube,
        w,
        eps,
        eta,
        {"".join(map(str, b)): coef[i] for i, b in enumerate(betas)},
        Lvals,
        Field(grid, v_arr),
        Field(grid, b_arr),
        constants,
        checks,
        k,
        family,
    )


def _level_averages(grid, arr, cube: DyadicCube, level: int) -> np.ndarray:
    """``S_t`` of ``arr`` at ``level`` restricted to the samples of ``cube``."""
    sub = arr[cube.slices]
    return expand(block_mean(sub, grid.n, level), grid.n, level)


def _box_gamma_st(family: GammaFamily, b_arr, cube: DyadicCube) -> float:
    grid = family.grid
    if family.top < cube.level:
        raise ConfigurationError("principal-part family does not reach the cube's level", top=family.top, level=cube.level)
    total = 0.0
    for lvl, wt, mats in zip(family.levels, family.weights, family.matrices):
        if lvl > cube.level:
            continue
        sb = _level_averages(grid, b_arr, cube, lvl)
        g = np.einsum("...ij,...j->...i", mats[cube.slices], sb)
        total += wt * float(np.sum(np.abs(g) ** 2) * grid.cell_volume)
    return total


# ---------------------------------------------------------------------------
# sectors


@dataclass
class Sector:
    """Unit direction ``gamma`` (acting on coordinates of the image subspace) with ``(gamma w, w*) = 1``."""

    gamma: np.ndarray  # (m, d)
    w: np.ndarray  # (m,)  in C^m, inside the image subspace
    wstar: np.ndarray  # (m,)
    w_coords: np.ndarray  # (d,)

    def pairing(self, kappa) -> np.ndarray:
        """``Re (kappa w, w*)`` for matrices in subspace coordinates."""
        return np.real(np.einsum("i,...ij,j->...", np.conj(self.wstar), kappa, self.w_coords))

    def to_dict(self) -> dict:
        c = lambda a: [[float(z.real), float(z.imag)] for z in np.ravel(a)]
        return {"gamma": c(self.gamma), "shape": list(self.gamma.shape), "w": c(self.w), "wstar": c(self.wstar)}


def make_sector(gamma: np.ndarray, basis: np.ndarray) -> Sector:
    gamma = np.asarray(gamma, dtype=np.complex128)
    U, s, Vh = np.linalg.svd(gamma)
    gamma = gamma / s[0]
    wc = np.conj(Vh[0])
    return Sector(gamma, basis @ wc, U[:, 0], wc)


@dataclass
class SectorCover:
    nu: float
    sectors: list
    mode: str
    coverage: float
    certificate_samples: int
    data_coverage: float | None = None

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "count": len(self.sectors),
            "mode": self.mode,
            "coverage": self.coverage,
            "certificate_samples": self.certificate_samples,
            "data_coverage": self.data_coverage,
        }


def _unit(kappas):
    norms = pointwise_norm(kappas)
    return kappas / norms[:, None, None], norms


def sector_index(centers: np.ndarray, kappas: np.ndarray, nu: float, chunk: int = 2048) -> np.ndarray:
    """Index of a sector containing each unit-normalized ``kappa`` (``-1`` if none).

    Membership is ``|kappa/|kappa| - gamma| <= nu`` in operator norm; the
    Frobenius norm bounds it from above and prunes the candidates.
    """
    out = np.full(len(kappas), -1, dtype=int)
    if len(centers) == 0 or len(kappas) == 0:
        return out
    rank = min(centers.shape[1:])
    for start in range(0, len(kappas), chunk):
        K = kappas[start : start + chunk]
        diff = K[:, None] - centers[None]
        fro = np.sqrt(np.sum(np.abs(diff) ** 2, axis=(-2, -1)))
        for i in range(len(K)):
            cand = np.nonzero(fro[i] <= nu * math.sqrt(rank) + 1e-15)[0]
            if cand.size == 0:
                continue
            cand = cand[np.argsort(fro[i, cand])]
            if fro[i, cand[0]] <= nu:
                out[start + i] = cand[0]
                continue
            ops = np.linalg.norm(diff[i, cand], ord=2, axis=(-2, -1))
            hit = np.nonzero(ops <= nu)[0]
            if hit.size:
                out[start + i] = cand[hit[0]]
    return out


def required_sectors(nu: float, m: int, d: int) -> float:
    """Volumetric estimate ``(3/nu)^(2md - 1)`` of the size of a nu-net of unit directions."""
    return (3.0 / nu) ** (2 * m * d - 1)


def _random_directions(rng, count, m, d):
    K = rng.standard_normal((count, m, d)) + 1j * rng.standard_normal((count, m, d))
    return _unit(K)[0]


def _greedy(cands, nu, budget):
    centers = np.zeros((0,) + cands.shape[1:], dtype=np.complex128)
    for K in cands:
        if sector_index(centers, K[None], nu)[0] >= 0:
            continue
        if len(centers) >= budget:
            raise BudgetError("sector net exceeds its budget", budget=budget, estimate=required_sectors(nu, *cands.shape[1:]))
        centers = np.concatenate([centers, K[None]])
    return centers


def sector_cover(
    nu: float,
    basis: np.ndarray,
    m: int | None = None,
    samples: np.ndarray | None = None,
    budget: int = 512,
    seed: int = 0,
    certificate: int = 10_000,
) -> SectorCover:
    """A finite family of sectors ``{kappa : |kappa - |kappa| gamma| <= nu |kappa|}``.

    ``basis`` spans the image subspace (``m x d``). With ``m = d = 1`` the unit
    circle is covered exactly by equally spaced phases. Otherwise the centres are
    chosen greedily, either from ``samples`` (a data-adapted cover of the given
    matrices in subspace coordinates) or from random directions, and a fresh Monte
    Carlo batch of ``certificate`` random directions measures the coverage.
    """
    if not 0 < nu < 1:
        raise ConfigurationError("nu must lie in (0, 1)", nu=nu)
    basis = np.asarray(basis, dtype=np.complex128)
    m = basis.shape[0] if m is None else m
    d = basis.shape[1]
    rng = np.random.default_rng(seed)
    data_cov = None
    if m == 1 and d == 1:
        count = math.ceil(math.pi / (2.0 * math.asin(nu / 2.0)))
        if count > budget:
            raise BudgetError("sector net exceeds its budget", budget=budget, estimate=count)
        centers = np.exp(2j * np.pi * np.arange(count) / count).reshape(count, 1, 1)
        mode = "phases"
    elif samples is not None:
        K = np.asarray(samples, dtype=np.complex128).reshape(-1, m, d)
        norms = pointwise_norm(K)
        K = K[norms > 0] / norms[norms > 0, None, None]
        centers = _greedy(K, nu, budget)
        data_cov = float(np.mean(sector_index(centers, K, nu) >= 0)) if len(K) else 1.0
        mode = "data"
    else:
        est = required_sectors(nu, m, d)
        if est > budget:
            raise BudgetError("nu is too small for the sector budget", budget=budget, estimate=est)
        centers = _greedy(_random_directions(rng, 20 * budget, m, d), nu, budget)
        mode = "random"
    test = _random_directions(rng, certificate, m, d)
    coverage = float(np.mean(sector_index(centers, test, nu) >= 0)) if certificate else float("nan")
    sectors = [make_sector(c, basis) for c in centers]
    return SectorCover(nu, sectors, mode, coverage, certificate, data_cov)


def sector_inequality(sector: Sector, kappas: np.ndarray, nu: float) -> float:
    """``min (Re (kappa w, w*) - (1 - nu) |kappa|)`` over in-sector samples (nonnegative when it holds)."""
    units, norms = _unit(np.asarray(kappas, dtype=np.complex128))
    inside = sector_index(sector.gamma[None], units, nu) >= 0
    if not inside.any():
        return float("inf")
    return float(np.min(sector.pairing(kappas[inside]) - (1 - nu) * norms[inside]))


# ---------------------------------------------------------------------------
# stopping time


@dataclass
class StoppingReport:
    cube: DyadicCube
    stopping: list  # (DyadicCube, reason)
    packing: float
    packing_bound: float
    C: float
    truncated_leaves: int
    good_checks: dict
    warnings: list = field(default_factory=list)

    @property
    def packing_ok(self) -> bool:
        return self.packing <= self.packing_bound + 1e-12

    def to_dict(self) -> dict:
        return {
            "cube": self.cube.to_dict(),
            "stopping": [dict(c.to_dict(), reason=r) for c, r in self.stopping],
            "packing": self.packing,
            "packing_bound": self.packing_bound,
            "packing_ok": self.packing_ok,
            "C": self.C,
            "truncated_leaves": self.truncated_leaves,
            "good_checks": dict(self.good_checks),
            "warnings": list(self.warnings),
        }


def stopping_time(bundle: TestFunctionBundle, sector: Sector, nu: float | None = None) -> StoppingReport:
    """Maximal subcubes where ``b`` degenerates, and checks on the remaining good region.

    A strict subcube ``Q'`` stops when ``Re (gamma (w - avg b), w*) > 10 C sqrt(eps)``
    or ``avg |w - b|^2 > C / eps``. On the good region every level average must
    satisfy the reverse bounds, and for ``gamma_t(x)`` in the sector (radius
    ``nu``) the ratio ``|gamma_t(x)| / (2 |gamma_t(x) S_t b(x)|)`` must not exceed 1.
    """
    Q, eps = bundle.cube, bundle.eps
    grid = Q.grid
    if np.linalg.norm(sector.w - bundle.w) > 1e-8:
        raise ConfigurationError("the bundle was built for a different direction than the sector")
    C = bundle.C
    t1, t2 = 10.0 * C * math.sqrt(eps), C / eps
    b = bundle.b.values
    w = bundle.w
    basis = bundle.family.subspace
    gam_full = sector.gamma @ np.conj(basis.T)

    def pair(vec):
        return float(np.real(np.conj(sector.wstar) @ (gam_full @ vec)))

    stopping, leaves = [], 0
    stack = list(Q.children())
    while stack:
        cube = stack.pop()
        vals = b[cube.slices].reshape(-1, grid.m)
        avg = vals.mean(axis=0)
        if pair(w - avg) > t1:
            stopping.append((cube, "type1"))
        elif np.mean(np.sum(np.abs(vals - w) ** 2, axis=-1)) > t2:
            stopping.append((cube, "type2"))
        elif cube.level == 0:
            leaves += 1
        else:
            stack.extend(cube.children())
    stopping.sort(key=lambda cr: (-cr[0].level, cr[0].corner))
    packing = sum(c.volume for c, _ in stopping) / Q.volume

    # good region: per level, samples of Q not inside a stopping cube of that level or higher
    sub_shape = (Q.samples_per_axis,) * grid.n
    origin = np.array([c * Q.samples_per_axis for c in Q.corner])
    covered_at = np.full(sub_shape, -1)  # highest level of a stopping cube covering each sample
    for c, _ in stopping:
        sl = tuple(slice(ci * c.samples_per_axis - o, (ci + 1) * c.samples_per_axis - o) for ci, o in zip(c.corner, origin))
        covered_at[sl] = np.maximum(covered_at[sl], c.level)

    max2 = max3 = 0.0
    worst, checked, violations = 0.0, 0, 0
    good_box = sector_box = 0.0
    dv = grid.cell_volume
    for lvl in range(Q.level + 1):
        good = covered_at < lvl
        if not good.any():
            continue
        Sb = _level_averages(grid, b, Q, lvl)[good]
        diff = w - Sb
        max2 = max(max2, float(np.max(np.real(diff @ (np.conj(sector.wstar) @ gam_full)))) / t1)
        max3 = max(max3, float(np.max(np.linalg.norm(diff, axis=-1))) / math.sqrt(t2))
        if nu is None:
            continue
        fam = bundle.family
        for node_lvl, wt, mats in zip(fam.levels, fam.weights, fam.matrices):
            if node_lvl != lvl:
                continue
            kappa_all = mats[Q.slices].reshape((-1, grid.m, grid.m)) @ basis
            units, norms_all = _unit_safe(kappa_all)
            in_all = (norms_all > 0) & (sector_index(sector.gamma[None], units, nu) >= 0)
            sector_box += wt * float(np.sum(norms_all[in_all] ** 2)) * dv / Q.volume
            flat_good = good.reshape(-1)
            G = mats[Q.slices][good]
            norms = norms_all[flat_good]
            inside = in_all[flat_good]
            good_box += wt * float(np.sum(norms[inside] ** 2)) * dv / Q.volume
            if not inside.any():
                continue
            lhs = norms[inside]
            rhs = 2.0 * np.linalg.norm(np.einsum("...ij,...j->...i", G[inside], Sb[inside]), axis=-1)
            ratio = lhs / np.maximum(rhs, 1e-300)
            checked += int(inside.sum())
            violations += int(np.sum(ratio > 1.0))
            worst = max(worst, float(ratio.max()))
    warnings = []
    if leaves:
        warnings.append(f"{leaves} single-sample cubes reached without a stopping decision (grid truncation)")
    scale = bundle.constants["C4"] * eps ** (-2 * bundle.k)
    good = {
        "good_box": good_box,
        "good_box_bound": 4.0 * scale,
        "sector_box": sector_box,
        "closure_bound": 4.0 * scale / eps,
        "stopping2_ratio": max2,
        "stopping3_ratio": max3,
        "good_set_ratio": worst,
        "good_set_points": checked,
        "good_set_violations": violations,
    }
    return StoppingReport(Q, stopping, packing, 1.0 - eps, C, leaves, good, warnings)


def _unit_safe(kappa):
    norms = pointwise_norm(kappa)
    safe = np.where(norms > 0, norms, 1.0)
    return kappa / safe[:, None, None], norms


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class TbReport:
    cube: DyadicCube
    eps: float
    nu: float
    cover: SectorCover
    bundles: list
    stops: list
    box: float

    def to_dict(self) -> dict:
        return {
            "cube": self.cube.to_dict(),
            "eps": self.eps,
            "nu": self.nu,
            "cover": self.cover.to_dict(),
            "box_normalized": self.box,
            "sectors": [
                {"bundle": b.to_dict(), "stopping": s.to_dict()} for b, s in zip(self.bundles, self.stops)
            ],
            "max_packing": max((s.packing for s in self.stops), default=0.0),
            "packing_ok": all(s.packing_ok for s in self.stops),
            "good_set_violations": sum(s.good_checks["good_set_violations"] for s in self.stops),
        }


def tb_pipeline(
    system: DiracSystem,
    cube: DyadicCube,
    eps: float,
    nu: float,
    budget: int = 256,
    per_level: int = 1,
    seed: int = 0,
    method: str = "auto",
) -> TbReport:
    """Cover the values of ``gamma_t`` on ``R(Q)`` by sectors, then run one test function and stopping time per sector.

    When ``gamma_t`` vanishes on ``R(Q)`` there is nothing to cover; the stopping
    time is still run for each basis direction of the image subspace.
    """
    family = gamma_family(system, per_level=per_level, top=cube.level, method=method)
    basis = family.subspace
    sel = family.levels <= cube.level
    samples = (family.matrices[sel][(slice(None),) + cube.slices] @ basis).reshape(-1, system.grid.m, basis.shape[1])
    scale = float(np.max(pointwise_norm(samples))) if samples.size else 0.0
    if scale > 0:
        keep = pointwise_norm(samples) > 1e-12 * scale
        cover = sector_cover(nu, basis, samples=samples[keep], budget=budget, seed=seed)
        sectors = cover.sectors
    else:
        cover = SectorCover(nu, [], "empty", float("nan"), 0, 1.0)
        sectors = [make_sector(np.outer(basis[:, i], np.eye(basis.shape[1])[i]), basis) for i in range(basis.shape[1])]
    bundles, stops = [], []
    for sec in sectors:
        bundle = build_test_function(system, cube, sec.w, eps, family=family, method=method)
        bundles.append(bundle)
        stops.append(stopping_time(bundle, sec, nu))
    rep = carleson_norm(family, restrict_to_D=True)
    box = float(rep.normalized[cube.level][cube.corner])
    return TbReport(cube, eps, nu, cover, bundles, stops, box)
