"""Measured off-diagonal decay of Q_t between separated sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import linregress

from ..errors import ConfigurationError
from ..operators import DiracSystem
from ..spectral import Field, forward, inverse
from .resolvent import engine

MIN_RATIO = 4.0


def _mask(grid, index_set) -> np.ndarray:
    arr = np.asarray(index_set)
    if arr.dtype == bool:
        if arr.shape != grid.shape:
            raise ConfigurationError("mask shape does not match the grid", shape=arr.shape, expected=grid.shape)
        return arr.copy()
    mask = np.zeros(grid.shape, dtype=bool)
    idx = arr.reshape(-1, grid.n) if arr.size else np.zeros((0, grid.n), dtype=int)
    mask[tuple(idx.T)] = True
    return mask


def torus_distance(grid, A: np.ndarray, B: np.ndarray) -> float:
    """Minimum-image distance between two boolean masks on the torus."""
    pts = grid.coordinates().reshape(-1, grid.n) % grid.period
    tree = cKDTree(pts[B.reshape(-1)], boxsize=grid.period)
    d, _ = tree.query(pts[A.reshape(-1)], k=1)
    return float(np.min(d))


def _bump(grid, radius):
    """Smooth radial bump of the given radius, centred at the origin, unit mass."""
    x = grid.coordinates()
    x = (x + 0.5 * grid.period) % grid.period - 0.5 * grid.period
    r2 = np.sum(x**2, axis=-1) / radius**2
    out = np.zeros(grid.shape)
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out / out.sum()


def smooth_cutoff(grid, mask: np.ndarray, radius: float | None = None) -> np.ndarray:
    """A smooth function in ``[0, 1]`` supported in ``mask``.

    The indicator of ``mask`` eroded by ``radius`` is convolved with a smooth bump
    of the same radius, so the result vanishes off ``mask`` and has rapidly
    decaying Fourier coefficients. ``radius`` defaults to the largest inscribed
    radius, which for an interval gives one bump spanning it: the spectral tail
    of the cutoff, not its width, sets the floor of any decay measurement.
    """
    pts = grid.coordinates().reshape(-1, grid.n) % grid.period
    flat = mask.reshape(-1)
    if flat.all():
        return np.ones(grid.shape)
    tree = cKDTree(pts[~flat], boxsize=grid.period)
    depth = np.zeros(flat.size)
    depth[flat] = tree.query(pts[flat], k=1)[0]
    if radius is None:
        radius = depth.max()
    if radius < grid.spacing:
        raise ConfigurationError("set too thin for a smooth cutoff", radius=radius, spacing=grid.spacing)
    core = (depth >= radius * (1 - 1e-9)).reshape(grid.shape).astype(float)
    g1 = grid.with_fiber(1)
    prod_hat = forward(g1, core[..., None]) * forward(g1, _bump(grid, radius)[..., None]) * grid.num_points
    conv = inverse(g1, prod_hat)[..., 0].real
    conv[~mask] = 0.0
    return np.clip(conv, 0.0, 1.0)


def smooth_trial(grid, mask, rng, modes: int = 6, radius: float | None = None) -> Field:
    """Unit-norm field: smooth cutoff of ``mask`` times a random low-mode trigonometric field."""
    cut = smooth_cutoff(grid, mask, radius)
    coeffs = np.zeros(grid.field_shape, dtype=np.complex128)
    sl = tuple(np.r_[0:modes + 1, -modes:0] for _ in range(grid.n))
    block = np.ix_(*sl)
    shape = (2 * modes + 1,) * grid.n + (grid.m,)
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    for c in range(grid.m):
        coeffs[(*block, c)] = vals[..., c]
    f = Field.from_fourier(grid, coeffs).values * cut[..., None]
    out = Field(grid, f)
    return out / out.norm()


@dataclass
class OffDiagonalProfile:
    distance: float
    t: np.ndarray
    values: np.ndarray  # (len(t), trials)
    sup: np.ndarray
    in_window: np.ndarray
    C: float
    alpha: float
    r_squared: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "distance": self.distance,
            "t": self.t.tolist(),
            "sup": self.sup.tolist(),
            "ratio": (self.distance / self.t).tolist(),
            "in_window": self.in_window.tolist(),
            "C": self.C,
            "alpha": self.alpha,
            "r_squared": self.r_squared,
            "warnings": list(self.warnings),
        }


def _decay_window(ratio, sup, collapse):
    """Points with ``d/t >= 4`` up to where the profile hits its resolution floor.

    The floor shows up as a collapse of the local log-slope; the window stops at
    the first step whose slope falls below ``collapse`` times the steepest one
    seen so far.
    """
    order = [i for i in np.argsort(ratio) if ratio[i] >= MIN_RATIO and sup[i] > 0]
    keep = np.zeros(ratio.size, dtype=bool)
    if not order:
        return keep
    keep[order[0]] = True
    best = 0.0
    for a, b in zip(order, order[1:]):
        slope = (np.log(sup[a]) - np.log(sup[b])) / (ratio[b] - ratio[a])
        if best > 0 and slope < collapse * best:
            break
        best = max(best, slope)
        keep[b] = True
    return keep


def offdiag_profile(
    system: DiracSystem,
    E,
    F,
    t_list,
    trials: int = 4,
    seed: int = 0,
    side: str = "BD",
    method: str = "auto",
    modes: int = 6,
    collapse: float = 0.5,
) -> OffDiagonalProfile:
    """``sup_u ||1_E Q_t u||`` over unit trials supported in ``F`` and the fit
    ``log sup = log C - alpha d / t`` on the decay window."""
    grid = system.grid
    mE, mF = _mask(grid, E), _mask(grid, F)
    if not mE.any() or not mF.any():
        raise ConfigurationError("E and F must be nonempty")
    if (mE & mF).any():
        raise ConfigurationError("E and F overlap")
    warnings = []
    if system.k != 1 or not system.D.homogeneous:
        warnings.append("exponential decay is only established for homogeneous first-order D")
    d = torus_distance(grid, mE, mF)
    ts = np.sort(np.asarray(t_list, dtype=float))
    if np.any(ts <= 0):
        raise ConfigurationError("t values must be positive")
    rng = np.random.default_rng(seed)
    U = np.stack([smooth_trial(grid, mF, rng, modes).flat for _ in range(trials)], axis=1)
    eng = engine(system, side, method)
    vol = grid.cell_volume
    values = np.empty((ts.size, trials))
    for i, t in enumerate(ts):
        W = eng.qt_cols(t, U).reshape(grid.field_shape + (trials,))
        values[i] = np.sqrt(np.sum(np.abs(W[mE]) ** 2, axis=(0, 1)) * vol)
    sup = values.max(axis=1)
    ratio = d / ts
    window = _decay_window(ratio, sup, collapse)
    if window.sum() >= 3:
        fit = linregress(ratio[window], np.log(sup[window]))
        C, alpha, r2 = float(np.exp(fit.intercept)), float(-fit.slope), float(fit.rvalue**2)
    else:
        warnings.append("fewer than three points in the decay window")
        C, alpha, r2 = float("nan"), float("nan"), float("nan")
    return OffDiagonalProfile(d, ts, values, sup, window, C, alpha, r2, warnings)
