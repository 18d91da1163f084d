"""Grid-anchored dyadic cubes, cube averages ``S_t`` and the smooth mollifier ``P_t``."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate as sint

from ..errors import ConfigurationError, RangeError
from ..spectral import Field, Grid, forward, grad_k_norm, inverse


def top_level(grid: Grid) -> int:
    """Level whose single cube is the whole torus."""
    return int(round(math.log2(grid.points_per_axis)))


def level_side(grid: Grid, level: int) -> float:
    return grid.spacing * 2.0**level


def level_of(grid: Grid, t: float) -> int:
    """The level ``j`` with ``h 2^(j-1) < t <= h 2^j``; cubes of ``Delta_t`` have side in ``[t, 2t)``."""
    if not t > 0:
        raise RangeError("t must be positive", t=t)
    j = math.ceil(math.log2(t / grid.spacing) - 1e-12)
    if j < 0 or j > top_level(grid):
        raise RangeError(
            "t has no dyadic level on this grid",
            t=t,
            representable=[grid.spacing / 2, grid.period],
        )
    return j


@dataclass(frozen=True)
class DyadicCube:
    """A cube of side ``h 2^level`` whose lowest sample has index ``corner * 2^level``."""

    grid: Grid
    level: int
    corner: tuple

    def __post_init__(self):
        J = top_level(self.grid)
        if not 0 <= self.level <= J:
            raise RangeError("cube level outside the grid hierarchy", level=self.level, top=J)
        count = 2 ** (J - self.level)
        corner = tuple(int(c) for c in self.corner)
        if len(corner) != self.grid.n or any(not 0 <= c < count for c in corner):
            raise ConfigurationError("cube corner out of range", corner=corner, cubes_per_axis=count)
        object.__setattr__(self, "corner", corner)

    @property
    def samples_per_axis(self) -> int:
        return 2**self.level

    @property
    def side(self) -> float:
        return level_side(self.grid, self.level)

    @property
    def volume(self) -> float:
        return self.side**self.grid.n

    @property
    def slices(self) -> tuple:
        w = self.samples_per_axis
        return tuple(slice(c * w, (c + 1) * w) for c in self.corner)

    @property
    def center(self) -> np.ndarray:
        """Centre in the same coordinates as ``Grid.coordinates`` (sample ``i`` at ``i h``)."""
        h = self.grid.spacing
        return np.array([(c * self.samples_per_axis) * h + 0.5 * (self.side - h) for c in self.corner])

    def mask(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=bool)
        out[self.slices] = True
        return out

    def children(self) -> list:
        if self.level == 0:
            return []
        return [
            DyadicCube(self.grid, self.level - 1, tuple(2 * c + o for c, o in zip(self.corner, offs)))
            for offs in itertools.product((0, 1), repeat=self.grid.n)
        ]

    def parent(self) -> "DyadicCube | None":
        if self.level == top_level(self.grid):
            return None
        return DyadicCube(self.grid, self.level + 1, tuple(c // 2 for c in self.corner))

    def contains(self, other: "DyadicCube") -> bool:
        if other.level > self.level:
            return False
        shift = self.level - other.level
        return tuple(c >> shift for c in other.corner) == self.corner

    def to_dict(self) -> dict:
        return {"level": self.level, "corner": list(self.corner)}


def cubes_at_level(grid: Grid, level: int) -> list:
    count = 2 ** (top_level(grid) - level)
    return [DyadicCube(grid, level, c) for c in itertools.product(range(count), repeat=grid.n)]


# ---------------------------------------------------------------------------
# block reductions over the cubes of one level


def block_view(arr: np.ndarray, n: int, level: int) -> np.ndarray:
    """Reshape the ``n`` leading axes ``P`` into ``(P / 2^level, 2^level)`` pairs."""
    w = 2**level
    P = arr.shape[0]
    shape = []
    for _ in range(n):
        shape += [P // w, w]
    return arr.reshape(tuple(shape) + arr.shape[n:])


def block_mean(arr: np.ndarray, n: int, level: int) -> np.ndarray:
    """Cube averages at ``level``, shape ``(P/2^level,)*n + trailing``."""
    view = block_view(arr, n, level)
    return view.mean(axis=tuple(range(1, 2 * n, 2)))


def block_sum(arr: np.ndarray, n: int, level: int) -> np.ndarray:
    view = block_view(arr, n, level)
    return view.sum(axis=tuple(range(1, 2 * n, 2)))


def expand(coarse: np.ndarray, n: int, level: int) -> np.ndarray:
    """Piecewise-constant extension of per-cube values back to the samples."""
    out = coarse
    for axis in range(n):
        out = np.repeat(out, 2**level, axis=axis)
    return out


def st_array(grid: Grid, arr: np.ndarray, level: int) -> np.ndarray:
    return expand(block_mean(arr, grid.n, level), grid.n, level)


def st_average(f: Field, t: float) -> Field:
    """``S_t f``: every sample replaced by the average of ``f`` over its cube in ``Delta_t``."""
    j = level_of(f.grid, t)
    return Field(f.grid, st_array(f.grid, f.values, j))


# ---------------------------------------------------------------------------
# the mollifier P_t


def _smooth_step(x):
    """``exp(-1/x)`` for ``x > 0``, zero otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def bump_profile(r) -> np.ndarray:
    """Radial profile equal to 1 on ``r <= 1/2``, 0 on ``r >= 1``, smooth and monotone in between."""
    r = np.asarray(r, dtype=float)
    a = _smooth_step(1.0 - r)
    b = _smooth_step(r - 0.5)
    return a / (a + b)


def pt_multiplier(grid: Grid, t: float) -> np.ndarray:
    if not t > 0:
        raise ConfigurationError("t must be positive", t=t)
    r = t * np.linalg.norm(grid.frequencies(), axis=-1)
    return bump_profile(r)


def pt_array(grid: Grid, arr: np.ndarray, t: float) -> np.ndarray:
    """Apply ``P_t`` to arrays whose leading axes are spatial and last axis is the fiber."""
    mult = pt_multiplier(grid, t)
    g = grid.with_fiber(arr.shape[-1])
    return inverse(g, forward(g, arr) * mult[..., None])


def pt_mollify(f: Field, t: float) -> Field:
    """``P_t f`` with Fourier multiplier ``bump_profile(t |xi|)`` on every component."""
    return Field(f.grid, pt_array(f.grid, f.values, t))


def littlewood_paley_constant(k: int) -> float:
    """``int_0^inf (1 - bump(s))^2 s^(-2k-1) ds`` (the integrand vanishes for ``s <= 1/2``)."""
    f = lambda s: (1.0 - float(bump_profile(s))) ** 2 * s ** (-2 * k - 1)
    head, _ = sint.quad(f, 0.5, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    tail = 1.0 / (2 * k)  # 1 - bump = 1 on s >= 1
    return head + tail


def littlewood_paley(f: Field, k: int, t_min: float, t_max: float, nodes_per_decade: int = 40) -> dict:
    """Quadrature of ``int ||(I - P_t) f||^2 dt / t^(2k+1)`` against ``||grad^k f||^2``.

    ``t`` runs over a log-spaced window; below ``t_min`` every lattice mode must
    already be damped (``P_t = I``) and above ``t_max`` the integrand is bounded
    by ``||f||^2 t^(-2k) / (2k)``, recorded as ``tail_bound``.
    """
    grid = f.grid
    xi_max = float(np.max(np.linalg.norm(grid.frequencies(), axis=-1)))
    if t_min * xi_max > 0.5:
        raise ConfigurationError("t_min too large: P_t is not the identity below it", t_min=t_min, limit=0.5 / xi_max)
    a, b = math.log(t_min), math.log(t_max)
    steps = max(8, math.ceil((b - a) / math.log(10.0) * nodes_per_decade))
    tau = np.linspace(a, b, steps + 1)
    w = np.full(steps + 1, (b - a) / steps)
    w[0] = w[-1] = w[0] / 2
    total = 0.0
    for ti, wi in zip(np.exp(tau), w):
        diff = f.values - pt_array(grid, f.values, ti)
        total += wi * float(np.sum(np.abs(diff) ** 2) * grid.cell_volume) / ti ** (2 * k)
    grad = grad_k_norm(f, k) ** 2
    return {
        "integral": total,
        "grad_k_norm_sq": grad,
        "ratio": total / grad if grad > 0 else float("nan"),
        "tail_bound": f.norm() ** 2 * t_max ** (-2 * k) / (2 * k),
    }
