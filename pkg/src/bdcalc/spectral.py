"""Periodic grids, vector-valued fields and Fourier multipliers.

Conventions used throughout the package:

* A :class:`Grid` is the torus ``[0, period)^n`` sampled at ``points_per_axis``
  points per axis, carrying values in ``C^m``.
* Field values are stored as complex arrays of shape ``(P, ..., P, m)``: row-major
  spatial index with the fiber index fastest.  ``values.reshape(-1)`` is the flat
  layout used by the binary format and by every dense matrix in the package.
* Frequencies follow the symmetric integer lattice of ``numpy.fft.fftfreq`` (the
  Nyquist mode sits on the negative side), scaled by ``2*pi/period``.
* The forward transform carries the factor ``1/P^n`` so that Fourier coefficients
  are the coefficients of the trigonometric interpolant.  The inner product carries
  the cell volume ``(period/P)^n``, hence ``norm(f)**2 = period^n * sum |f_hat|^2``.
"""

from __future__ import annotations

import base64
import itertools
import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import BudgetError, ConfigurationError, DimensionError

_WORKERS = int(os.environ.get("BDCALC_THREADS", "1") or 1)


def set_workers(count: int) -> None:
    """Set the number of FFT worker threads (also read from ``BDCALC_THREADS``)."""
    global _WORKERS
    _WORKERS = max(1, int(count))


def get_workers() -> int:
    return _WORKERS


@dataclass(frozen=True)
class Grid:
    n: int
    m: int
    points_per_axis: int
    period: float = 1.0

    def __post_init__(self):
        p = self.points_per_axis
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError("spatial dimension n must be a positive integer", n=self.n)
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError("fiber dimension m must be a positive integer", m=self.m)
        if int(p) != p or p < 4 or (p & (p - 1)) != 0:
            raise ConfigurationError(
                "points_per_axis must be a power of two and at least 4", points_per_axis=p
            )
        if not (self.period > 0 and np.isfinite(self.period)):
            raise ConfigurationError("period must be positive and finite", period=self.period)
        object.__setattr__(self, "period", float(self.period))

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.n

    @property
    def field_shape(self) -> tuple:
        return self.shape + (self.m,)

    @property
    def num_points(self) -> int:
        return self.points_per_axis**self.n

    @property
    def dof(self) -> int:
        return self.m * self.num_points

    @property
    def spacing(self) -> float:
        return self.period / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    @property
    def spatial_axes(self) -> tuple:
        """Axes of a single field array that carry spatial indices."""
        return tuple(range(self.n))

    def with_fiber(self, m: int) -> "Grid":
        return Grid(self.n, m, self.points_per_axis, self.period)

    def frequencies(self) -> np.ndarray:
        """Lattice frequencies, shape ``(P,)*n + (n,)``, read-only."""
        return _frequency_lattice(self.n, self.points_per_axis, self.period)

    def coordinates(self) -> np.ndarray:
        """Sample coordinates in ``[0, period)``, shape ``(P,)*n + (n,)``."""
        axis = np.arange(self.points_per_axis) * self.spacing
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def check_budget(self, budget: int) -> None:
        if self.dof > budget:
            raise BudgetError(
                f"grid has {self.dof} degrees of freedom, above the dense budget {budget}; "
                "reduce points_per_axis or raise the budget explicitly",
                dof=self.dof,
                budget=budget,
            )

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "points_per_axis": self.points_per_axis, "period": self.period}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(int(d["n"]), int(d["m"]), int(d["points_per_axis"]), float(d["period"]))


@lru_cache(maxsize=64)
def _frequency_lattice(n: int, points: int, period: float) -> np.ndarray:
    k = np.fft.fftfreq(points, d=1.0 / points) * (2.0 * np.pi / period)
    mesh = np.meshgrid(*([k] * n), indexing="ij")
    out = np.stack(mesh, axis=-1)
    out.setflags(write=False)
    return out


def multi_indices(n: int, k: int) -> list:
    """All multi-indices of length ``n`` and order ``k``, lexicographically descending."""
    out = [
        a
        for a in itertools.product(range(k, -1, -1), repeat=n)
        if sum(a) == k
    ]
    return out


# ---------------------------------------------------------------------------
# batched transforms: arrays of shape (..., P, ..., P, m)


def _axes(grid: Grid) -> tuple:
    return tuple(range(-grid.n - 1, -1))


def forward(grid: Grid, arr: np.ndarray) -> np.ndarray:
    """Fourier coefficients over the spatial axes of a (batched) field array."""
    return sfft.fftn(arr, axes=_axes(grid), norm="forward", workers=_WORKERS)


def inverse(grid: Grid, arr: np.ndarray) -> np.ndarray:
    return sfft.ifftn(arr, axes=_axes(grid), norm="forward", workers=_WORKERS)


def apply_symbol_array(grid: Grid, matrices: np.ndarray, arr: np.ndarray) -> np.ndarray:
    """Apply per-frequency matrices (or scalars) to a batched field array."""
    coeffs = forward(grid, arr)
    if matrices.ndim == grid.n:
        coeffs = coeffs * matrices[..., None]
    else:
        coeffs = np.matmul(matrices, coeffs[..., None])[..., 0]
    return inverse(grid, coeffs)


# ---------------------------------------------------------------------------


class Field:
    """Immutable ``C^m``-valued samples on a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=np.complex128)
        if arr.size != grid.dof:
            raise DimensionError(
                f"expected {grid.dof} values for grid {grid.to_dict()}, got {arr.size}",
                expected=grid.dof,
                got=arr.size,
            )
        arr = arr.reshape(grid.field_shape)
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    # constructors
    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.field_shape, dtype=np.complex128))

    @classmethod
    def constant(cls, grid: Grid, vector) -> "Field":
        vec = np.asarray(vector, dtype=np.complex128).reshape(grid.m)
        return cls(grid, np.broadcast_to(vec, grid.field_shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """``fn`` maps coordinates of shape ``(..., n)`` to values of shape ``(..., m)``."""
        vals = np.asarray(fn(grid.coordinates()), dtype=np.complex128)
        if grid.m == 1 and vals.shape == grid.shape:
            vals = vals[..., None]
        return cls(grid, vals)

    @classmethod
    def mode(cls, grid: Grid, index, vector=None) -> "Field":
        """Plane wave ``exp(i xi . x) * vector`` for the lattice frequency at ``index``."""
        xi = grid.frequencies()[tuple(index)]
        vec = np.ones(grid.m) if vector is None else np.asarray(vector, dtype=np.complex128)
        phase = np.exp(1j * grid.coordinates() @ xi)
        return cls(grid, phase[..., None] * vec)

    @classmethod
    def random(cls, grid: Grid, rng: np.random.Generator) -> "Field":
        vals = rng.standard_normal(grid.field_shape) + 1j * rng.standard_normal(grid.field_shape)
        return cls(grid, vals)

    @classmethod
    def from_fourier(cls, grid: Grid, coeffs) -> "Field":
        return cls(grid, inverse(grid, np.asarray(coeffs, dtype=np.complex128).reshape(grid.field_shape)))

    # views
    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def fourier(self) -> np.ndarray:
        return forward(self.grid, self.values)

    def norm(self) -> float:
        return norm(self)

    def component(self, sl) -> np.ndarray:
        return self.values[..., sl]

    # arithmetic
    def _check(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        if other.grid != self.grid:
            raise DimensionError("fields live on different grids")
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            return NotImplemented
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.grid, self.values / scalar)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field(grid={self.grid.to_dict()}, norm={self.norm():.6g})"

    # serialization
    def to_bytes(self) -> bytes:
        """Little-endian complex128, row-major spatial index, fiber fastest."""
        return self.values.astype("<c16").tobytes()

    @classmethod
    def from_bytes(cls, grid: Grid, data: bytes) -> "Field":
        return cls(grid, np.frombuffer(data, dtype="<c16"))

    def to_json(self) -> str:
        flat = self.flat
        return json.dumps(
            {
                "format": "bdcalc.field",
                "version": 1,
                "grid": self.grid.to_dict(),
                "values": [[float(z.real), float(z.imag)] for z in flat],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Field":
        doc = json.loads(text)
        grid = Grid.from_dict(doc["grid"])
        pairs = np.asarray(doc["values"], dtype=float).reshape(-1, 2)
        return cls(grid, pairs[:, 0] + 1j * pairs[:, 1])

    def to_payload(self) -> dict:
        """Compact JSON-safe payload with base64 binary values."""
        return {
            "grid": self.grid.to_dict(),
            "encoding": "base64-complex128-le",
            "data": base64.b64encode(self.to_bytes()).decode("ascii"),
        }

    @classmethod
    def from_payload(cls, doc: dict) -> "Field":
        return cls.from_bytes(Grid.from_dict(doc["grid"]), base64.b64decode(doc["data"]))


class Multiplier:
    """Per-frequency matrices (or scalars acting componentwise) on a grid's lattice."""

    __slots__ = ("grid", "matrices")

    def __init__(self, grid: Grid, matrices):
        arr = np.array(matrices, dtype=np.complex128)
        if arr.shape not in (grid.shape, grid.shape + (grid.m, grid.m)):
            raise DimensionError(
                "multiplier must have shape lattice or lattice + (m, m)",
                got=list(arr.shape),
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("multiplier entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "matrices", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Multiplier is immutable")

    @property
    def is_scalar(self) -> bool:
        return self.matrices.ndim == self.grid.n

    @classmethod
    def from_symbol(cls, grid: Grid, symbol) -> "Multiplier":
        return cls(grid, symbol(grid.frequencies()))

    def full(self) -> np.ndarray:
        if self.is_scalar:
            return self.matrices[..., None, None] * np.eye(self.grid.m)
        return self.matrices

    def __matmul__(self, other: "Multiplier") -> "Multiplier":
        if other.grid != self.grid:
            raise DimensionError("multipliers live on different grids")
        if self.is_scalar and other.is_scalar:
            return Multiplier(self.grid, self.matrices * other.matrices)
        return Multiplier(self.grid, np.matmul(self.full(), other.full()))

    def __call__(self, f: Field) -> Field:
        return apply_multiplier(self, f)


def inner(f: Field, g: Field) -> complex:
    """Discrete L2 product, linear in ``f`` and conjugate-linear in ``g``."""
    if f.grid != g.grid:
        raise DimensionError("inner product of fields on different grids")
    return complex(np.vdot(g.values, f.values) * f.grid.cell_volume)


def norm(f: Field) -> float:
    return float(np.sqrt(f.grid.cell_volume) * np.linalg.norm(f.values.reshape(-1)))


def apply_multiplier(M: Multiplier, f: Field) -> Field:
    if M.grid != f.grid:
        raise DimensionError("multiplier and field live on different grids")
    return Field(f.grid, apply_symbol_array(f.grid, M.matrices, f.values))


def derivative_symbols(grid: Grid, k: int) -> np.ndarray:
    """Stack of ``(i xi)^alpha`` over multi-indices of order ``k``: shape lattice + (p,)."""
    xi = grid.frequencies()
    cols = [np.prod((1j * xi) ** np.asarray(a), axis=-1) for a in multi_indices(grid.n, k)]
    return np.stack(cols, axis=-1)


def grad_k_norm(f: Field, k: int) -> float:
    """Norm of all order-``k`` partial derivatives of the trigonometric interpolant.

    Each multi-index is counted once, so the Fourier weight is
    ``sum_alpha |xi^alpha|^2``.
    """
    if k < 0:
        raise ConfigurationError("derivative order must be nonnegative", k=k)
    grid = f.grid
    coeffs = f.fourier()
    if k == 0:
        weight = np.ones(grid.shape)
    else:
        weight = np.sum(np.abs(derivative_symbols(grid, k)) ** 2, axis=-1)
    total = np.sum(weight * np.sum(np.abs(coeffs) ** 2, axis=-1))
    return float(np.sqrt(grid.period**grid.n * total))
