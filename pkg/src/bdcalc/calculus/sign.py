"""The bounded operator sgn(BD): quadrature route, Newton oracle, spectral projections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.integrate as sint
import scipy.linalg as sla

from ..errors import ConfigurationError, SolverError, ValidationError
from ..operators import DiracSystem
from ..spectral import Field
from .quadrature import Quadrature
from .resolvent import RangeCompression, engine

SIGN_TOL = 1e-12


@lru_cache(maxsize=None)
def sgn_constant(k: int) -> float:
    """``c`` with ``c * int_0^inf (Q_t)^3 dt/t = sgn`` on each eigenvalue: ``c = 16k/pi``.

    The closed form is confirmed against adaptive quadrature of
    ``int_0^inf u^(3k-1) (1 + u^(2k))^(-3) du`` before it is returned.
    """
    closed = 16.0 * k / math.pi
    numeric = 1.0 / numeric_sgn_integral(k)
    if abs(numeric - closed) > 1e-10:
        raise SolverError("sgn normalization does not match quadrature", k=k, closed=closed, numeric=numeric)
    return closed


def numeric_sgn_integral(k: int) -> float:
    f = lambda u: u ** (3 * k - 1) / (1.0 + u ** (2 * k)) ** 3
    # split at 1 and substitute u -> 1/u on the tail to keep both pieces on finite intervals
    head, _ = sint.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    tail, _ = sint.quad(lambda v: f(1.0 / v) / v**2, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    return head + tail


def sgn(system: DiracSystem, u: Field, q: Quadrature, side: str = "BD", method: str = "auto") -> Field:
    """``c * int (Q_t)^3 u dt/t`` by log-quadrature; vanishes on the null space."""
    eng = engine(system, side, method)
    nodes, weights = q.nodes()
    X = u.flat.reshape(-1, 1)
    out = sgn_constant(system.k) * eng.qt_power_sum(nodes, weights, X, 3)
    return Field(system.grid, out[:, 0])


def sgn_columns(system: DiracSystem, X: np.ndarray, q: Quadrature, side: str = "BD", method: str = "auto") -> np.ndarray:
    eng = engine(system, side, method)
    nodes, weights = q.nodes()
    return sgn_constant(system.k) * eng.qt_power_sum(nodes, weights, X, 3)


def newton_sign(A: np.ndarray, tol: float = SIGN_TOL, maxiter: int = 100) -> np.ndarray:
    """Matrix sign by the scaled Newton iteration ``X <- (mu X + (mu X)^{-1}) / 2``.

    Determinant scaling is used until the iterates settle; a final Newton-Schulz
    step polishes ``X^2 = I``.
    """
    r = A.shape[0]
    if r == 0:
        return A.copy()
    X = A.astype(np.complex128)
    eye = np.eye(r)
    scaling = True
    for _ in range(maxiter):
        try:
            Xinv = np.linalg.inv(X)
        except np.linalg.LinAlgError as exc:
            raise SolverError("Newton sign iterate became singular; spectrum meets the imaginary axis") from exc
        if scaling:
            _, logdet = np.linalg.slogdet(X)
            mu = math.exp(-logdet / r)
        else:
            mu = 1.0
        Xn = 0.5 * (mu * X + Xinv / mu)
        step = np.linalg.norm(Xn - X, 1) / np.linalg.norm(Xn, 1)
        X = Xn
        if step < 1e-2:
            scaling = False
        if step < 1e-14:
            break
    X = 0.5 * X @ (3.0 * eye - X @ X)
    defect = np.linalg.norm(X @ X - eye, 2)
    if defect > tol * max(1.0, np.linalg.norm(X, 2) ** 2):
        raise SolverError("Newton sign iteration did not converge", defect=float(defect))
    return X


@dataclass
class SignOracle:
    matrix: np.ndarray
    range_projector: np.ndarray
    compression_defect: float
    eigen_margin: float
    offending: complex | None = None


def sgn_oracle_data(system: DiracSystem, side: str = "BD", tol: float = 1e-8) -> SignOracle:
    system.require_validated("the sign oracle")

    def build():
        comp = system.cached(("compression", side), lambda: RangeCompression(system, side))
        ev = comp.eigenvalues
        scale = max(1.0, float(np.max(np.abs(ev)))) if ev.size else 1.0
        margin = float(np.min(np.abs(ev.real))) / scale if ev.size else np.inf
        if ev.size and margin <= tol:
            bad = complex(ev[np.argmin(np.abs(ev.real))])
            raise ValidationError("range compression has an eigenvalue on the imaginary axis", eigenvalue=bad)
        X = newton_sign(comp.A)
        coords = sla.lu_solve(comp.gram_lu, np.conj(comp.left.T))
        S = comp.W @ (X @ coords)
        P = comp.W @ coords
        defect = float(np.linalg.norm(X @ X - np.eye(X.shape[0]), 2))
        for arr in (S, P):
            arr.setflags(write=False)
        return SignOracle(S, P, defect, margin)

    return system.cached(("sign_oracle", side), build)


def sgn_oracle(system: DiracSystem, side: str = "BD") -> np.ndarray:
    """Dense sgn(BD): Newton sign on the range compression, zero on the null space."""
    return sgn_oracle_data(system, side).matrix


class LinearMap:
    """A dense operator acting on fields in the flat layout."""

    def __init__(self, grid, matrix):
        self.grid = grid
        self.matrix = matrix

    def __call__(self, f: Field) -> Field:
        return Field(self.grid, self.matrix @ f.flat)

    def __matmul__(self, other):
        if isinstance(other, LinearMap):
            return LinearMap(self.grid, self.matrix @ other.matrix)
        return self.matrix @ other


@dataclass
class SpectralProjections:
    E_plus: LinearMap
    E_minus: LinearMap
    N_proj: LinearMap
    Pi_range: LinearMap
    sign: LinearMap
    side: str
    route: str


def spectral_projections(system: DiracSystem, side: str = "DB", route: str = "oracle", q: Quadrature | None = None) -> SpectralProjections:
    """``E_+-`` = (Pi_range +- sgn)/2 and ``N_proj = I - Pi_range`` as dense maps."""

    def build():
        data = sgn_oracle_data(system, side)
        P = data.range_projector
        if route == "oracle":
            S = data.matrix
        elif route == "quadrature":
            if q is None:
                raise ConfigurationError("the quadrature route needs a Quadrature")
            S = sgn_columns(system, np.eye(system.grid.dof, dtype=np.complex128), q, side)
        else:
            raise ConfigurationError("route must be 'oracle' or 'quadrature'", route=route)
        g = system.grid
        eye = np.eye(g.dof)
        return SpectralProjections(
            LinearMap(g, 0.5 * (P + S)),
            LinearMap(g, 0.5 * (P - S)),
            LinearMap(g, eye - P),
            LinearMap(g, P),
            LinearMap(g, S),
            side,
            route,
        )

    key = ("projections", side, route, None if q is None else tuple(q.to_dict().values()))
    return system.cached(key, build)
