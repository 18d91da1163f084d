"""Resolvents ``(I + i s BD)^{-1}`` and the families ``Q_t`` built from them.

Three interchangeable engines solve the shifted systems:

``fourier``
    exact per-frequency solve, only for ``B = I``;
``dense``
    a complex Schur factorization of BD restricted to the closure of its range,
    shared by every shift (the null space is handled exactly, since every
    resolvent is the identity there);
``iterative``
    GMRES preconditioned by the exact ``B = I`` resolvent, right-preconditioned on
    the BD side and left-preconditioned on the DB side so that the preconditioned
    operator is a bounded perturbation of the identity.

All engines act on flat column blocks of shape ``(dof, r)``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from ..errors import ConfigurationError, SolverError
from ..operators import DiracSystem
from ..spectral import Field, forward, inverse

RESIDUAL_TOL = 1e-10


def operator_norm_bound(system) -> float:
    """Upper bound ``||B|| * max |symbol|`` for ``||BD||`` and ``||DB||``."""
    return float(system.B.norm * np.max(np.abs(np.linalg.eigvalsh(
        0.5 * (system.D.lattice + np.conj(np.swapaxes(system.D.lattice, -1, -2)))))))


def backward_residual(op_cols, s, W, X, op_norm):
    """Normwise backward error of ``(I + i s T) W = X`` per column.

    ``||(I + i s T) W - X|| / ((1 + |s| ||T||) ||W|| + ||X||)``; a fixed fraction of
    ``||X||`` is unattainable in floating point once ``|s| ||T||`` is large.
    """
    R = W + 1j * s * op_cols(W) - X
    scale = (1.0 + abs(s) * op_norm) * np.linalg.norm(W, axis=0) + np.linalg.norm(X, axis=0)
    return np.linalg.norm(R, axis=0) / np.maximum(scale, 1e-300)


def _check_side(side):
    if side not in ("BD", "DB"):
        raise ConfigurationError("side must be 'BD' or 'DB'", side=side)


class _Engine:
    def __init__(self, system: DiracSystem, side: str):
        self.system = system
        self.side = side
        self.k = system.k
        self.grid = system.grid

    def to_fields(self, X):
        return X.T.reshape((X.shape[1],) + self.grid.field_shape)

    def to_cols(self, arr):
        return arr.reshape(arr.shape[0], -1).T

    def op_cols(self, X):
        return self.to_cols(self.system.apply_array(self.to_fields(X), self.side))

    def resolvent_cols(self, s, X):
        raise NotImplementedError

    def qt_cols(self, t, X):
        s = t**self.k
        return (self.resolvent_cols(-s, X) - self.resolvent_cols(s, X)) / 2j

    def mean_cols(self, t, X):
        s = t**self.k
        return 0.5 * (self.resolvent_cols(-s, X) + self.resolvent_cols(s, X))

    def qt_power_sum(self, nodes, weights, X, power):
        """``sum_j w_j Q_{t_j}^power X``."""
        acc = np.zeros_like(X, dtype=np.complex128)
        for t, w in zip(nodes, weights):
            Y = X
            for _ in range(power):
                Y = self.qt_cols(t, Y)
            acc += w * Y
        return acc

    def qt_norms(self, nodes, X):
        """Euclidean column norms of ``Q_t X`` for each node, shape ``(len(nodes), r)``."""
        return np.array([np.linalg.norm(self.qt_cols(t, X), axis=0) for t in nodes])


class FourierEngine(_Engine):
    """Exact solves for ``B = I``: BD = DB = D is diagonal in frequency."""

    def __init__(self, system, side):
        super().__init__(system, side)
        if not system.B.is_identity:
            raise ConfigurationError("the Fourier engine needs B = I")
        self.sym = system.D.lattice
        self.eye = np.eye(self.grid.m)

    def _apply_fn(self, X, fn):
        grid = self.grid

        coeffs = forward(grid, self.to_fields(X))
        mats = fn(self.sym)
        out = inverse(grid, np.matmul(mats, coeffs[..., None])[..., 0])
        return self.to_cols(out)

    def resolvent_cols(self, s, X):
        if s == 0:
            return X.copy()
        return self._apply_fn(X, lambda S: np.linalg.inv(self.eye + 1j * s * S))

    def qt_cols(self, t, X):
        s = t**self.k
        return self._apply_fn(X, lambda S: s * S @ np.linalg.inv(self.eye + s * s * S @ S))

    def mean_cols(self, t, X):
        s = t**self.k
        return self._apply_fn(X, lambda S: np.linalg.inv(self.eye + s * s * S @ S))


class RangeCompression:
    """BD (or DB) restricted to the closure of its range, in an orthonormal basis.

    For BD the range is ``B R(D)`` and the complementary null space is ``N(D)``; for
    DB the range is ``R(D)`` and the null space is ``N(DB) = (B^* R(D))^perp``.
    ``coords`` returns coordinates of the oblique projection onto the range.
    """

    def __init__(self, system: DiracSystem, side: str):
        _check_side(side)
        grid = system.grid
        self.system = system
        self.side = side
        V = system.D.range_basis(budget=system.budget)
        npts, m = grid.num_points, grid.m
        blocks = system.B.matrices.reshape(npts, m, m)

        def bmul(mats, X):
            return np.einsum("xij,xjc->xic", mats, X.reshape(npts, m, -1)).reshape(grid.dof, -1)

        def dmul(X):
            arr = X.T.reshape((X.shape[1],) + grid.field_shape)
            return system.D.apply_array(arr).reshape(X.shape[1], -1).T

        if side == "BD":
            BV = bmul(blocks, V)
            W, _ = np.linalg.qr(BV)
            left = V  # functional V^* annihilates N(D)
            A = np.conj(W.T) @ bmul(blocks, dmul(W))
        else:
            W = V
            left = bmul(np.conj(np.swapaxes(blocks, -1, -2)), V)  # (B^* V)^* u = V^* B u
            A = np.conj(V.T) @ dmul(bmul(blocks, V))
        self.W = W
        self.left = left
        G = np.conj(left.T) @ W
        self.gram_lu = sla.lu_factor(G)
        self.gram_cond = float(np.linalg.cond(G))
        self.A = A
        T, Z = sla.schur(A, output="complex")
        self.T = T
        self.Z = Z
        self.eigenvalues = np.diag(T).copy()
        self.rank = W.shape[1]

    def coords(self, X):
        return sla.lu_solve(self.gram_lu, np.conj(self.left.T) @ X)

    def split(self, X):
        """``(range coordinates, null component)`` of the oblique splitting."""
        c = self.coords(X)
        return c, X - self.W @ c

    def schur_coords(self, X):
        c, null = self.split(X)
        return np.conj(self.Z.T) @ c, null

    def lift(self, Y):
        return self.W @ (self.Z @ Y)

    def projector(self):
        """Dense oblique projector onto the range along the null space."""
        return self.W @ sla.lu_solve(self.gram_lu, np.conj(self.left.T))

    def solve_shift(self, s, Y):
        """``(I + i s T)^{-1} Y`` in Schur coordinates."""
        M = np.eye(self.rank) + 1j * s * self.T
        return sla.solve_triangular(M, Y)


class DenseEngine(_Engine):
    def __init__(self, system, side):
        super().__init__(system, side)
        self.comp = system.cached(("compression", side), lambda: RangeCompression(system, side))

    def resolvent_cols(self, s, X):
        if s == 0:
            return X.copy()
        Y, null = self.comp.schur_coords(X)
        return null + self.comp.lift(self.comp.solve_shift(s, Y))

    def _qt_schur(self, t, Y):
        s = t**self.k
        return (self.comp.solve_shift(-s, Y) - self.comp.solve_shift(s, Y)) / 2j

    def qt_cols(self, t, X):
        Y, _ = self.comp.schur_coords(X)
        return self.comp.lift(self._qt_schur(t, Y))

    def mean_cols(self, t, X):
        s = t**self.k
        Y, null = self.comp.schur_coords(X)
        return null + self.comp.lift(0.5 * (self.comp.solve_shift(-s, Y) + self.comp.solve_shift(s, Y)))

    def qt_power_sum(self, nodes, weights, X, power):
        Y0, _ = self.comp.schur_coords(X)
        acc = np.zeros_like(Y0)
        for t, w in zip(nodes, weights):
            Y = Y0
            for _ in range(power):
                Y = self._qt_schur(t, Y)
            acc += w * Y
        return self.comp.lift(acc)

    def qt_norms(self, nodes, X):
        # W and Z have orthonormal columns, so norms can be taken in Schur coordinates
        Y0, _ = self.comp.schur_coords(X)
        return np.array([np.linalg.norm(self._qt_schur(t, Y0), axis=0) for t in nodes])


class IterativeEngine(_Engine):
    def __init__(self, system, side, rtol=1e-13, restart=200, maxiter=20):
        super().__init__(system, side)
        self.rtol = rtol
        self.restart = restart
        self.maxiter = maxiter
        self.sym = system.D.lattice
        self.eye = np.eye(self.grid.m)
        self.op_norm = operator_norm_bound(system)

    def _precond(self, s, x):

        arr = x.reshape((1,) + self.grid.field_shape)
        coeffs = forward(self.grid, arr)
        mats = np.linalg.inv(self.eye + 1j * s * self.sym)
        return inverse(self.grid, np.matmul(mats, coeffs[..., None])[..., 0]).reshape(-1)

    def _full(self, s, x):
        return x + 1j * s * self.op_cols(x.reshape(-1, 1))[:, 0]

    def resolvent_cols(self, s, X):
        if s == 0:
            return X.copy()
        dof = self.grid.dof
        out = np.empty_like(X, dtype=np.complex128)
        for j in range(X.shape[1]):
            u = X[:, j].astype(np.complex128)
            unorm = np.linalg.norm(u)
            if unorm == 0:
                out[:, j] = 0
                continue
            restart = min(self.restart, dof)
            w = np.zeros(dof, dtype=np.complex128)
            for _ in range(3):  # GMRES plus iterative refinement on the true residual
                r = u - self._full(s, w)
                if self.side == "BD":
                    op = LinearOperator((dof, dof), matvec=lambda y: self._full(s, self._precond(s, y)), dtype=np.complex128)
                    y, info = gmres(op, r, rtol=self.rtol, atol=0.0, restart=restart, maxiter=self.maxiter)
                    w = w + self._precond(s, y)
                else:
                    op = LinearOperator((dof, dof), matvec=lambda y: self._precond(s, self._full(s, y)), dtype=np.complex128)
                    dw, info = gmres(op, self._precond(s, r), rtol=self.rtol, atol=0.0, restart=restart, maxiter=self.maxiter)
                    w = w + dw
                res = backward_residual(self.op_cols, s, w.reshape(-1, 1), u.reshape(-1, 1), self.op_norm)[0]
                if res <= RESIDUAL_TOL:
                    break
            if res > RESIDUAL_TOL:
                raise SolverError("preconditioned GMRES did not reach the residual target", residual=float(res), shift=float(s), info=int(info))
            out[:, j] = w
        return out


def engine(system: DiracSystem, side: str = "BD", method: str = "auto") -> _Engine:
    """Pick (and cache) the solver engine for ``system``."""
    _check_side(side)
    system.require_validated("the resolvent")
    if method == "auto":
        if system.B.is_identity:
            method = "fourier"
        elif system.grid.dof <= system.budget:
            method = "dense"
        else:
            method = "iterative"
    factories = {"fourier": FourierEngine, "dense": DenseEngine, "iterative": IterativeEngine}
    if method not in factories:
        raise ConfigurationError("method must be auto, fourier, dense or iterative", method=method)
    return system.cached(("engine", side, method), lambda: factories[method](system, side))


def _field_op(system, u: Field, fn):
    X = u.flat.reshape(-1, 1)
    return Field(system.grid, fn(X)[:, 0])


def resolvent(system: DiracSystem, s: float, u: Field, side: str = "BD", method: str = "auto") -> Field:
    """``w`` with ``(I + i s BD) w = u`` (or the DB analogue)."""
    eng = engine(system, side, method)
    return _field_op(system, u, lambda X: eng.resolvent_cols(float(s), X))


def qt(system: DiracSystem, t: float, u: Field, side: str = "BD", method: str = "auto") -> Field:
    """``Q_t u = (1/2i)(R_{-t^k} - R_{t^k}) u = t^k BD (I + t^{2k} BDBD)^{-1} u``."""
    if not t > 0:
        raise ConfigurationError("t must be positive", t=t)
    eng = engine(system, side, method)
    return _field_op(system, u, lambda X: eng.qt_cols(float(t), X))


def qt_mean(system: DiracSystem, t: float, u: Field, side: str = "BD", method: str = "auto") -> Field:
    """``(1/2)(R_{-t^k} + R_{t^k}) u = (I + t^{2k} BDBD)^{-1} u``."""
    if not t > 0:
        raise ConfigurationError("t must be positive", t=t)
    eng = engine(system, side, method)
    return _field_op(system, u, lambda X: eng.mean_cols(float(t), X))
