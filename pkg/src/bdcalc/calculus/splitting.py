"""Dense Hodge-type splittings for ``Gamma + B1 Gamma* B2`` and ``B1 D1 + D2 B2``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DimensionError, ValidationError

RANK_TOL = 1e-10


def _opnorm(M) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _range_basis(M, tol=RANK_TOL):
    U, s, _ = np.linalg.svd(M)
    r = int(np.sum(s > tol * max(s[0], 1e-300))) if s.size else 0
    return U[:, :r]


def _common_null(mats, dim, tol=RANK_TOL):
    stacked = np.vstack(mats) if mats else np.zeros((0, dim))
    if stacked.shape[0] == 0:
        return np.eye(dim, dtype=np.complex128)
    _, s, Vh = np.linalg.svd(stacked)
    r = int(np.sum(s > tol * max(s[0], 1e-300))) if s.size else 0
    return np.conj(Vh[r:].T)


def restricted_accretivity(B, basis) -> float:
    """``min Re(Bu, u) / |u|^2`` over the column span of an orthonormal ``basis``."""
    if basis.shape[1] == 0:
        return np.inf
    C = np.conj(basis.T) @ B @ basis
    return float(np.linalg.eigvalsh(0.5 * (C + np.conj(C.T)))[0])


def splitting_projections(bases):
    """Projections onto each block of ``H = span(bases[0]) + span(bases[1]) + ...``.

    The blocks need not be orthogonal; the projector onto block ``i`` is
    ``G E_i G^{-1}`` with ``G = [bases...]``.
    """
    G = np.hstack(bases)
    dim = G.shape[0]
    if G.shape[1] != dim:
        raise ValidationError("subspaces do not form a direct sum", dims=[b.shape[1] for b in bases], total=dim)
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > 1e12:
        raise ValidationError("subspaces are not complementary", condition=cond)
    Ginv = np.linalg.solve(G, np.eye(dim))
    out, start = [], 0
    for b in bases:
        stop = start + b.shape[1]
        out.append(G[:, start:stop] @ Ginv[start:stop])
        start = stop
    return out, cond


def projection_defects(projections) -> dict:
    """Idempotency, mutual annihilation and resolution of the identity.

    Each defect is divided by ``max(1, max ||P_i||)^2``: rounding in a product of
    two oblique projections grows with their norms, so the absolute defect of a
    badly conditioned splitting says nothing about the arithmetic.
    """
    dim = projections[0].shape[0]
    scale = max(1.0, max(_opnorm(P) for P in projections)) ** 2
    idem = max(_opnorm(P @ P - P) for P in projections)
    cross = max(
        (_opnorm(P @ Q) for i, P in enumerate(projections) for j, Q in enumerate(projections) if i != j),
        default=0.0,
    )
    total = _opnorm(sum(projections) - np.eye(dim))
    return {
        "idempotency": idem / scale,
        "annihilation": cross / scale,
        "sum_to_identity": total / scale,
        "projection_norm": float(np.sqrt(scale)),
    }


@dataclass
class HodgeSplitting:
    """An operator together with its three-way splitting ``H = H0 + H1 + H2``."""

    operator: np.ndarray
    projections: tuple
    dims: tuple
    defects: dict = field(default_factory=dict)
    condition: float = 1.0
    similarity_map: np.ndarray | None = None

    @property
    def max_defect(self) -> float:
        return max(v for k, v in self.defects.items() if k != "projection_norm")

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "defects": dict(self.defects), "condition": self.condition}


def _square(name, M, dim=None):
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be a square matrix", shape=M.shape)
    if dim is not None and M.shape[0] != dim:
        raise DimensionError(f"{name} has the wrong size", expected=dim, got=M.shape[0])
    return M


def pi_b(Gamma, B1, B2, accretive_tol: float = 1e-10) -> HodgeSplitting:
    """``Pi_B = Gamma + B1 Gamma* B2`` with its Hodge splitting and similarity check.

    The splitting is ``N(Gamma*_B) n N(Gamma)  +  R(Gamma*_B)  +  R(Gamma)``.
    ``S f = [f1, B2 f2]`` intertwines ``Pi_B`` with ``BD`` for
    ``D = [[0, Gamma*], [Gamma, 0]]`` and ``B = diag(B1, B2)``; the defect
    ``||S Pi_B - BD S||`` is recorded as ``similarity``.
    """
    G = _square("Gamma", Gamma)
    dim = G.shape[0]
    B1 = _square("B1", B1, dim)
    B2 = _square("B2", B2, dim)
    Gs = np.conj(G.T)
    gn = _opnorm(G)
    nil = compat = 0.0
    if gn > 0:
        nil = _opnorm(G @ G) / gn**2
        if nil > 1e-12:
            raise ValidationError("Gamma is not nilpotent", defect=nil)
        compat = max(_opnorm(Gs @ B2 @ B1 @ Gs), _opnorm(G @ B1 @ B2 @ G)) / (gn**2 * _opnorm(B1) * _opnorm(B2))
        if compat > 1e-10:
            raise ValidationError("B1, B2 are not compatible with Gamma", defect=compat)
        d1 = restricted_accretivity(B1, _range_basis(Gs))
        d2 = restricted_accretivity(B2, _range_basis(G))
        if min(d1, d2) <= accretive_tol:
            raise ValidationError("B1 or B2 is not accretive on the relevant range", delta1=d1, delta2=d2)

    GsB = B1 @ Gs @ B2
    Pi = G + GsB
    U1 = _range_basis(GsB)
    U2 = _range_basis(G)
    N0 = _common_null([GsB, G], dim)
    (P0, P1, P2), cond = splitting_projections([N0, U1, U2])

    D = np.block([[np.zeros_like(G), Gs], [G, np.zeros_like(G)]])
    Z = np.zeros_like(G)
    B = np.block([[B1, Z], [Z, B2]])
    S = np.vstack([P1, B2 @ P2])
    sim = _opnorm(S @ Pi - B @ D @ S) / max(_opnorm(S) * _opnorm(Pi), 1e-300)

    defects = projection_defects([P0, P1, P2])
    defects["similarity"] = sim
    defects["nilpotency"] = nil
    defects["compatibility"] = compat
    return HodgeSplitting(Pi, (P0, P1, P2), (N0.shape[1], U1.shape[1], U2.shape[1]), defects, cond, S)


def sum_op(D1, B1, D2, B2) -> HodgeSplitting:
    """``T = B1 D1 + D2 B2`` with the splitting ``N + R(B1 D1) + R(D2 B2)``.

    ``defects["diagonal"]`` measures how far ``T`` is from acting as
    ``0 + B1 D1 + D2 B2`` blockwise, relative to ``||T||``.
    """
    D1 = _square("D1", D1)
    dim = D1.shape[0]
    D2 = _square("D2", D2, dim)
    B1 = _square("B1", B1, dim)
    B2 = _square("B2", B2, dim)
    scale = _opnorm(D1) * _opnorm(D2)
    nest = compat = 0.0
    if scale > 0:
        nest = max(_opnorm(D2 @ D1), _opnorm(D1 @ D2)) / scale
        compat = _opnorm(D2 @ B2 @ B1 @ D1) / (scale * _opnorm(B1) * _opnorm(B2))
    if nest > 1e-10:
        raise ValidationError("ranges of D1 and D2 are not nested in the opposite null spaces", defect=nest)
    if compat > 1e-10:
        raise ValidationError("D2 B2 B1 D1 does not vanish", defect=compat)
    for name, B, Dm in (("B1", B1, D1), ("B2", B2, D2)):
        R = _range_basis(Dm)
        if R.shape[1] and restricted_accretivity(B, R) <= 0:
            raise ValidationError(f"{name} is not accretive on the range of its operator")

    T1 = B1 @ D1
    T2 = D2 @ B2
    T = T1 + T2
    R1 = _range_basis(T1)
    R2 = _range_basis(T2)
    N0 = _common_null([T1, T2], dim)
    (P0, P1, P2), cond = splitting_projections([N0, R1, R2])

    tn = max(_opnorm(T), 1e-300)
    diag = max(
        _opnorm(T @ P0),
        _opnorm(T @ P1 - T1 @ P1),
        _opnorm(T @ P2 - T2 @ P2),
        _opnorm(P1 @ T @ P1 - T @ P1),
        _opnorm(P2 @ T @ P2 - T @ P2),
    ) / tn
    defects = projection_defects([P0, P1, P2])
    defects["diagonal"] = diag
    defects["nesting"] = nest
    defects["compatibility"] = compat
    return HodgeSplitting(T, (P0, P1, P2), (N0.shape[1], R1.shape[1], R2.shape[1]), defects, cond)


def periodic_difference(points: int, spacing: float = 1.0) -> np.ndarray:
    """Forward difference ``(f[i+1] - f[i]) / h`` on a periodic 1D grid."""
    if points < 2:
        raise ConfigurationError("need at least two points", points=points)
    eye = np.eye(points)
    return (np.roll(eye, 1, axis=1) - eye) / spacing


def exterior_derivative(points: int, dim: int = 1, spacing: float = 1.0) -> np.ndarray:
    """Discrete exterior derivative on a periodic grid, acting on all form degrees.

    Forms of degree 0..dim are stacked as one vector; the returned matrix is
    nilpotent because forward differences along different axes commute.
    """
    d = periodic_difference(points, spacing)
    I = np.eye(points)
    if dim == 1:
        Z = np.zeros((points, points))
        return np.block([[Z, Z], [d, Z]])
    if dim == 2:
        dx = np.kron(d, I)
        dy = np.kron(I, d)
        N = points * points
        Z = np.zeros((N, N))
        # degree 0 -> (dx f, dy f); degree 1 -> dx g_y - dy g_x
        return np.block(
            [
                [Z, Z, Z, Z],
                [dx, Z, Z, Z],
                [dy, Z, Z, Z],
                [Z, -dy, dx, Z],
            ]
        )
    raise ConfigurationError("only dimensions 1 and 2 are supported", dim=dim)


def random_accretive_matrix(dim: int, rng: np.random.Generator, delta: float = 0.5, skew: float = 0.5) -> np.ndarray:
    """``delta I + W W* / dim + i skew S`` with Hermitian ``S``; accretive on the whole space."""
    W = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    S = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    S = 0.5 * (S + np.conj(S.T)) / np.sqrt(dim)
    return delta * np.eye(dim) + (W @ np.conj(W.T)) / dim + 1j * skew * S
