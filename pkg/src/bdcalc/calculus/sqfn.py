"""Square functions and the adjoint identity for Q_t."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..operators import DiracSystem, symbol_custom
from ..spectral import Field, inner, norm
from .quadrature import Quadrature
from .resolvent import engine, qt

TAIL_FRACTION = 0.01


@dataclass
class SquareFunctionReport:
    nodes: np.ndarray
    contributions: np.ndarray
    total: float
    ratio: float
    tail_flags: dict
    resolved: bool
    partial_sums: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "contributions": self.contributions.tolist(),
            "total": self.total,
            "ratio": self.ratio,
            "tail_flags": self.tail_flags,
            "resolved": self.resolved,
            "partial_sums": self.partial_sums,
        }


def spectral_window(system: DiracSystem, side: str = "BD"):
    """``(min |lambda != 0|, max |lambda|)`` for the discrete operator.

    Exact from the range compression when a dense engine is available, otherwise
    bounds from the symbol and the coefficient constants.
    """
    vals = np.abs(np.linalg.eigvalsh(0.5 * (system.D.lattice + np.conj(np.swapaxes(system.D.lattice, -1, -2)))))
    nz = vals[vals > 1e-9 * vals.max()]
    if system.B.is_identity:
        return float(nz.min()), float(nz.max())
    if system.grid.dof <= system.budget:
        eng = engine(system, side, "dense")
        lam = np.abs(eng.comp.eigenvalues)
        return float(lam.min()), float(lam.max())
    rep = system.report
    return float(nz.min() * rep.delta / max(1.0, rep.b_norm)), float(nz.max() * rep.b_norm)


def default_quadrature(system: DiracSystem, side: str = "BD", margin_decades: float = 5.0, nodes_per_decade: int = 20) -> Quadrature:
    lo, hi = spectral_window(system, side)
    return Quadrature.spanning(lo, hi, system.k, margin_decades, nodes_per_decade)


def _report(system, nodes, weights, sq_norms, unorm2, resolved):
    contrib = weights * sq_norms
    total = float(np.sum(contrib))
    ratio = total / unorm2 if unorm2 > 0 else 0.0
    flags = {
        "head": bool(total > 0 and contrib[0] > TAIL_FRACTION * total),
        "tail": bool(total > 0 and contrib[-1] > TAIL_FRACTION * total),
    }
    partial = {
        "t_le_1": float(np.sum(contrib[nodes <= 1.0])),
        "t_gt_1": float(np.sum(contrib[nodes > 1.0])),
    }
    return SquareFunctionReport(nodes, contrib, total, ratio, flags, resolved, partial)


def _resolves(system, q, side):
    lo, hi = spectral_window(system, side)
    k = system.k
    return bool(q.t_min <= hi ** (-1.0 / k) and q.t_max >= lo ** (-1.0 / k))


def square_function(system: DiracSystem, u: Field, q: Quadrature, side: str = "BD", method: str = "auto") -> SquareFunctionReport:
    """Log-quadrature of ``||Q_t u||^2 dt/t`` and its ratio to ``||u||^2``."""
    eng = engine(system, side, method)
    nodes, weights = q.nodes()
    X = u.flat.reshape(-1, 1)
    norms = eng.qt_norms(nodes, X)[:, 0] ** 2 * system.grid.cell_volume
    return _report(system, nodes, weights, norms, norm(u) ** 2, _resolves(system, q, side))


def square_function_ratios(system: DiracSystem, fields, q: Quadrature, side: str = "BD", method: str = "auto") -> np.ndarray:
    """Ratios for a batch of fields in a single pass over the nodes."""
    eng = engine(system, side, method)
    nodes, weights = q.nodes()
    X = np.stack([f.flat for f in fields], axis=1)
    norms = eng.qt_norms(nodes, X) ** 2
    return (weights @ norms) / np.sum(np.abs(X) ** 2, axis=0)


def duality_check(system: DiracSystem, q: Quadrature, trials: int = 3, seed: int = 0, method: str = "auto", max_nodes: int = 12) -> float:
    """``max |(Q_t f, g) - (f, Q_t^{DB*} g)| / (||f|| ||g||)`` over random ``f, g`` and nodes."""
    adj = system.adjoint()
    rng = np.random.default_rng(seed)
    nodes, _ = q.nodes()
    if nodes.size > max_nodes:
        nodes = nodes[np.linspace(0, nodes.size - 1, max_nodes).round().astype(int)]
    worst = 0.0
    for _ in range(trials):
        f = Field.random(system.grid, rng)
        g = Field.random(system.grid, rng)
        scale = norm(f) * norm(g)
        for t in nodes:
            lhs = inner(qt(system, t, f, "BD", method), g)
            rhs = inner(f, qt(adj, t, g, "DB", method))
            worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


def first_order_system(system: DiracSystem) -> DiracSystem:
    """The system ``(D1, B)`` where ``D1`` is the first-order part of an inhomogeneous ``D``."""
    first = system.D.params.get("first_order")
    if first is None:
        raise ConfigurationError("D has no first-order part on record", kind=system.D.kind)
    D1 = symbol_custom(system.grid, 1, first, homogeneous=True)
    return DiracSystem(D1, system.B, budget=system.budget)


def inhomogeneous_split(
    system: DiracSystem,
    q: Quadrature,
    probes: int = 8,
    seed: int = 0,
    method: str = "auto",
) -> dict:
    """Square-function ratios (BD side) for an inhomogeneous ``D`` with the two regimes separated.

    For ``t <= 1`` the family is compared with the one built from the first-order
    part ``D1``: ``max ||(Q_t - Q_t^1) u|| / (t ||u||)``. For ``t > 1`` the bound
    ``||Q_t B D v|| <~ ||v|| / t`` is probed on ``v`` in the range of ``D``.
    """
    grid = system.grid
    rng = np.random.default_rng(seed)
    eng = engine(system, "BD", method)
    eng1 = engine(first_order_system(system), "BD", method)
    nodes, weights = q.nodes()
    X = np.stack([Field.random(grid, rng).flat for _ in range(probes)], axis=1)
    norms = eng.qt_norms(nodes, X) ** 2
    contrib = weights[:, None] * norms / np.sum(np.abs(X) ** 2, axis=0)
    head = nodes <= 1.0
    ratios = contrib.sum(axis=0)

    xn = np.linalg.norm(X, axis=0)
    head_cmp = 0.0
    for t in nodes[head]:
        diff = np.linalg.norm(eng.qt_cols(t, X) - eng1.qt_cols(t, X), axis=0)
        head_cmp = max(head_cmp, float(np.max(diff / (t * xn))))

    V = eng.to_cols(system.D.project_range_array(eng.to_fields(X)))
    DV = eng.to_cols(system.apply_array(eng.to_fields(V), "BD"))
    vn = np.linalg.norm(V, axis=0)
    tail_cmp = 0.0
    for t in nodes[~head]:
        tail_cmp = max(tail_cmp, float(np.max(t * np.linalg.norm(eng.qt_cols(t, DV), axis=0) / vn)))
    return {
        "sup_ratio": float(ratios.max()),
        "ratios": ratios.tolist(),
        "head_partial_max": float(contrib[head].sum(axis=0).max()),
        "tail_partial_max": float(contrib[~head].sum(axis=0).max()),
        "head_first_order_comparison": head_cmp,
        "tail_theta_d_bound": tail_cmp,
    }
