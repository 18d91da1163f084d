"""Geometric quadrature for integrals against dt/t."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class Quadrature:
    t_min: float
    t_max: float
    nodes_per_decade: int
    rule: str = "trapezoid-log"

    def __post_init__(self):
        if not (0 < self.t_min < self.t_max and math.isfinite(self.t_max)):
            raise ConfigurationError("quadrature needs 0 < t_min < t_max", t_min=self.t_min, t_max=self.t_max)
        if int(self.nodes_per_decade) != self.nodes_per_decade or self.nodes_per_decade < 4:
            raise ConfigurationError("nodes_per_decade must be an integer >= 4", nodes_per_decade=self.nodes_per_decade)
        if self.rule not in ("midpoint-log", "trapezoid-log"):
            raise ConfigurationError("rule must be 'midpoint-log' or 'trapezoid-log'", rule=self.rule)

    def nodes(self):
        """Nodes ``t_j`` and weights ``w_j`` with ``int g(t) dt/t ~ sum_j w_j g(t_j)``."""
        a, b = math.log(self.t_min), math.log(self.t_max)
        intervals = max(1, math.ceil((b - a) / math.log(10.0) * self.nodes_per_decade))
        h = (b - a) / intervals
        if self.rule == "midpoint-log":
            tau = a + h * (np.arange(intervals) + 0.5)
            w = np.full(intervals, h)
        else:
            tau = a + h * np.arange(intervals + 1)
            w = np.full(intervals + 1, h)
            w[0] = w[-1] = h / 2
        return np.exp(tau), w

    def clipped(self, lo: float, hi: float) -> "Quadrature":
        return Quadrature(max(self.t_min, lo), min(self.t_max, hi), self.nodes_per_decade, self.rule)

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "nodes_per_decade": self.nodes_per_decade, "rule": self.rule}

    @classmethod
    def from_dict(cls, d: dict) -> "Quadrature":
        return cls(float(d["t_min"]), float(d["t_max"]), int(d["nodes_per_decade"]), d.get("rule", "trapezoid-log"))

    @classmethod
    def spanning(cls, lam_min: float, lam_max: float, k: int, margin_decades: float = 5.0, nodes_per_decade: int = 20, rule: str = "trapezoid-log"):
        """A window covering ``1/lam_max^(1/k) .. 1/lam_min^(1/k)`` with margins on both sides."""
        lo = lam_max ** (-1.0 / k) * 10.0 ** (-margin_decades)
        hi = lam_min ** (-1.0 / k) * 10.0 ** (margin_decades)
        return cls(lo, hi, nodes_per_decade, rule)
