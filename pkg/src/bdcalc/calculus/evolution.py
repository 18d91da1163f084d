"""The semigroup ``exp(-t DB)`` on the positive spectral subspace."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..errors import ConfigurationError, ValidationError
from ..operators import DiracSystem
from ..spectral import Field
from .resolvent import RangeCompression
from .sign import spectral_projections

MEMBERSHIP_TOL = 1e-8


class Semigroup:
    """``exp(-t DB)`` restricted to ``H_+``, the image of ``E_+``.

    ``H_+`` is spanned by the right-half-plane invariant subspace of the range
    compression, obtained from an ordered Schur form; the generator restricted to
    it is upper triangular, so each evolution is one small matrix exponential.
    """

    def __init__(self, system: DiracSystem, side: str = "DB", bound_samples: int = 48):
        system.require_validated("the semigroup")
        self.system = system
        self.side = side
        comp = system.cached(("compression", side), lambda: RangeCompression(system, side))
        T, Z, sdim = sla.schur(comp.A, output="complex", sort="rhp")
        self.dim = int(sdim)
        self.generator = T[: self.dim, : self.dim]
        self.basis = comp.W @ Z[:, : self.dim]  # orthonormal columns
        self.projections = spectral_projections(system, side)
        ev = np.diag(self.generator)
        self.min_rate = float(np.min(ev.real)) if ev.size else np.inf
        self.max_rate = float(np.max(np.abs(ev))) if ev.size else 0.0
        ts = np.geomspace(1e-3 / max(self.max_rate, 1e-300), 50.0 / max(self.min_rate, 1e-300), bound_samples)
        self.bound = max([1.0] + [float(np.linalg.norm(sla.expm(-t * self.generator), 2)) for t in ts])

    def membership_defect(self, v: Field) -> float:
        vn = np.linalg.norm(v.flat)
        if vn == 0:
            return 0.0
        return float(np.linalg.norm(self.projections.E_plus.matrix @ v.flat - v.flat) / vn)

    def coordinates(self, v: Field) -> np.ndarray:
        defect = self.membership_defect(v)
        if defect > MEMBERSHIP_TOL:
            raise ValidationError("v is not in the positive spectral subspace", defect=defect)
        return np.conj(self.basis.T) @ v.flat

    def evolve_coords(self, t: float, c: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ConfigurationError("t must be nonnegative", t=t)
        if t == 0:
            return c.copy()
        return sla.expm(-t * self.generator) @ c

    def apply(self, t: float, v: Field) -> Field:
        c = self.coordinates(v)
        if t == 0:
            return v
        return Field(self.system.grid, self.basis @ self.evolve_coords(t, c))

    def diagnostics(self, v: Field) -> dict:
        """Defects of the limits ``t -> 0`` (returns ``v``) and ``t -> inf`` (decays)."""
        c = self.coordinates(v)
        vn = max(np.linalg.norm(c), 1e-300)
        t0 = 1e-8 / max(self.max_rate, 1e-300)
        t1 = 40.0 / max(self.min_rate, 1e-300)
        return {
            "bound": self.bound,
            "small_t": t0,
            "small_t_defect": float(np.linalg.norm(self.evolve_coords(t0, c) - c) / vn),
            "large_t": t1,
            "large_t_norm": float(np.linalg.norm(self.evolve_coords(t1, c)) / vn),
        }


def semigroup(system: DiracSystem, t: float, v: Field, side: str = "DB") -> Field:
    sg = system.cached(("semigroup", side), lambda: Semigroup(system, side))
    return sg.apply(t, v)
