"""Dense spectra and sampled resolvent bounds outside the double sector."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..operators import DiracSystem


def sector_distance(lam, omega: float) -> np.ndarray:
    """Distance from ``lam`` to ``S_omega = {z : |arg(+-z)| <= omega} U {0}``."""
    lam = np.asarray(lam, dtype=np.complex128)
    r = np.abs(lam)
    phi = np.abs(np.angle(lam))
    psi = np.minimum(phi, np.pi - phi)  # angle to the real axis, in [0, pi/2]
    gap = psi - omega
    return np.where(gap <= 0, 0.0, np.where(gap >= np.pi / 2, r, r * np.sin(np.clip(gap, 0, np.pi / 2))))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    omega_bound: float
    max_violation: float
    resolvent_samples: list = field(default_factory=list)

    @property
    def max_product(self) -> float:
        return max((s[1] * s[2] for s in self.resolvent_samples), default=0.0)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "omega_bound": self.omega_bound,
            "max_violation": self.max_violation,
            "max_resolvent_product": self.max_product,
            "resolvent_samples": [
                {"lambda": [float(l.real), float(l.imag)], "norm": float(nrm), "dist": float(d)}
                for l, nrm, d in self.resolvent_samples
            ],
        }

    def eigenvalues_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["re", "im"])
        for z in self.eigenvalues:
            w.writerow([repr(float(z.real)), repr(float(z.imag))])
        return buf.getvalue()


def spectrum(
    system: DiracSystem,
    side: str = "BD",
    angles: int = 5,
    radii: int = 10,
) -> SpectrumReport:
    """Dense eigenvalues of BD (or DB) and resolvent norms on a grid of ``lambda`` outside ``S_omega``."""
    dense = system.dense()
    if side == "BD":
        M = dense.BD
    elif side == "DB":
        M = dense.DB
    else:
        raise ConfigurationError("side must be 'BD' or 'DB'", side=side)
    omega = float(system.report.omega)
    eig = np.linalg.eigvals(M)
    violation = float(np.max(sector_distance(eig, omega))) if eig.size else 0.0
    absval = np.abs(eig)
    nz = absval[absval > 1e-8 * max(1.0, absval.max())]
    lo, hi = (float(nz.min()), float(nz.max())) if nz.size else (1.0, 1.0)
    samples = []
    if omega < np.pi / 2:
        fractions = np.linspace(0.05, 1.0, angles)
        thetas = omega + (np.pi / 2 - omega) * fractions
        rhos = np.geomspace(lo / 10.0, hi * 10.0, radii)
        eye = np.eye(M.shape[0])
        for theta in thetas:
            for quadrant in (theta, np.pi - theta, -theta, -(np.pi - theta)):
                for rho in rhos:
                    lam = rho * np.exp(1j * quadrant)
                    smin = np.linalg.svd(lam * eye - M, compute_uv=False)[-1]
                    samples.append((complex(lam), float(1.0 / smin), float(sector_distance(lam, omega))))
    return SpectrumReport(eig, omega, violation, samples)
