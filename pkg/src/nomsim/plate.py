"""Nonlocal Kirchhoff thin plate in bending.

Deflection ``w`` and load ``q`` are both positive in the same (downward)
direction.  The generalized force returned by :func:`assemble_plate_forces`
satisfies ``t * rho * dV_i * w_i'' = f_i``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .operators import Operators, pack_hessian, unpack_hessian

log = logging.getLogger(__name__)

CLAMP_PENALTY_FACTOR = 400.0


@dataclass(frozen=True)
class PlateMaterial:
    E: float
    nu: float
    thickness: float
    rho: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.thickness > 0:
            raise ValueError("thickness must be positive")
        if not self.rho > 0:
            raise ValueError("density must be positive")

    @property
    def D0(self) -> float:
        """Bending stiffness E t^3 / (12 (1 - nu^2))."""
        return self.E * self.thickness ** 3 / (12.0 * (1.0 - self.nu ** 2))

    @property
    def areal_mass(self) -> float:
        return self.rho * self.thickness


def curvature(ops: Operators, w) -> np.ndarray:
    """kappa_i = sum_j w_ij h_ij w_ij dV_j as symmetric (N, 2, 2)."""
    return unpack_hessian(ops.derivatives(w)[:, ops.dim:])


def moment(kappa, material: PlateMaterial) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    tr = np.trace(kappa, axis1=-2, axis2=-1)[..., None, None]
    return material.D0 * (material.nu * tr * np.eye(2) + (1.0 - material.nu) * kappa)


@dataclass
class PlateResponse:
    forces: np.ndarray       # internal + pressure, N
    internal: np.ndarray     # internal part only
    kappa: np.ndarray
    M: np.ndarray
    energy_density: np.ndarray
    residuals: np.ndarray
    hourglass: np.ndarray


def assemble_plate_forces(ops: Operators, w, material: PlateMaterial, q=0.0,
                          penalty=0.0, damage=None) -> PlateResponse:
    if ops.dim != 2:
        raise ValueError("plate problems are two-dimensional")
    if damage is not None and len(damage.dirty):
        raise RuntimeError("operators out of date: refresh dirty particles first")
    w = np.asarray(w, dtype=float)
    n = ops.cloud.count
    dw = ops.differences(w)
    d = ops.derivatives(w, dw)
    kappa = unpack_hessian(d[:, 2:])
    M = moment(kappa, material)
    M[~ops.active] = 0.0
    # M : h_ij with packed h (xx, xy, yy) counts the off-diagonal twice
    mp = pack_hessian(M) * np.array([1.0, 2.0, 1.0])
    coef = ops.coef * ops.vol[:, None]
    t = np.einsum("na,nka->nk", mp, ops.h) * coef

    pen = np.broadcast_to(np.asarray(penalty, dtype=float), (n,))
    res = ops.residuals(w, d, dw)
    if np.any(pen):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(ops.msum > 0, pen / np.where(ops.msum > 0, ops.msum, 1.0), 0.0)
        t = t + coef * s[:, None] * res
    internal = ops.scatter(t)
    q = np.broadcast_to(np.asarray(q, dtype=float), (n,))
    psi = 0.5 * np.sum(M * kappa, axis=(-2, -1))
    hg = ops.hourglass_density(res, pen)
    return PlateResponse(internal + q * ops.vol, internal, kappa, M, psi, res, hg)


def plate_energies(ops: Operators, response: PlateResponse, wdot, material: PlateMaterial):
    """(bending, kinetic, penalty) energies in J."""
    vol = ops.vol
    bending = float(np.sum(response.energy_density * vol))
    kinetic = float(0.5 * material.areal_mass * np.sum(vol * np.asarray(wdot) ** 2))
    penalty = float(np.sum(response.hourglass * vol))
    return bending, kinetic, penalty


def clamped_penalty(n: int, band, E: float, factor: float = CLAMP_PENALTY_FACTOR,
                    inner: float = 0.0) -> np.ndarray:
    """Per-particle penalty: ``factor * E`` on the clamp band, ``inner`` elsewhere."""
    pen = np.full(n, float(inner))
    pen[np.asarray(band, dtype=np.int64)] = factor * E
    return pen


def check_band(ops: Operators, band, physical) -> bool:
    """Warn when the band is thinner than the physical particles' supports.

    Returns True when the band covers every physical support.
    """
    band = np.asarray(band, dtype=np.int64)
    physical = np.asarray(physical, dtype=np.int64)
    if band.size == 0:
        warnings.warn("clamp under-constrained: empty clamp band", stacklevel=2)
        return False
    pos = ops.cloud.positions
    lo = pos[physical].min(axis=0)
    hi = pos[physical].max(axis=0)
    bp = pos[band]
    # distance of each band particle outside the physical box
    out = np.maximum(lo - bp, 0.0) + np.maximum(bp - hi, 0.0)
    depth = float(np.max(np.max(out, axis=1)))
    reach = float(np.max(ops.length[physical] * ops.alive[physical]))
    if depth + 1e-9 * ops.cloud.spacing < reach:
        warnings.warn(f"clamp under-constrained: band depth {depth:.4g} m is thinner "
                      f"than support radius {reach:.4g} m", stacklevel=2)
        return False
    return True
