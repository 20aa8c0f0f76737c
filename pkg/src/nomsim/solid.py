"""Nonlocal elasticity: constitutive update and dual-horizon force assembly."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .operators import Operators, scatter_pairs


class StaleOperators(RuntimeError):
    pass


@dataclass(frozen=True)
class SolidMaterial:
    E: float
    nu: float
    rho: float
    model: str = "linear"           # "linear" | "svk"
    reduction: str = "plane-stress"  # "plane-stress" | "plane-strain" | "3d"

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.rho > 0:
            raise ValueError("density must be positive")
        if self.model not in ("linear", "svk"):
            raise ValueError(f"unknown material model {self.model!r}")
        if self.reduction not in ("plane-stress", "plane-strain", "3d"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    @property
    def dim(self) -> int:
        return 3 if self.reduction == "3d" else 2

    def lame(self):
        """(lambda, mu), with the plane-stress lambda when that applies."""
        mu = self.E / (2.0 * (1.0 + self.nu))
        lam = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        if self.reduction == "plane-stress":
            lam = 2.0 * lam * mu / (lam + 2.0 * mu)
        return lam, mu

    def wave_speed(self) -> float:
        if self.dim == 2:
            return float(np.sqrt(self.E / (self.rho * (1.0 - self.nu ** 2))))
        nu = self.nu
        return float(np.sqrt(self.E * (1 - nu) / (self.rho * (1 + nu) * (1 - 2 * nu))))


def hourglass_penalty(ops: Operators, modulus: float, scaling: str = "strain") -> np.ndarray:
    """Per-particle hourglass penalty.

    ``raw`` uses ``modulus`` as is.  ``strain`` scales it by ``m_i / sum_j dV_j``
    so that the hourglass energy density becomes ``0.5 * modulus`` times the
    volume-averaged squared hourglass strain, independent of the length unit.
    """
    n = ops.cloud.count
    if scaling == "raw":
        return np.full(n, float(modulus))
    if scaling != "strain":
        raise ValueError(f"unknown penalty scaling {scaling!r}")
    vol = np.where(ops.alive, ops.vol_j, 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(vol > 0, modulus * ops.msum / np.where(vol > 0, vol, 1.0), 0.0)


def deformation_gradient(ops: Operators, u) -> np.ndarray:
    """F_ab = delta_ab + du_a/dx_b at every particle, shape (N, d, d)."""
    return np.eye(ops.dim) + ops.gradient(u)


def first_pk_stress(F, material: SolidMaterial):
    """First Piola-Kirchhoff stress and strain-energy density.

    Works on a single (d, d) tensor or a stack (..., d, d).
    """
    F = np.asarray(F, dtype=float)
    dim = F.shape[-1]
    eye = np.eye(dim)
    lam, mu = material.lame()
    if material.model == "linear":
        eps = 0.5 * (F + np.swapaxes(F, -1, -2)) - eye
        tr = np.trace(eps, axis1=-2, axis2=-1)[..., None, None]
        sig = lam * tr * eye + 2.0 * mu * eps
        psi = 0.5 * np.sum(sig * eps, axis=(-2, -1))
        return sig, psi
    C = np.swapaxes(F, -1, -2) @ F
    Eg = 0.5 * (C - eye)
    tr = np.trace(Eg, axis1=-2, axis2=-1)[..., None, None]
    S = lam * tr * eye + 2.0 * mu * Eg
    psi = 0.5 * np.sum(S * Eg, axis=(-2, -1))
    return F @ S, psi


@dataclass
class SolidResponse:
    forces: np.ndarray        # (N, d) internal force, N
    F: np.ndarray
    P: np.ndarray
    psi: np.ndarray           # strain-energy density
    residuals: np.ndarray     # (N, W, d) Taylor-fit residuals
    hourglass: np.ndarray     # hourglass energy density


def _bond_forces(ops, rows, P, res, penalty_i):
    """Elastic + hourglass bond force values on slots of ``rows``."""
    coef = ops.coef[rows] * ops.vol[rows, None]
    t = np.einsum("nab,nkb->nka", P[rows], ops.g[rows]) * coef[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        hg = np.where(ops.msum[rows] > 0, penalty_i[rows] / np.where(ops.msum[rows] > 0, ops.msum[rows], 1.0), 0.0)
    t += (coef * hg[:, None])[..., None] * res[rows]
    return t


def _scatter_rows(ops, rows, t):
    n = ops.cloud.count
    out = np.zeros((n, ops.dim))
    out[rows] += t.sum(axis=1)
    flat_j = ops.nbr[rows].ravel()
    tf = t.reshape(-1, ops.dim)
    for a in range(ops.dim):
        out[:, a] -= np.bincount(flat_j, weights=tf[:, a], minlength=n)
    return out


def assemble_internal_forces(ops: Operators, u, material: SolidMaterial, penalty=None,
                             damage=None, threads: int = 1) -> SolidResponse:
    """Dual-horizon internal forces assembled by scatter over supports.

    Each particle adds ``w P_i g_ij dV_j dV_i`` to itself and subtracts it
    from ``j``; the hourglass term uses the same pattern.  ``penalty``
    defaults to the Young's modulus and may be per-particle.
    """
    if damage is not None and len(damage.dirty):
        raise StaleOperators("operators out of date: refresh dirty particles first")
    u = np.asarray(u, dtype=float)
    n = ops.cloud.count
    pen = material.E if penalty is None else penalty
    pen = np.broadcast_to(np.asarray(pen, dtype=float), (n,))

    du = ops.differences(u)
    d = ops.derivatives(u, du)
    F = np.eye(ops.dim) + np.swapaxes(d[:, :ops.dim, :], 1, 2)
    P, psi = first_pk_stress(F, material)
    inert = ~ops.active
    P[inert] = 0.0
    psi[inert] = 0.0
    res = ops.residuals(u, d, du)

    if threads <= 1:
        t = _bond_forces(ops, slice(None), P, res, pen)
        forces = scatter_pairs(ops.nbr, t)
    else:
        chunks = np.array_split(np.arange(n), threads)

        def work(rows):
            return _scatter_rows(ops, rows, _bond_forces(ops, rows, P, res, pen))

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
        forces = np.zeros((n, ops.dim))
        for part in parts:
            forces += part
    hg = ops.hourglass_density(res, pen)
    return SolidResponse(forces, F, P, psi, res, hg)


def energies(ops: Operators, response: SolidResponse, velocity, rho: float):
    """(strain, kinetic, hourglass) energies in J (J/m in 2D per unit thickness)."""
    vol = ops.vol
    v = np.asarray(velocity, dtype=float)
    strain = float(np.sum(response.psi * vol))
    kinetic = float(0.5 * rho * np.sum(vol * np.sum(v * v, axis=1)))
    hourglass = float(np.sum(response.hourglass * vol))
    return strain, kinetic, hourglass
