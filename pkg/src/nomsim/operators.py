"""Second-order nonlocal gradient/Hessian operators on particle clouds.

Every particle ``i`` gets a shape tensor ``K_i``, the inverse of the weighted
polynomial moment matrix over its support, and every bond ``(i, j)`` the
operator vector ``K_i p_ij``.  Its first ``dim`` entries form the gradient
vector ``g_ij`` and the remaining entries the packed Hessian ``h_ij``.

Packed Hessian order follows the polynomial vector::

    2D: xx, xy, yy
    3D: xx, xy, xz, yy, yz, zz
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .particles import ParticleCloud, SupportTable

log = logging.getLogger(__name__)

COND_LIMIT = 1e12

# (row, col) of each packed Hessian entry
HESSIAN_INDEX = {
    2: [(0, 0), (0, 1), (1, 1)],
    3: [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)],
}


class SingularShapeTensor(ValueError):
    """Raised when a moment matrix cannot be inverted reliably."""

    def __init__(self, index, cond):
        self.index = index
        self.cond = cond
        super().__init__(f"singular shape tensor at particle {index} (cond={cond:.3g})")


def basis_size(dim: int) -> int:
    return 5 if dim == 2 else 9


def poly_vector(r, variant: str = "consistent") -> np.ndarray:
    """Quadratic monomials of the relative position ``r`` (last axis).

    ``variant="plain-zz"`` keeps a plain ``z**2`` as the final 3D entry instead
    of ``z**2/2``; it exists for cross-checking only.
    """
    r = np.asarray(r, dtype=float)
    dim = r.shape[-1]
    if dim == 2:
        x, y = r[..., 0], r[..., 1]
        return np.stack([x, y, 0.5 * x * x, x * y, 0.5 * y * y], axis=-1)
    if dim == 3:
        x, y, z = r[..., 0], r[..., 1], r[..., 2]
        zz = z * z if variant == "plain-zz" else 0.5 * z * z
        return np.stack([x, y, z, 0.5 * x * x, x * y, x * z, 0.5 * y * y, y * z, zz], axis=-1)
    raise ValueError("poly_vector needs a 2- or 3-vector")


def weight(r) -> np.ndarray:
    """Influence function 1/|r|^2."""
    r = np.asarray(r, dtype=float)
    d2 = np.sum(r * r, axis=-1)
    if np.any(d2 == 0):
        raise ValueError("self-bond: zero-length bond has no weight")
    return 1.0 / d2


def _poly_scale(length, dim):
    # multipliers that make p dimensionless for a characteristic length L
    lin = 1.0 / length
    quad = lin * lin
    return np.concatenate([np.repeat(lin[..., None], dim, -1),
                           np.repeat(quad[..., None], basis_size(dim) - dim, -1)], axis=-1)


def _invert_moments(p, coef, length, dim):
    """Batched K = A^-1 with A = sum coef p p^T, scaled to unit length.

    Returns (K, A, cond) where cond is the eigenvalue ratio of the
    dimensionless moment matrix; invalid rows carry K = 0.
    """
    s = _poly_scale(length, dim)                     # (N, m)
    ps = p * s[:, None, :]
    a_hat = np.einsum("nk,nka,nkb->nab", coef, ps, ps)
    a_hat = 0.5 * (a_hat + np.swapaxes(a_hat, 1, 2))
    lam, vec = np.linalg.eigh(a_hat)
    lam_max = lam[:, -1]
    lam_min = lam[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lam_min > 0, lam_max / lam_min, np.inf)
    ok = np.isfinite(cond) & (cond <= COND_LIMIT)
    inv_lam = np.where(ok[:, None], 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
    k_hat = np.einsum("nab,nb,ncb->nac", vec, inv_lam, vec)
    k = k_hat * s[:, :, None] * s[:, None, :]
    a = a_hat / (s[:, :, None] * s[:, None, :])
    return k, a, cond


@dataclass(frozen=True)
class ShapeTensor:
    """Shape tensor of one particle."""

    K: np.ndarray
    moment: np.ndarray
    m: float
    cond: float


@dataclass(frozen=True)
class BondOperators:
    """Operator data for the bonds of one particle, one row per neighbour."""

    neighbors: np.ndarray
    omega: np.ndarray
    g: np.ndarray
    h: np.ndarray
    p: np.ndarray

    def hessian_matrices(self) -> np.ndarray:
        return unpack_hessian(self.h)


def unpack_hessian(h) -> np.ndarray:
    """Packed Hessian entries (..., 3|6) to symmetric (..., d, d)."""
    h = np.asarray(h)
    dim = 2 if h.shape[-1] == 3 else 3
    out = np.zeros(h.shape[:-1] + (dim, dim))
    for c, (a, b) in enumerate(HESSIAN_INDEX[dim]):
        out[..., a, b] = h[..., c]
        out[..., b, a] = h[..., c]
    return out


def pack_hessian(mat) -> np.ndarray:
    mat = np.asarray(mat)
    dim = mat.shape[-1]
    return np.stack([mat[..., a, b] for a, b in HESSIAN_INDEX[dim]], axis=-1)


def _single_support(i, cloud, supports):
    nbr = supports[i]
    r = cloud.positions[nbr] - cloud.positions[i]
    return nbr, r


def shape_tensor(i: int, cloud: ParticleCloud, supports: SupportTable) -> ShapeTensor:
    nbr, r = _single_support(i, cloud, supports)
    dim = cloud.dim
    if len(nbr) == 0:
        raise SingularShapeTensor(i, np.inf)
    w = weight(r)
    coef = (w * cloud.volumes[nbr])[None, :]
    p = poly_vector(r)[None]
    length = np.array([np.mean(np.linalg.norm(r, axis=1))])
    k, a, cond = _invert_moments(p, coef, length, dim)
    if not cond[0] <= COND_LIMIT:
        raise SingularShapeTensor(i, cond[0])
    return ShapeTensor(k[0], a[0], float(coef.sum()), float(cond[0]))


def bond_operators(i: int, cloud: ParticleCloud, supports: SupportTable) -> BondOperators:
    st = shape_tensor(i, cloud, supports)
    nbr, r = _single_support(i, cloud, supports)
    p = poly_vector(r)
    b = p @ st.K  # K symmetric, so rows are K p_ij
    dim = cloud.dim
    return BondOperators(nbr, weight(r), b[:, :dim], b[:, dim:], p)


class Operators:
    """Vectorised operator cache for a whole cloud.

    Bond data live in padded ``(N, W, ...)`` arrays aligned with the support
    table.  ``alive`` masks bonds that still take part; after bonds are
    broken, call :meth:`refresh` on the affected particles.
    """

    def __init__(self, cloud: ParticleCloud, supports: SupportTable, strict: bool = True):
        if supports.count != cloud.count:
            raise ValueError("support table does not match the cloud")
        self.cloud = cloud
        self.supports = supports
        self.dim = cloud.dim
        self.m = basis_size(self.dim)
        nbr = supports.neighbors
        self.nbr = np.where(nbr >= 0, nbr, 0)
        self.alive = supports.mask.copy()
        self.r = cloud.positions[self.nbr] - cloud.positions[:, None, :]
        self.r[~self.alive] = 0.0
        d2 = np.sum(self.r ** 2, axis=-1)
        self.length = np.sqrt(d2)
        with np.errstate(divide="ignore"):
            self.omega = np.where(self.alive, 1.0 / np.where(d2 > 0, d2, 1.0), 0.0)
        if np.any(self.alive & (d2 == 0)):
            raise ValueError("self-bond: coincident particles in a support")
        self.p = poly_vector(self.r)
        self.vol = cloud.volumes
        self.vol_j = self.vol[self.nbr]
        n = cloud.count
        self.K = np.zeros((n, self.m, self.m))
        self.B = np.zeros(self.p.shape)
        self.msum = np.zeros(n)
        self.cond = np.zeros(n)
        self.active = np.zeros(n, dtype=bool)
        self._coef = np.zeros(self.omega.shape)
        self._rebuild(np.arange(n), strict)

    @property
    def g(self):
        return self.B[..., :self.dim]

    @property
    def h(self):
        return self.B[..., self.dim:]

    @property
    def coef(self) -> np.ndarray:
        """omega_ij * dV_j on alive bonds of active particles, zero elsewhere."""
        return self._coef

    def kill(self, rows, slots):
        """Mark bond slots dead; operators of ``rows`` need :meth:`refresh`."""
        self.alive[rows, slots] = False
        self._coef[rows, slots] = 0.0

    def _rebuild(self, idx, strict, min_bonds=None):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return np.empty(0, dtype=np.int64)
        alive = self.alive[idx]
        coef = np.where(alive, self.omega[idx] * self.vol_j[idx], 0.0)
        cnt = alive.sum(axis=1)
        length = np.where(cnt > 0, (self.length[idx] * alive).sum(axis=1) / np.maximum(cnt, 1), 1.0)
        k, _, cond = _invert_moments(self.p[idx], coef, length, self.dim)
        ok = np.isfinite(cond) & (cond <= COND_LIMIT) & (cnt >= max(self.m, min_bonds or 0))
        bad = idx[~ok]
        if strict and bad.size:
            raise SingularShapeTensor(int(bad[0]), float(cond[~ok][0]))
        self.K[idx] = k
        self.B[idx] = np.einsum("nab,nkb->nka", k, self.p[idx]) * alive[..., None]
        self.msum[idx] = coef.sum(axis=1)
        self.cond[idx] = cond
        self.active[idx] = ok
        self.B[bad] = 0.0
        self._coef[idx] = np.where(ok[:, None], coef, 0.0)
        return bad

    def refresh(self, idx, min_bonds=None) -> np.ndarray:
        """Rebuild operators for ``idx``; returns particles demoted to inert.

        A particle is demoted when its shape tensor is singular or when fewer
        than ``min_bonds`` bonds remain (default: the basis size).
        """
        bad = self._rebuild(idx, strict=False, min_bonds=min_bonds)
        for i in bad:
            log.info("particle %d demoted to inert after refresh", i)
        return bad

    def moment_matrices(self, idx=None) -> np.ndarray:
        idx = np.arange(self.cloud.count) if idx is None else np.asarray(idx)
        coef = np.where(self.alive[idx], self.omega[idx] * self.vol_j[idx], 0.0)
        return np.einsum("nk,nka,nkb->nab", coef, self.p[idx], self.p[idx])

    def differences(self, u) -> np.ndarray:
        """u_j - u_i on every slot (zero on dead slots)."""
        u = np.asarray(u, dtype=float)
        du = u[self.nbr] - u[:, None, ...]
        mask = self.alive.reshape(self.alive.shape + (1,) * (u.ndim - 1))
        return np.where(mask, du, 0.0)

    def derivatives(self, u, du=None) -> np.ndarray:
        """Nonlocal derivative tuple of a scalar (N,) or vector (N, c) field.

        Returns (N, m) or (N, m, c); rows: gradient then packed Hessian.
        """
        du = self.differences(u) if du is None else du
        if du.ndim == 2:
            return np.einsum("nk,nka,nk->na", self.coef, self.B, du)
        return np.einsum("nk,nka,nkc->nac", self.coef, self.B, du)

    def gradient(self, u) -> np.ndarray:
        """(N, dim) for scalars, (N, c, dim) Jacobian d u_a / d x_b for vectors."""
        d = self.derivatives(u)
        if d.ndim == 2:
            return d[:, :self.dim]
        return np.swapaxes(d[:, :self.dim, :], 1, 2)

    def hessian(self, u) -> np.ndarray:
        """(N, dim, dim) Hessian of a scalar field."""
        d = self.derivatives(u)
        if d.ndim != 2:
            raise ValueError("hessian() takes a scalar field")
        return unpack_hessian(d[:, self.dim:])

    def laplacian(self, u, variant: str = "trace") -> np.ndarray:
        """Nonlocal Laplacian of a scalar field.

        ``trace`` sums the diagonal Hessian entries.  ``weighted`` applies the
        weights (1, 2, 1) in 2D or (1, 2, 2, 1, 2, 1) in 3D to the packed
        entries, i.e. it also adds twice every mixed derivative.
        """
        h = self.derivatives(u)[:, self.dim:]
        if variant == "trace":
            diag = [c for c, (a, b) in enumerate(HESSIAN_INDEX[self.dim]) if a == b]
            return h[:, diag].sum(axis=1)
        if variant == "weighted":
            w = np.array([2.0 if a != b else 1.0 for a, b in HESSIAN_INDEX[self.dim]])
            return h @ w
        raise ValueError(f"unknown Laplacian variant {variant!r}")

    def residuals(self, u, d=None, du=None) -> np.ndarray:
        """Taylor-fit residual u_ij - p_ij . du_i on every slot."""
        du = self.differences(u) if du is None else du
        d = self.derivatives(u, du) if d is None else d
        if du.ndim == 2:
            fit = np.einsum("nka,na->nk", self.p, d)
        else:
            fit = np.einsum("nka,nac->nkc", self.p, d)
        res = du - fit
        mask = (self.alive & self.active[:, None]).reshape(self.alive.shape + (1,) * (du.ndim - 2))
        return np.where(mask, res, 0.0)

    def scatter(self, bond_values) -> np.ndarray:
        """Antisymmetric scatter: value on slot (i, j) adds to i, subtracts from j."""
        return scatter_pairs(self.nbr, bond_values)

    def hourglass_density(self, res, penalty) -> np.ndarray:
        """Per-particle hourglass energy density 0.5 p/m_i sum w |res|^2 dV_j."""
        sq = res ** 2 if res.ndim == 2 else np.sum(res ** 2, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(self.msum > 0, 0.5 * np.asarray(penalty) / np.where(self.msum > 0, self.msum, 1.0), 0.0)
        return scale * np.sum(self.coef * sq, axis=1)

    def hourglass_forces(self, res, penalty) -> np.ndarray:
        """Stabilisation force from the Taylor residuals ``res``.

        ``penalty`` is a scalar or per-particle array; the force on i from its
        own support is w p/m_i res dV_j dV_i and its negation goes to j.
        """
        pen = np.broadcast_to(np.asarray(penalty, dtype=float), (self.cloud.count,))
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(self.msum > 0, pen / np.where(self.msum > 0, self.msum, 1.0), 0.0)
        scale = scale * self.vol
        t = (self.coef * scale[:, None])
        t = t[..., None] * res if res.ndim == 3 else t * res
        return self.scatter(t)


def scatter_pairs(nbr, bond_values) -> np.ndarray:
    """f_i += sum_k v_ik, f_{nbr[i,k]} -= v_ik; dead slots must carry zero."""
    n = nbr.shape[0]
    v = np.asarray(bond_values, dtype=float)
    flat_j = nbr.ravel()
    if v.ndim == 2:
        return v.sum(axis=1) - np.bincount(flat_j, weights=v.ravel(), minlength=n)
    c = v.shape[-1]
    out = v.sum(axis=1)
    vf = v.reshape(-1, c)
    for a in range(c):
        out[:, a] -= np.bincount(flat_j, weights=vf[:, a], minlength=n)
    return out


def hourglass_bond_force(ops: Operators, i: int, slot: int, u, d_i, penalty) -> np.ndarray:
    """Force density w (p/m_i) (u_ij - p_ij . du_i) for one bond of particle i."""
    j = ops.nbr[i, slot]
    u = np.asarray(u, dtype=float)
    uij = u[j] - u[i]
    fit = ops.p[i, slot] @ d_i
    return ops.omega[i, slot] * penalty / ops.msum[i] * (uij - fit)
