"""Particle clouds, support (neighbour) tables and pre-crack filtering."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ParticleCloud:
    """Reference configuration of a particle discretisation.

    Attributes
    ----------
    positions : (N, dim) float array, metres.
    volumes : (N,) float array. Area per unit thickness in 2D, volume in 3D.
    spacing : nominal lattice spacing; used to scale tolerances.
    """

    positions: np.ndarray
    volumes: np.ndarray
    spacing: float

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        vol = np.array(self.volumes, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError("positions must have shape (N, 2) or (N, 3)")
        if pos.shape[0] < 1:
            raise ValueError("empty discretization")
        if vol.shape != (pos.shape[0],):
            raise ValueError("volumes must have one entry per particle")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite particle position")
        if np.any(vol <= 0):
            raise ValueError("particle volumes must be positive")
        pos.setflags(write=False)
        vol.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.count

    def select(self, lo, hi, tol=None) -> np.ndarray:
        """Indices of particles inside the closed box [lo, hi]."""
        tol = 1e-9 * self.spacing if tol is None else tol
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        inside = np.all((self.positions >= lo - tol) & (self.positions <= hi + tol), axis=1)
        return np.flatnonzero(inside)


def generate_grid(bounds, spacing: float, centering: str = "cell") -> ParticleCloud:
    """Regular lattice filling an axis-aligned box.

    ``centering="cell"`` puts one particle at the centre of every lattice
    cell, each carrying ``spacing**dim``.  ``centering="node"`` puts particles
    on the lattice nodes (boundary included) with trapezoidal volumes, so
    boundary particles sit exactly on the box faces.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] not in (2, 3):
        raise ValueError("bounds must be a list of (lo, hi) pairs, one per axis")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    extents = bounds[:, 1] - bounds[:, 0]
    if np.any(extents <= 0):
        raise ValueError("degenerate bounds")
    counts = np.floor(extents / spacing + 1e-9).astype(int)
    if np.any(counts < 1):
        raise ValueError("empty discretization")

    axes, weights = [], []
    for (lo, _), n in zip(bounds, counts):
        if centering == "cell":
            axes.append(lo + (np.arange(n) + 0.5) * spacing)
            weights.append(np.full(n, spacing))
        elif centering == "node":
            axes.append(lo + np.arange(n + 1) * spacing)
            w = np.full(n + 1, spacing)
            w[0] = w[-1] = 0.5 * spacing
            weights.append(w)
        else:
            raise ValueError(f"unknown centering {centering!r}")

    # x varies fastest, matching row-major image layout
    mesh = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([m.transpose().ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*weights, indexing="ij")
    volumes = np.prod(np.stack([m.transpose().ravel() for m in wmesh], axis=1), axis=1)
    return ParticleCloud(positions, volumes, spacing)


def jitter(cloud: ParticleCloud, amplitude: float, seed: int) -> ParticleCloud:
    """Perturb every coordinate by a uniform offset in [-amplitude, amplitude]."""
    if not 0.0 <= amplitude < 0.5 * cloud.spacing:
        raise ValueError("jitter amplitude must lie in [0, spacing/2)")
    if amplitude == 0.0:
        return ParticleCloud(cloud.positions.copy(), cloud.volumes.copy(), cloud.spacing)
    rng = np.random.default_rng(seed)
    offset = rng.uniform(-amplitude, amplitude, size=cloud.positions.shape)
    return ParticleCloud(cloud.positions + offset, cloud.volumes.copy(), cloud.spacing)


@dataclass(frozen=True)
class SupportTable:
    """Per-particle neighbour lists stored as a padded index array.

    ``neighbors[i, :counts[i]]`` is the support of particle ``i`` ordered by
    distance (ties: lower index first); the remaining slots hold -1.
    """

    neighbors: np.ndarray
    counts: np.ndarray
    mode: str = "knn"
    param: float = 0.0

    def __post_init__(self):
        nbr = np.array(self.neighbors, dtype=np.int64)
        cnt = np.array(self.counts, dtype=np.int64)
        nbr.setflags(write=False)
        cnt.setflags(write=False)
        object.__setattr__(self, "neighbors", nbr)
        object.__setattr__(self, "counts", cnt)

    @classmethod
    def from_lists(cls, lists, mode="custom", param=0.0) -> "SupportTable":
        lists = [list(map(int, s)) for s in lists]
        width = max((len(s) for s in lists), default=0)
        nbr = np.full((len(lists), max(width, 1)), -1, dtype=np.int64)
        for i, s in enumerate(lists):
            if i in s:
                raise ValueError(f"particle {i} listed in its own support")
            nbr[i, :len(s)] = s
        return cls(nbr, np.array([len(s) for s in lists]), mode, param)

    @property
    def count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return self.neighbors >= 0

    def lists(self) -> list[list[int]]:
        return [self.neighbors[i, :c].tolist() for i, c in enumerate(self.counts)]

    def __getitem__(self, i) -> np.ndarray:
        return self.neighbors[i, :self.counts[i]]

    def bonds(self):
        """(i, j) arrays of every directed bond j in S_i."""
        rows, slots = np.nonzero(self.mask)
        return rows, self.neighbors[rows, slots]

    def reverse_slots(self) -> np.ndarray:
        """For slot (i, k) holding j, the flat slot of i inside S_j, or -1."""
        n, width = self.neighbors.shape
        rows, slots = np.nonzero(self.mask)
        cols = self.neighbors[rows, slots]
        flat = rows * width + slots
        # sort directed bonds by (i, j) and look up (j, i)
        key = rows * n + cols
        order = np.argsort(key)
        skey = key[order]
        want = cols * n + rows
        pos = np.searchsorted(skey, want)
        pos = np.minimum(pos, len(skey) - 1)
        hit = skey[pos] == want
        rev = np.full(n * width, -1, dtype=np.int64)
        rev[flat[hit]] = flat[order[pos[hit]]]
        return rev.reshape(n, width)


@dataclass(frozen=True)
class DualSupportTable:
    """S_i' = {j : i in S_j}, stored as plain sorted lists."""

    lists: list = field(default_factory=list)

    def __getitem__(self, i):
        return self.lists[i]


def _sort_key(d2: np.ndarray, scale2: float) -> np.ndarray:
    # squared distances rounded so lattice-equal distances tie exactly
    return np.round(d2 / scale2, 9)


def _bin_layout(positions: np.ndarray, bin_size: float):
    lo = positions.min(axis=0)
    cell = np.floor((positions - lo) / bin_size).astype(np.int64)
    shape = cell.max(axis=0) + 1
    flat = np.ravel_multi_index(cell.T, shape)
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    starts = np.searchsorted(sorted_flat, np.arange(np.prod(shape)), side="left")
    ends = np.searchsorted(sorted_flat, np.arange(np.prod(shape)), side="right")
    return cell, shape, order, starts, ends


def _block_members(center, ring, shape, order, starts, ends):
    ranges = [range(max(c - ring, 0), min(c + ring, s - 1) + 1) for c, s in zip(center, shape)]
    ids = []
    for idx in itertools.product(*ranges):
        b = np.ravel_multi_index(idx, shape)
        ids.append(order[starts[b]:ends[b]])
    return np.sort(np.concatenate(ids)) if ids else np.empty(0, dtype=np.int64)


def build_supports(cloud: ParticleCloud, k: int | None = None,
                   radius: float | None = None) -> SupportTable:
    """Neighbour search with a uniform-bin spatial hash.

    Exactly one of ``k`` (fixed count, nearest first) or ``radius`` (all
    particles with distance <= radius) must be given.
    """
    if (k is None) == (radius is None):
        raise ValueError("give exactly one of k or radius")
    pos = cloud.positions
    n, dim = pos.shape
    scale2 = cloud.spacing ** 2
    if k is not None:
        k = int(k)
        if k < 1 or k >= n:
            raise ValueError(f"k={k} must satisfy 1 <= k < N={n}")
        mean_vol = float(np.mean(cloud.volumes))
        ball = np.pi if dim == 2 else 4.0 * np.pi / 3.0
        bin_size = 1.05 * ((k + 1) * mean_vol / ball) ** (1.0 / dim)
    else:
        if radius <= 0:
            raise ValueError("radius must be positive")
        bin_size = float(radius)
    cell, shape, order, starts, ends = _bin_layout(pos, bin_size)

    nbr_lists = [None] * n
    # group particles by bin, search each group together
    occupied = np.flatnonzero(ends > starts)
    for b in occupied:
        members = order[starts[b]:ends[b]]
        center = np.array(np.unravel_index(b, shape))
        ring = 1
        todo = members
        while todo.size:
            cand = _block_members(center, ring, shape, order, starts, ends)
            diff = pos[cand][None, :, :] - pos[todo][:, None, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            key = _sort_key(d2, scale2)
            # candidates are index-sorted, so a stable sort breaks ties by index
            srt = np.argsort(key, axis=1, kind="stable")
            reach = (ring * bin_size) ** 2
            covers_all = all(c - ring <= 0 and c + ring >= s - 1 for c, s in zip(center, shape))
            retry = []
            for row, i in enumerate(todo):
                ordered = cand[srt[row]]
                ordered_d2 = d2[row, srt[row]]
                keep = ordered != i
                ordered, ordered_d2 = ordered[keep], ordered_d2[keep]
                if k is not None:
                    if len(ordered) < k or (ordered_d2[k - 1] >= reach and not covers_all):
                        retry.append(i)
                        continue
                    nbr_lists[i] = ordered[:k]
                else:
                    tol = radius * (1.0 + 1e-12)
                    sel = ordered_d2 <= tol * tol
                    nbr_lists[i] = ordered[sel]
            todo = np.array(retry, dtype=np.int64)
            ring += 1

    if radius is not None:
        empty = [i for i, s in enumerate(nbr_lists) if len(s) == 0]
        if empty:
            raise ValueError(f"isolated particle {empty[0]} has an empty support")
        return SupportTable.from_lists(nbr_lists, "radius", radius)
    return SupportTable.from_lists(nbr_lists, "knn", k)


def invert_supports(supports: SupportTable) -> DualSupportTable:
    duals = [[] for _ in range(supports.count)]
    for i, s in enumerate(supports.lists()):
        for j in s:
            duals[j].append(i)
    return DualSupportTable([sorted(d) for d in duals])


def _segments_cross_2d(p, q, a, b, tol):
    """Closed segment/segment intersection test, vectorised over p, q."""
    def orient(o, s, t):
        d = (s[..., 0] - o[..., 0]) * (t[..., 1] - o[..., 1]) - \
            (s[..., 1] - o[..., 1]) * (t[..., 0] - o[..., 0])
        return np.where(np.abs(d) <= tol, 0.0, d)

    a = np.broadcast_to(a, p.shape)
    b = np.broadcast_to(b, p.shape)
    d1 = orient(a, b, p)
    d2 = orient(a, b, q)
    d3 = orient(p, q, a)
    d4 = orient(p, q, b)
    proper = (d1 * d2 <= 0) & (d3 * d4 <= 0)

    # collinear segments need a bounding-box overlap test instead
    col = (d1 == 0) & (d2 == 0)
    lo = np.minimum(a, b) - tol
    hi = np.maximum(a, b) + tol
    overlap = np.all((np.maximum(p, q) >= lo) & (np.minimum(p, q) <= hi), axis=-1)
    return np.where(col, overlap, proper)


def _segment_hits_rectangle(p, q, origin, e1, e2, tol):
    normal = np.cross(e1, e2)
    normal = normal / np.linalg.norm(normal)
    dp = (p - origin) @ normal
    dq = (q - origin) @ normal
    dp = np.where(np.abs(dp) <= tol, 0.0, dp)
    dq = np.where(np.abs(dq) <= tol, 0.0, dq)
    crosses = dp * dq <= 0
    # bonds lying inside the crack plane do not cut it
    in_plane = (dp == 0) & (dq == 0)
    denom = dp - dq
    safe = np.where(denom == 0, 1.0, denom)
    t = np.clip(np.where(denom == 0, 0.0, dp / safe), 0.0, 1.0)
    hit = p + t[:, None] * (q - p) - origin
    s1 = hit @ e1 / (e1 @ e1)
    s2 = hit @ e2 / (e2 @ e2)
    t1 = tol / np.linalg.norm(e1)
    t2 = tol / np.linalg.norm(e2)
    inside = (s1 >= -t1) & (s1 <= 1 + t1) & (s2 >= -t2) & (s2 <= 1 + t2)
    return crosses & inside & ~in_plane


def crossing_bonds(cloud: ParticleCloud, supports: SupportTable, crack) -> np.ndarray:
    """Boolean (N, width) mask of support slots whose bond cuts the crack.

    ``crack`` is ``("segment", start, end)`` in 2D or
    ``("rectangle", origin, edge1, edge2)`` in 3D.
    """
    kind = crack[0]
    rows, slots = np.nonzero(supports.mask)
    cols = supports.neighbors[rows, slots]
    # work in units of the lattice spacing so the tolerance is scale free
    h = cloud.spacing
    p = cloud.positions[rows] / h
    q = cloud.positions[cols] / h
    if kind == "segment":
        if cloud.dim != 2:
            raise ValueError("segment cracks are 2D only")
        a = np.asarray(crack[1], dtype=float) / h
        b = np.asarray(crack[2], dtype=float) / h
        tol = 1e-12 * max(1.0, float(np.linalg.norm(b - a)))
        hit = _segments_cross_2d(p, q, a, b, tol)
    elif kind == "rectangle":
        if cloud.dim != 3:
            raise ValueError("rectangle cracks are 3D only")
        origin, e1, e2 = (np.asarray(v, dtype=float) / h for v in crack[1:4])
        hit = _segment_hits_rectangle(p, q, origin, e1, e2, 1e-12)
    else:
        raise ValueError(f"unknown crack kind {kind!r}")
    out = np.zeros(supports.neighbors.shape, dtype=bool)
    out[rows[hit], slots[hit]] = True
    return out


def apply_precrack(cloud: ParticleCloud, supports: SupportTable, crack) -> SupportTable:
    """Drop every bond whose segment intersects the crack surface."""
    cut = crossing_bonds(cloud, supports, crack)
    lists = []
    for i, c in enumerate(supports.counts):
        row = supports.neighbors[i, :c]
        lists.append(row[~cut[i, :c]])
    return SupportTable.from_lists(lists, supports.mode, supports.param)
