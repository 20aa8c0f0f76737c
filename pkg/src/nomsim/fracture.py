"""Instability-based bond breaking.

Damage is switched on the first time any bond stretch reaches ``s_max``.
At that moment the largest hourglass strain over all bonds is frozen as the
critical value; afterwards every bond whose hourglass strain exceeds it is
removed from both supports and the touched particles are rebuilt.  A
rebuilt particle left with fewer than ``min_bonds`` bonds becomes inert.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .operators import Operators

log = logging.getLogger(__name__)


@dataclass
class DamageState:
    s_max: float
    original: np.ndarray              # support mask at t = 0
    reverse: np.ndarray               # flat slot of the opposite bond, or -1
    min_bonds: int = 0
    s_hg_max: float | None = None
    activated_step: int | None = None
    dirty: set = field(default_factory=set)
    events: list = field(default_factory=list)   # (step, i, j, s_hg)

    @classmethod
    def create(cls, ops: Operators, s_max: float, min_bonds: int | None = None) -> "DamageState":
        """``min_bonds`` defaults to twice the polynomial basis size."""
        if not s_max > 0:
            raise ValueError("critical stretch must be positive")
        min_bonds = 2 * ops.m if min_bonds is None else int(min_bonds)
        if min_bonds < ops.m:
            raise ValueError(f"min_bonds must be at least the basis size {ops.m}")
        return cls(float(s_max), ops.alive.copy(), ops.supports.reverse_slots(), min_bonds)

    @property
    def activated(self) -> bool:
        return self.s_hg_max is not None

    @property
    def broken_count(self) -> int:
        return len(self.events)


def bond_stretch(ops: Operators, u) -> np.ndarray:
    """(|r + u_j - u_i| - |r|) / |r| on every slot; zero on dead slots."""
    du = ops.differences(u)
    cur = np.linalg.norm(ops.r + du, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(ops.alive, (cur - ops.length) / np.where(ops.alive, ops.length, 1.0), 0.0)
    return s


def single_bond_stretch(xi, xj, ui, uj) -> float:
    r = np.asarray(xj, float) - np.asarray(xi, float)
    e = r + np.asarray(uj, float) - np.asarray(ui, float)
    return float((np.linalg.norm(e) - np.linalg.norm(r)) / np.linalg.norm(r))


def hourglass_strain(ops: Operators, residuals) -> np.ndarray:
    """|u_ij - p_ij . du_i| / |r_ij| on every slot."""
    res = np.asarray(residuals)
    mag = np.abs(res) if res.ndim == 2 else np.linalg.norm(res, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ops.alive, mag / np.where(ops.alive, ops.length, 1.0), 0.0)


def _symmetric_max(values, reverse):
    flat = values.ravel()
    rev = reverse.ravel()
    other = np.where(rev >= 0, flat[np.maximum(rev, 0)], 0.0)
    return np.maximum(flat, other).reshape(values.shape)


def update_damage(state: DamageState, ops: Operators, u, residuals, step: int = 0):
    """Activate or advance damage; returns newly broken (i, j) pairs."""
    alive = ops.alive
    if not state.activated:
        stretch = bond_stretch(ops, u)
        if alive.any() and float(np.max(np.where(alive, stretch, -np.inf))) >= state.s_max:
            s_hg = hourglass_strain(ops, residuals)
            state.s_hg_max = float(np.max(s_hg[alive]))
            state.activated_step = step
            log.info("damage activated at step %d, critical hourglass strain %.6g",
                     step, state.s_hg_max)
        return []

    s_hg = _symmetric_max(hourglass_strain(ops, residuals), state.reverse)
    hit = alive & (s_hg > state.s_hg_max)
    rows, slots = np.nonzero(hit)
    if rows.size == 0:
        return []
    cols = ops.nbr[rows, slots]
    # take the opposite slot down with it so both supports stay consistent
    rev = state.reverse[rows, slots]
    width = alive.shape[1]
    has = rev >= 0
    rr, rs = rev[has] // width, rev[has] % width
    ops.kill(rows, slots)
    ops.kill(rr, rs)

    broken = []
    seen = set()
    for i, j, s in zip(rows.tolist(), cols.tolist(), s_hg[rows, slots].tolist()):
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        broken.append(key)
        state.events.append((step, key[0], key[1], s))
    state.dirty.update(rows.tolist())
    state.dirty.update(cols.tolist())
    return broken


def particle_damage(state: DamageState, ops: Operators) -> np.ndarray:
    """Broken volume fraction of the original support (0 intact, 1 detached)."""
    orig = state.original
    vol = np.where(orig, ops.vol_j, 0.0)
    lost = np.where(orig & ~ops.alive, ops.vol_j, 0.0)
    total = vol.sum(axis=1)
    return np.where(total > 0, lost.sum(axis=1) / np.where(total > 0, total, 1.0), 0.0)


def refresh_operators(state: DamageState, ops: Operators) -> np.ndarray:
    """Rebuild dirty particles; returns indices demoted to inert."""
    if not state.dirty:
        return np.empty(0, dtype=np.int64)
    idx = np.array(sorted(state.dirty), dtype=np.int64)
    state.dirty.clear()
    return ops.refresh(idx, state.min_bonds)
