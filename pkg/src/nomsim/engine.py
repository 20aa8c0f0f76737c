"""Explicit Verlet time stepping, boundary conditions and result recording."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fracture import DamageState, particle_damage, refresh_operators, update_damage
from .operators import Operators
from .plate import PlateMaterial, assemble_plate_forces, plate_energies
from .solid import SolidMaterial, assemble_internal_forces, energies, hourglass_penalty

log = logging.getLogger(__name__)

BC_KINDS = ("fixed-displacement", "prescribed-velocity", "pressure-load",
            "body-force", "pinned-deflection", "clamp-band")
CONSTRAINT_KINDS = ("fixed-displacement", "prescribed-velocity", "pinned-deflection", "clamp-band")


class SimulationError(RuntimeError):
    pass


@dataclass
class BoundaryCondition:
    """Prescription on a set of particles.

    ``value`` is a scalar or a vector; a vector entry of ``None`` leaves that
    component free.  ``ramp`` is a linear ramp time in seconds (0 = step).
    """

    kind: str
    indices: np.ndarray
    value: object = 0.0
    ramp: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        if self.indices.size == 0:
            raise ValueError(f"boundary condition {self.name or self.kind!r} selects no particles")
        if self.ramp < 0:
            raise ValueError("ramp time must be non-negative")

    @classmethod
    def from_region(cls, cloud, kind, region, value=0.0, ramp=0.0, name=""):
        """``region`` is ``{"box": [lo, hi]}`` or ``{"indices": [...]}``."""
        if "box" in region:
            lo, hi = region["box"]
            idx = cloud.select(lo, hi)
        elif "indices" in region:
            idx = np.asarray(region["indices"], dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= cloud.count):
                raise ValueError("boundary condition index out of range")
        else:
            raise ValueError("region needs 'box' or 'indices'")
        if len(idx) == 0:
            raise ValueError(f"boundary condition {name or kind!r} selects no particles")
        return cls(kind, idx, value, ramp, name)

    def components(self, ncomp: int) -> tuple[np.ndarray, np.ndarray]:
        """(mask of constrained components, value vector) for ``ncomp`` components."""
        if self.kind == "clamp-band" or self.kind == "pinned-deflection":
            return np.ones(ncomp, dtype=bool), np.zeros(ncomp)
        val = self.value
        if np.isscalar(val) or val is None:
            if ncomp != 1:
                raise ValueError(f"{self.kind} on a vector field needs a vector value")
            return np.array([val is not None]), np.array([0.0 if val is None else float(val)])
        val = list(val)
        if len(val) != ncomp:
            raise ValueError(f"{self.kind} value has {len(val)} components, expected {ncomp}")
        mask = np.array([v is not None for v in val])
        return mask, np.array([0.0 if v is None else float(v) for v in val])

    def factor(self, t: float) -> float:
        """Ramp multiplier at time t."""
        if self.ramp <= 0:
            return 1.0
        return min(t / self.ramp, 1.0)

    def integral(self, t: float) -> float:
        """Integral of :meth:`factor` from 0 to t."""
        if self.ramp <= 0:
            return t
        if t < self.ramp:
            return 0.5 * t * t / self.ramp
        return t - 0.5 * self.ramp


@dataclass
class TimeSeries:
    """Per-step records with a fixed column order."""

    monitors: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    BASE = ("step", "time", "imposed_displacement", "reaction_force",
            "strain_energy", "kinetic_energy", "hourglass_energy", "broken_bonds")

    @property
    def columns(self) -> list[str]:
        return list(self.BASE) + list(self.monitors)

    def append(self, row):
        if len(row) != len(self.columns):
            raise ValueError("record does not match the series columns")
        if self.rows and not row[1] > self.rows[-1][1]:
            raise ValueError("time must increase strictly")
        self.rows.append(tuple(row))

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])


def stable_dt_estimate(spacing: float, material: SolidMaterial, safety: float = 0.5) -> float:
    """Advisory CFL bound safety * dx / c."""
    return safety * spacing / material.wave_speed()


class SolidModel:
    kind = "solid"

    def __init__(self, ops: Operators, material: SolidMaterial, penalty=None, scaling="strain",
                 threads=1):
        self.ops, self.material, self.threads = ops, material, threads
        self.modulus = material.E if penalty is None else float(penalty)
        self.scaling = scaling
        self.ncomp = ops.dim
        self.mass = material.rho * ops.vol

    @property
    def penalty(self) -> np.ndarray:
        # follows bond loss, since m_i and the support volume change on refresh
        return hourglass_penalty(self.ops, self.modulus, self.scaling)

    def evaluate(self, u, damage=None):
        resp = assemble_internal_forces(self.ops, u, self.material, self.penalty, damage, self.threads)
        return resp.forces, resp

    def energies(self, resp, v):
        return energies(self.ops, resp, v, self.material.rho)


class PlateModel:
    kind = "plate"

    def __init__(self, ops: Operators, material: PlateMaterial, penalty=0.0):
        self.ops, self.material, self.penalty = ops, material, penalty
        self.ncomp = 1
        self.mass = material.areal_mass * ops.vol

    def evaluate(self, u, damage=None):
        resp = assemble_plate_forces(self.ops, u[:, 0], self.material, 0.0, self.penalty, damage)
        return resp.internal[:, None], resp

    def energies(self, resp, v):
        return plate_energies(self.ops, resp, v[:, 0], self.material)


def plate_critical_dt(model: PlateModel, fixed=(), iterations=60, seed=0) -> float:
    """2 / sqrt(lambda_max(M^-1 K)) by power iteration on the free particles."""
    n = model.ops.cloud.count
    free = np.ones(n, dtype=bool)
    free[np.asarray(fixed, dtype=np.int64)] = False
    rng = np.random.default_rng(seed)
    x = np.where(free, rng.standard_normal(n), 0.0)
    lam = 0.0
    for _ in range(iterations):
        x /= np.linalg.norm(x)
        y = -model.evaluate(x[:, None])[0][:, 0] / model.mass
        y[~free] = 0.0
        lam = float(x @ y)
        x = y
    return 2.0 / np.sqrt(lam * 1.02)


class Simulation:
    """One explicit run: state, loads, damage and recording.

    Parameters
    ----------
    model : SolidModel or PlateModel
    bcs : list of BoundaryCondition
    dt : time step (s)
    damping : mass-proportional damping coefficient (1/s)
    s_max : critical stretch; None disables fracture
    monitors : mapping name -> (particle index, component)
    reaction : name of the BC whose reaction force is recorded
    min_bonds : bonds a particle needs after a refresh to stay active
    """

    def __init__(self, model, bcs, dt, damping=0.0, s_max=None, monitors=None, reaction=None,
                 min_bonds=None):
        if not dt > 0:
            raise ValueError("time step must be positive")
        if damping < 0:
            raise ValueError("damping must be non-negative")
        self.model = model
        self.ops = model.ops
        self.dt = float(dt)
        self.damping = float(damping)
        n, c = self.ops.cloud.count, model.ncomp
        self.u = np.zeros((n, c))
        self.v = np.zeros((n, c))
        self.a = np.zeros((n, c))
        self.step_count = 0
        self.time = 0.0
        self.bcs = list(bcs)
        self._setup_bcs(n, c)
        self.damage = None
        if s_max is not None:
            if model.kind != "solid":
                raise ValueError("fracture is only available for solid problems")
            self.damage = DamageState.create(self.ops, s_max, min_bonds)
        self.monitors = dict(monitors or {})
        self.reaction_bc = self._find_reaction(reaction)
        self.series = TimeSeries(list(self.monitors))
        self.response = None
        self.internal = np.zeros((n, c))
        self.apply_displacement_bcs()
        self._evaluate()
        self.a = self._elastic_acceleration()
        self.apply_velocity_bcs()

    # --- boundary conditions -------------------------------------------
    def _setup_bcs(self, n, c):
        owner = np.full((n, c), -1)
        self._constraints = []
        self._external = np.zeros((n, c))
        self._loads = []
        for k, bc in enumerate(self.bcs):
            if bc.indices.max() >= n:
                raise ValueError("boundary condition index out of range")
            if bc.kind in CONSTRAINT_KINDS:
                mask, val = bc.components(c)
                block = owner[np.ix_(bc.indices, np.flatnonzero(mask))]
                if np.any(block >= 0):
                    other = self.bcs[int(block[block >= 0][0])]
                    raise ValueError(f"contradictory boundary conditions: {bc.kind} "
                                     f"{bc.name!r} overlaps {other.kind} {other.name!r}")
                owner[np.ix_(bc.indices, np.flatnonzero(mask))] = k
                self._constraints.append((bc, mask, val))
            elif bc.kind == "pressure-load":
                if c != 1:
                    raise ValueError("pressure-load applies to plate problems")
                self._loads.append(bc)
            else:
                mask, val = bc.components(c)
                self._loads.append(bc)
        self.constrained = owner >= 0

    def _find_reaction(self, name):
        cons = [bc for bc, _, _ in self._constraints]
        if name is not None:
            for bc in cons:
                if bc.name == name:
                    return bc
            raise ValueError(f"no boundary condition named {name!r}")
        for bc in cons:
            if bc.kind == "prescribed-velocity":
                return bc
        return cons[0] if cons else None

    def external_forces(self, t):
        f = np.zeros_like(self.u)
        vol = self.ops.vol
        for bc in self._loads:
            s = bc.factor(t)
            idx = bc.indices
            if bc.kind == "pressure-load":
                f[idx, 0] += s * float(bc.value) * vol[idx]
            else:
                _, val = bc.components(self.model.ncomp)
                f[idx] += s * val * vol[idx, None]
        return f

    def apply_displacement_bcs(self):
        t = self.time
        for bc, mask, val in self._constraints:
            cols = np.flatnonzero(mask)
            if bc.kind == "prescribed-velocity":
                self.u[np.ix_(bc.indices, cols)] = val[cols] * bc.integral(t)
            else:
                self.u[np.ix_(bc.indices, cols)] = val[cols]

    def apply_velocity_bcs(self):
        t = self.time
        for bc, mask, val in self._constraints:
            cols = np.flatnonzero(mask)
            rows = np.ix_(bc.indices, cols)
            if bc.kind == "prescribed-velocity":
                self.v[rows] = val[cols] * bc.factor(t)
                slope = 1.0 / bc.ramp if 0 < t < bc.ramp else 0.0
                self.a[rows] = val[cols] * slope
            else:
                self.v[rows] = 0.0
                self.a[rows] = 0.0

    # --- forces ------------------------------------------------------------
    def _evaluate(self):
        self.internal, self.response = self.model.evaluate(self.u, self.damage)

    def _elastic_acceleration(self):
        f = self.internal + self.external_forces(self.time)
        return f / self.model.mass[:, None]

    def reaction_force(self) -> float:
        """-sum of internal force over the reaction set, along its direction."""
        bc = self.reaction_bc
        if bc is None:
            return 0.0
        total = -self.internal[bc.indices].sum(axis=0)
        _, val = bc.components(self.model.ncomp)
        norm = np.linalg.norm(val)
        if norm > 0:
            return float(total @ val / norm)
        return float(np.linalg.norm(total)) if total.size > 1 else float(total[0])

    def imposed_displacement(self) -> float:
        bc = self.reaction_bc
        if bc is None or bc.kind != "prescribed-velocity":
            return 0.0
        _, val = bc.components(self.model.ncomp)
        return float(np.linalg.norm(val) * bc.integral(self.time))

    # --- stepping ------------------------------------------------------
    def step(self):
        dt, c = self.dt, self.damping
        a_old = self.a - c * self.v
        self.u += self.v * dt + 0.5 * a_old * dt * dt
        self.time = (self.step_count + 1) * dt
        self.step_count += 1
        self.apply_displacement_bcs()
        self._evaluate()
        a_el_old = self.a
        self.a = self._elastic_acceleration()
        self.v = (self.v + 0.5 * (a_el_old + self.a) * dt - 0.5 * c * dt * self.v) / (1.0 + 0.5 * c * dt)
        self.apply_velocity_bcs()
        self._check_finite()
        if self.damage is not None:
            update_damage(self.damage, self.ops, self.u, self.response.residuals, self.step_count)
            demoted = refresh_operators(self.damage, self.ops)
            if demoted.size:
                log.info("step %d: %d particles inert", self.step_count, demoted.size)

    def _check_finite(self):
        bad = ~(np.isfinite(self.u).all(axis=1) & np.isfinite(self.v).all(axis=1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SimulationError(f"non-finite state at particle {i} on step {self.step_count}")

    def energies(self):
        return self.model.energies(self.response, self.v)

    def broken_bonds(self) -> int:
        return 0 if self.damage is None else self.damage.broken_count

    def particle_damage(self) -> np.ndarray:
        if self.damage is None:
            return np.zeros(self.ops.cloud.count)
        return particle_damage(self.damage, self.ops)

    def record(self):
        se, ke, he = self.energies()
        mon = [float(self.u[i, comp]) for i, comp in self.monitors.values()]
        self.series.append([self.step_count, self.time, self.imposed_displacement(),
                            self.reaction_force(), se, ke, he, self.broken_bonds()] + mon)

    def fields(self) -> dict:
        """Point fields for snapshots."""
        r = self.response
        out = {"displacement": self.u.copy() if self.model.ncomp > 1 else self.u[:, 0].copy(),
               "velocity": self.v.copy() if self.model.ncomp > 1 else self.v[:, 0].copy(),
               "hourglass_energy_density": np.asarray(r.hourglass).copy()}
        if self.model.kind == "solid":
            out["strain_energy_density"] = r.psi.copy()
            out["damage"] = self.particle_damage()
        else:
            out["bending_energy_density"] = r.energy_density.copy()
        return out

    def run(self, steps: int, output_every: int = 50, on_snapshot=None) -> TimeSeries:
        """Advance ``steps`` steps; record every step, snapshot every ``output_every``."""
        if steps < 0:
            raise ValueError("steps must be non-negative")
        if self.step_count == 0 and not len(self.series):
            self.record()
            if on_snapshot is not None:
                on_snapshot(self)
        for _ in range(steps):
            self.step()
            self.record()
            if on_snapshot is not None and output_every > 0 and self.step_count % output_every == 0:
                on_snapshot(self)
        return self.series
