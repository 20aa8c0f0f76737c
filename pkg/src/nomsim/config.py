"""Simulation configuration: strict YAML schema, validation and model setup.

All quantities are SI.  Unknown keys are rejected and every error names the
offending field and, when parsed from text, its line.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from .engine import (BC_KINDS, BoundaryCondition, PlateModel, Simulation, SolidModel,
                     plate_critical_dt, stable_dt_estimate)
from .operators import Operators, basis_size
from .particles import apply_precrack, build_supports, generate_grid, jitter
from .plate import CLAMP_PENALTY_FACTOR, PlateMaterial, check_band, clamped_penalty
from .solid import SolidMaterial

log = logging.getLogger(__name__)

PROBLEMS = ("solid2d", "solid3d", "plate")


class ConfigError(ValueError):
    def __init__(self, message, path="", line=None):
        self.path, self.line = path, line
        where = f"line {line}: " if line else ""
        field_ = f"field '{path}': " if path else ""
        super().__init__(f"{where}{field_}{message}")


@dataclass
class Geometry:
    bounds: list
    spacing: float
    centering: str = "cell"
    jitter: float = 0.0          # fraction of the spacing
    precrack: dict | None = None
    clamp_band: int = 0          # particle rows added outside the bounds


@dataclass
class Material:
    E: float
    nu: float
    rho: float
    model: str = "linear"
    reduction: str | None = None
    thickness: float | None = None


@dataclass
class Support:
    k: int | None = None
    radius: float | None = None  # metres


@dataclass
class BCSpec:
    kind: str
    name: str = ""
    box: list | None = None
    boxes: list | None = None
    indices: list | None = None
    value: object = 0.0
    ramp: float | None = None


@dataclass
class TimeSpec:
    steps: int
    dt: float | None = None
    output_every: int = 50
    ramp_fraction: float = 0.01


@dataclass
class Fracture:
    enabled: bool = False
    s_max: float = 0.02
    min_bonds: int | None = None  # default: twice the basis size


@dataclass
class Penalties:
    solid: float | None = None   # defaults to E
    scaling: str = "strain"      # "strain" | "raw"
    clamp_factor: float = CLAMP_PENALTY_FACTOR


@dataclass
class Monitor:
    name: str
    point: list
    component: int = 0


@dataclass
class Output:
    vtk: bool = True
    series: bool = True
    events: bool = True
    reaction: str | None = None


@dataclass
class SimConfig:
    problem: str
    geometry: Geometry
    material: Material
    support: Support
    time: TimeSpec
    bcs: list = field(default_factory=list)
    fracture: Fracture = field(default_factory=Fracture)
    penalties: Penalties = field(default_factory=Penalties)
    damping: float = 0.0
    seed: int = 0
    monitors: list = field(default_factory=list)
    output: Output = field(default_factory=Output)

    @property
    def dim(self) -> int:
        return 3 if self.problem == "solid3d" else 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# parsing

_NESTED = {
    "geometry": Geometry, "material": Material, "support": Support, "time": TimeSpec,
    "fracture": Fracture, "penalties": Penalties, "output": Output,
}
_LISTS = {"bcs": BCSpec, "monitors": Monitor}


def _line_map(node, path="", out=None):
    """Map dotted key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = f"{path}.{k.value}" if path else str(k.value)
            out[p] = k.start_mark.line + 1
            _line_map(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = f"{path}[{i}]"
            out[p] = v.start_mark.line + 1
            _line_map(v, p, out)
    return out


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def error(self, msg, path):
        line = self.lines.get(path)
        probe = path
        while line is None and probe:
            probe = probe.rpartition(".")[0]
            line = self.lines.get(probe)
        raise ConfigError(msg, path, line)


def _make(cls, data, path, ctx):
    if not isinstance(data, dict):
        ctx.error(f"expected a mapping for {cls.__name__}", path)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            ctx.error("unknown key", f"{path}.{key}" if path else str(key))
    kwargs = {}
    for name, f in names.items():
        sub = f"{path}.{name}" if path else name
        required = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        if name not in data:
            if required:
                ctx.error("missing required key", sub)
            continue
        val = data[name]
        if name in _NESTED and cls is SimConfig:
            val = _make(_NESTED[name], val if val is not None else {}, sub, ctx)
        elif name in _LISTS and cls is SimConfig:
            if not isinstance(val, list):
                ctx.error("expected a list", sub)
            val = [_make(_LISTS[name], item, f"{sub}[{i}]", ctx) for i, item in enumerate(val)]
        kwargs[name] = val
    return cls(**kwargs)


def _num(ctx, val, path, positive=False, nonneg=False, integer=False, allow_none=False):
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        ctx.error(f"expected a number, got {val!r}", path)
    if integer and int(val) != val:
        ctx.error(f"expected an integer, got {val!r}", path)
    if not np.isfinite(val):
        ctx.error("value must be finite", path)
    if positive and not val > 0:
        ctx.error(f"must be positive, got {val!r}", path)
    if nonneg and val < 0:
        ctx.error(f"must be non-negative, got {val!r}", path)
    return int(val) if integer else float(val)


def _vec(ctx, val, dim, path, allow_none=False):
    if not isinstance(val, list) or len(val) != dim:
        ctx.error(f"expected a list of {dim} numbers", path)
    return [_num(ctx, v, f"{path}[{i}]", allow_none=allow_none) for i, v in enumerate(val)]


def _box(ctx, box, dim, path):
    if not isinstance(box, list) or len(box) != 2:
        ctx.error("a box is [[lo...], [hi...]]", path)
    lo = _vec(ctx, box[0], dim, f"{path}[0]")
    hi = _vec(ctx, box[1], dim, f"{path}[1]")
    if any(a > b for a, b in zip(lo, hi)):
        ctx.error("box lower corner exceeds upper corner", path)
    return [lo, hi]


def _validate(cfg: SimConfig, ctx: _Ctx) -> SimConfig:
    if cfg.problem not in PROBLEMS:
        ctx.error(f"unknown problem {cfg.problem!r}; choose from {', '.join(PROBLEMS)}", "problem")
    dim = cfg.dim
    plate = cfg.problem == "plate"

    g = cfg.geometry
    if not isinstance(g.bounds, list) or len(g.bounds) != dim:
        ctx.error(f"expected {dim} [lo, hi] pairs", "geometry.bounds")
    bounds = []
    for a, pair in enumerate(g.bounds):
        p = f"geometry.bounds[{a}]"
        lo, hi = _vec(ctx, pair, 2, p)
        if not hi > lo:
            ctx.error("upper bound must exceed lower bound", p)
        bounds.append([lo, hi])
    g.bounds = bounds
    g.spacing = _num(ctx, g.spacing, "geometry.spacing", positive=True)
    if g.centering not in ("cell", "node"):
        ctx.error("centering must be 'cell' or 'node'", "geometry.centering")
    g.jitter = _num(ctx, g.jitter, "geometry.jitter", nonneg=True)
    if g.jitter >= 0.5:
        ctx.error("jitter must be below half the spacing", "geometry.jitter")
    g.clamp_band = _num(ctx, g.clamp_band, "geometry.clamp_band", nonneg=True, integer=True)
    if g.clamp_band and not plate:
        ctx.error("clamp band applies to plate problems only", "geometry.clamp_band")
    if g.precrack is not None:
        if plate:
            ctx.error("pre-cracks apply to solid problems only", "geometry.precrack")
        pc = g.precrack
        if not isinstance(pc, dict) or len(pc) != 1:
            ctx.error("expected one of 'segment' or 'rectangle'", "geometry.precrack")
        if "segment" in pc:
            if dim != 2:
                ctx.error("segment cracks are two-dimensional", "geometry.precrack.segment")
            seg = pc["segment"]
            if not isinstance(seg, list) or len(seg) != 2:
                ctx.error("segment is [[x0, y0], [x1, y1]]", "geometry.precrack.segment")
            g.precrack = {"segment": [_vec(ctx, s, 2, f"geometry.precrack.segment[{i}]")
                                      for i, s in enumerate(seg)]}
        elif "rectangle" in pc:
            if dim != 3:
                ctx.error("rectangle cracks are three-dimensional", "geometry.precrack.rectangle")
            rect = pc["rectangle"]
            p = "geometry.precrack.rectangle"
            if not isinstance(rect, dict) or set(rect) != {"origin", "e1", "e2"}:
                ctx.error("rectangle needs exactly origin, e1 and e2", p)
            g.precrack = {"rectangle": {k: _vec(ctx, rect[k], 3, f"{p}.{k}")
                                        for k in ("origin", "e1", "e2")}}
        else:
            ctx.error("expected one of 'segment' or 'rectangle'", "geometry.precrack")

    m = cfg.material
    m.E = _num(ctx, m.E, "material.E", positive=True)
    m.nu = _num(ctx, m.nu, "material.nu")
    if not -1.0 < m.nu < 0.5:
        ctx.error(f"Poisson ratio must lie in (-1, 0.5), got {m.nu}", "material.nu")
    m.rho = _num(ctx, m.rho, "material.rho", positive=True)
    if m.model not in ("linear", "svk"):
        ctx.error("model must be 'linear' or 'svk'", "material.model")
    if plate:
        if m.thickness is None:
            ctx.error("missing required key", "material.thickness")
        m.thickness = _num(ctx, m.thickness, "material.thickness", positive=True)
        if m.reduction is not None:
            ctx.error("reduction does not apply to plates", "material.reduction")
        if m.model != "linear":
            ctx.error("plates use the linear model", "material.model")
    else:
        if m.thickness is not None:
            ctx.error("thickness applies to plate problems only", "material.thickness")
        if m.reduction is None:
            m.reduction = "3d" if dim == 3 else "plane-stress"
        allowed = ("3d",) if dim == 3 else ("plane-stress", "plane-strain")
        if m.reduction not in allowed:
            ctx.error(f"reduction must be one of {allowed}", "material.reduction")

    s = cfg.support
    if (s.k is None) == (s.radius is None):
        ctx.error("give exactly one of 'k' or 'radius'", "support")
    if s.k is not None:
        s.k = _num(ctx, s.k, "support.k", integer=True)
        if s.k < basis_size(dim):
            ctx.error(f"need at least {basis_size(dim)} neighbours", "support.k")
    else:
        s.radius = _num(ctx, s.radius, "support.radius", positive=True)

    t = cfg.time
    t.steps = _num(ctx, t.steps, "time.steps", nonneg=True, integer=True)
    t.dt = _num(ctx, t.dt, "time.dt", positive=True, allow_none=True)
    t.output_every = _num(ctx, t.output_every, "time.output_every", nonneg=True, integer=True)
    t.ramp_fraction = _num(ctx, t.ramp_fraction, "time.ramp_fraction", nonneg=True)
    if t.ramp_fraction > 1:
        ctx.error("ramp fraction must not exceed 1", "time.ramp_fraction")

    names = set()
    ncomp = 1 if plate else dim
    for i, bc in enumerate(cfg.bcs):
        p = f"bcs[{i}]"
        if bc.kind not in BC_KINDS:
            ctx.error(f"unknown kind {bc.kind!r}", f"{p}.kind")
        if bc.kind == "clamp-band":
            ctx.error("the clamp band is set by geometry.clamp_band", f"{p}.kind")
        if bc.kind in ("pressure-load", "pinned-deflection") and not plate:
            ctx.error(f"{bc.kind} applies to plate problems", f"{p}.kind")
        if bc.kind in ("fixed-displacement", "prescribed-velocity", "body-force") and plate and bc.kind != "fixed-displacement":
            ctx.error(f"{bc.kind} applies to solid problems", f"{p}.kind")
        if not bc.name:
            bc.name = f"{bc.kind}-{i}"
        if bc.name in names:
            ctx.error(f"duplicate name {bc.name!r}", f"{p}.name")
        names.add(bc.name)
        given = [x is not None for x in (bc.box, bc.boxes, bc.indices)]
        if sum(given) != 1:
            ctx.error("give exactly one of 'box', 'boxes' or 'indices'", p)
        if bc.box is not None:
            bc.box = _box(ctx, bc.box, dim, f"{p}.box")
        if bc.boxes is not None:
            if not isinstance(bc.boxes, list) or not bc.boxes:
                ctx.error("expected a non-empty list of boxes", f"{p}.boxes")
            bc.boxes = [_box(ctx, b, dim, f"{p}.boxes[{k}]") for k, b in enumerate(bc.boxes)]
        if bc.indices is not None:
            if not isinstance(bc.indices, list) or not bc.indices:
                ctx.error("expected a non-empty list of indices", f"{p}.indices")
            bc.indices = [_num(ctx, v, f"{p}.indices[{k}]", nonneg=True, integer=True)
                          for k, v in enumerate(bc.indices)]
        if bc.kind == "pinned-deflection":
            bc.value = 0.0
        elif bc.kind == "pressure-load" or (plate and bc.kind == "fixed-displacement"):
            bc.value = _num(ctx, bc.value, f"{p}.value")
        else:
            bc.value = _vec(ctx, bc.value, ncomp, f"{p}.value", allow_none=True)
        if bc.ramp is None:
            if bc.kind == "prescribed-velocity" and t.dt is not None:
                bc.ramp = t.ramp_fraction * t.steps * t.dt
            else:
                bc.ramp = 0.0
        bc.ramp = _num(ctx, bc.ramp, f"{p}.ramp", nonneg=True)

    f = cfg.fracture
    if not isinstance(f.enabled, bool):
        ctx.error("expected true or false", "fracture.enabled")
    f.s_max = _num(ctx, f.s_max, "fracture.s_max", positive=True)
    f.min_bonds = _num(ctx, f.min_bonds, "fracture.min_bonds", integer=True, allow_none=True)
    if f.min_bonds is not None and f.min_bonds < basis_size(dim):
        ctx.error(f"must be at least the basis size {basis_size(dim)}", "fracture.min_bonds")
    if f.enabled and plate:
        ctx.error("fracture applies to solid problems only", "fracture.enabled")

    pen = cfg.penalties
    pen.solid = _num(ctx, pen.solid, "penalties.solid", nonneg=True, allow_none=True)
    if pen.scaling not in ("strain", "raw"):
        ctx.error("scaling must be 'strain' or 'raw'", "penalties.scaling")
    pen.clamp_factor = _num(ctx, pen.clamp_factor, "penalties.clamp_factor", nonneg=True)
    cfg.damping = _num(ctx, cfg.damping, "damping", nonneg=True)
    cfg.seed = _num(ctx, cfg.seed, "seed", nonneg=True, integer=True)

    mnames = set()
    for i, mon in enumerate(cfg.monitors):
        p = f"monitors[{i}]"
        mon.point = _vec(ctx, mon.point, dim, f"{p}.point")
        mon.component = _num(ctx, mon.component, f"{p}.component", nonneg=True, integer=True)
        if mon.component >= ncomp:
            ctx.error(f"component must be below {ncomp}", f"{p}.component")
        if mon.name in mnames or mon.name in ("step", "time"):
            ctx.error(f"duplicate name {mon.name!r}", f"{p}.name")
        mnames.add(mon.name)

    o = cfg.output
    for key in ("vtk", "series", "events"):
        if not isinstance(getattr(o, key), bool):
            ctx.error("expected true or false", f"output.{key}")
    if o.reaction is not None and o.reaction not in names:
        ctx.error(f"no boundary condition named {o.reaction!r}", "output.reaction")

    if plate:
        D0 = PlateMaterial(m.E, m.nu, m.thickness, m.rho).D0
        log.info("plate bending stiffness D0 = %.2f N m", D0)
    return cfg


def from_dict(data: dict, lines=None) -> SimConfig:
    ctx = _Ctx(lines or {})
    cfg = _make(SimConfig, data, "", ctx)
    return _validate(cfg, ctx)


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` and ``2.1e11`` as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def parse_config(text: str) -> SimConfig:
    try:
        node = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed document: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if data is None:
        raise ConfigError("empty document")
    return from_dict(data, _line_map(node))


def load_config(path) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"file not found: {path}") from None
    return parse_config(text)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# model construction

@dataclass
class Setup:
    config: SimConfig
    cloud: object
    supports: object
    ops: Operators
    simulation: Simulation
    physical: np.ndarray      # indices inside the nominal bounds


def build_cloud(cfg: SimConfig):
    g = cfg.geometry
    pad = g.clamp_band * g.spacing
    bounds = [[lo - pad, hi + pad] for lo, hi in g.bounds]
    cloud = generate_grid(bounds, g.spacing, g.centering)
    if g.jitter > 0:
        cloud = jitter(cloud, g.jitter * g.spacing, cfg.seed)
    return cloud


def build_supports_for(cfg: SimConfig, cloud):
    s = cfg.support
    sup = build_supports(cloud, k=s.k) if s.k is not None else build_supports(cloud, radius=s.radius)
    pc = cfg.geometry.precrack
    if pc is not None:
        if "segment" in pc:
            a, b = pc["segment"]
            sup = apply_precrack(cloud, sup, ("segment", a, b))
        else:
            r = pc["rectangle"]
            sup = apply_precrack(cloud, sup, ("rectangle", r["origin"], r["e1"], r["e2"]))
    return sup


def _region_indices(cloud, bc: BCSpec):
    if bc.indices is not None:
        idx = np.asarray(bc.indices, dtype=np.int64)
        if idx.max() >= cloud.count:
            raise ConfigError("index out of range", f"bcs.{bc.name}")
        return idx
    boxes = [bc.box] if bc.box is not None else bc.boxes
    idx = np.unique(np.concatenate([cloud.select(lo, hi) for lo, hi in boxes]))
    if idx.size == 0:
        raise ConfigError("region selects no particles", f"bcs.{bc.name}")
    return idx


def build(cfg: SimConfig, threads: int = 1) -> Setup:
    """Discretize, build operators and assemble a ready-to-run simulation."""
    cloud = build_cloud(cfg)
    sup = build_supports_for(cfg, cloud)
    ops = Operators(cloud, sup)
    g, m = cfg.geometry, cfg.material
    physical = cloud.select([lo for lo, _ in g.bounds], [hi for _, hi in g.bounds])
    bcs = []
    for bc in cfg.bcs:
        idx = _region_indices(cloud, bc)
        value = bc.value if bc.kind != "prescribed-velocity" or cfg.problem != "plate" else bc.value
        bcs.append(BoundaryCondition(bc.kind, idx, value, bc.ramp, bc.name))

    if cfg.problem == "plate":
        mat = PlateMaterial(m.E, m.nu, m.thickness, m.rho)
        penalty = 0.0
        if g.clamp_band:
            band = np.setdiff1d(np.arange(cloud.count), physical)
            bcs.insert(0, BoundaryCondition("clamp-band", band, 0.0, 0.0, "clamp"))
            penalty = clamped_penalty(cloud.count, band, m.E, pen_factor(cfg))
            check_band(ops, band, physical)
        model = PlateModel(ops, mat, penalty)
    else:
        mat = SolidMaterial(m.E, m.nu, m.rho, m.model, m.reduction)
        model = SolidModel(ops, mat, cfg.penalties.solid, cfg.penalties.scaling, threads)

    dt = cfg.time.dt
    if cfg.problem == "plate":
        fixed = [bc.indices for bc in bcs if bc.kind in ("clamp-band", "pinned-deflection", "fixed-displacement")]
        fixed = np.concatenate(fixed) if fixed else np.empty(0, dtype=np.int64)
        crit = plate_critical_dt(model, fixed, seed=cfg.seed)
        log.info("plate critical time step %.4g s", crit)
        if dt is None:
            dt = 0.5 * crit
        elif dt > crit:
            log.warning("time step %.4g s exceeds the estimated critical step %.4g s", dt, crit)
    else:
        est = stable_dt_estimate(g.spacing, mat)
        log.info("advisory stable time step %.4g s", est)
        if dt is None:
            dt = est
    for bc in bcs:
        if bc.kind == "prescribed-velocity" and cfg.time.dt is None and bc.ramp == 0.0:
            bc.ramp = cfg.time.ramp_fraction * cfg.time.steps * dt

    monitors = {}
    for mon in cfg.monitors:
        i = int(np.argmin(np.sum((cloud.positions - np.asarray(mon.point)) ** 2, axis=1)))
        monitors[mon.name] = (i, mon.component)
    s_max = cfg.fracture.s_max if cfg.fracture.enabled else None
    sim = Simulation(model, bcs, dt, cfg.damping, s_max, monitors, cfg.output.reaction,
                     cfg.fracture.min_bonds)
    return Setup(cfg, cloud, sup, ops, sim, physical)


def pen_factor(cfg: SimConfig) -> float:
    return cfg.penalties.clamp_factor
