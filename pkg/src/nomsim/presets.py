"""Ready-made configurations for the reference experiments.

Each preset exists at full scale and as a ``desk`` variant sized for a
single-core workstation.  Lengths are metres; comments give millimetres.
"""

from __future__ import annotations

from .config import SimConfig, dump_config, from_dict

PRESETS = ("hessian2d", "hessian3d", "plate-ss", "plate-clamped", "tension2d", "shear3d")

STEEL = {"E": 210.0e9, "nu": 0.3, "rho": 7800.0}


def _hessian2d(desk):
    return {
        "problem": "solid2d",
        "geometry": {"bounds": [[0.0, 1.0], [0.0, 1.0]], "spacing": 0.02},
        "material": dict(STEEL),
        "support": {"k": 10},
        "time": {"steps": 0, "dt": 1.0e-6},
    }


def _hessian3d(desk):
    return {
        "problem": "solid3d",
        "geometry": {"bounds": [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], "spacing": 0.05},
        "material": dict(STEEL),
        "support": {"k": 26},
        "time": {"steps": 0, "dt": 1.0e-6},
    }


def _plate(clamped, desk):
    a, n = 0.5, 40
    h = a / n
    cfg = {
        "problem": "plate",
        "geometry": {"bounds": [[0.0, a], [0.0, a]], "spacing": h, "centering": "node",
                     "clamp_band": 3 if clamped else 0},
        "material": {"E": 210.0e9, "nu": 0.3, "rho": 7800.0, "thickness": 0.01},
        "support": {"radius": 3.01 * h},
        "time": {"steps": 8000 if clamped else 3000, "output_every": 100},
        "bcs": [{"kind": "pressure-load", "name": "pressure",
                 "box": [[0.0, 0.0], [a, a]], "value": 1.0e3}],
        "monitors": [{"name": "center_deflection", "point": [a / 2, a / 2]}],
    }
    if not clamped:
        cfg["bcs"].append({"kind": "pinned-deflection", "name": "edges", "boxes": [
            [[0.0, 0.0], [a, 0.0]], [[0.0, a], [a, a]],
            [[0.0, 0.0], [0.0, a]], [[a, 0.0], [a, a]]]})
    return cfg


def _tension2d(desk):
    L = 1.0e-3                       # 1 mm square
    n = 60 if desk else 100
    h = L / n
    dt = 1.5418e-9 * 100 / n         # same Courant number at every resolution
    steps = 5000 if desk else 4500
    return {
        "problem": "solid2d",
        "geometry": {"bounds": [[0.0, L], [0.0, L]], "spacing": h,
                     "precrack": {"segment": [[0.0, L / 2], [L / 2, L / 2]]}},
        "material": dict(STEEL, reduction="plane-stress"),
        "support": {"k": 33},
        "time": {"steps": steps, "dt": dt, "output_every": 100},
        "bcs": [
            {"kind": "fixed-displacement", "name": "bottom",
             "box": [[0.0, 0.0], [L, h]], "value": [0.0, 0.0]},
            {"kind": "prescribed-velocity", "name": "top",
             "box": [[0.0, L - h], [L, L]], "value": [0.0, 1.0]},
        ],
        "fracture": {"enabled": True, "s_max": 0.02},
        "output": {"reaction": "top"},
    }


def _shear3d(desk):
    h = 1.0e-4 if desk else 5.0e-5  # 0.1 mm / 0.05 mm
    Lx, Ly, Lz = 5.0e-3, 2.0e-3, 1.0e-3
    # crack plane half a spacing below mid-height so no particle lies on it
    yc = Ly / 2 - h / 2
    return {
        "problem": "solid3d",
        "geometry": {"bounds": [[0.0, Lx], [0.0, Ly], [0.0, Lz]], "spacing": h,
                     "centering": "node",
                     "precrack": {"rectangle": {"origin": [0.0, yc, 0.0],
                                                "e1": [2.0e-3, 0.0, 0.0],
                                                "e2": [0.0, 0.0, Lz]}}},
        "material": dict(STEEL, reduction="3d"),
        "support": {"k": 60 if desk else 102},
        # 23.1 us of loading at a Courant number of about 0.7
        "time": {"steps": 1925 if desk else 3850, "dt": 1.2e-8 if desk else 6.0e-9,
                 "output_every": 100},
        "bcs": [
            {"kind": "fixed-displacement", "name": "bottom",
             "box": [[0.0, 0.0, 0.0], [Lx, 0.0, Lz]], "value": [0.0, 0.0, 0.0]},
            {"kind": "prescribed-velocity", "name": "top",
             "box": [[0.0, Ly, 0.0], [Lx, Ly, Lz]], "value": [0.0, 0.0, 1.0]},
        ],
        # critical stretch chosen so damage activates near 12 us of loading
        "fracture": {"enabled": True, "s_max": 0.01},
        "output": {"reaction": "top"},
    }


_BUILDERS = {
    "hessian2d": _hessian2d,
    "hessian3d": _hessian3d,
    "plate-ss": lambda desk: _plate(False, desk),
    "plate-clamped": lambda desk: _plate(True, desk),
    "tension2d": _tension2d,
    "shear3d": _shear3d,
}


def preset_dict(name: str, desk: bool = False) -> dict:
    if name not in _BUILDERS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return _BUILDERS[name](desk)


def preset(name: str, desk: bool = False) -> SimConfig:
    return from_dict(preset_dict(name, desk))


def preset_text(name: str, desk: bool = False) -> str:
    scale = "desk scale" if desk else "full scale"
    return f"# nomsim preset {name} ({scale}); SI units\n" + dump_config(preset(name, desk))
