import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import interior
from nomsim.operators import Operators
from nomsim.particles import build_supports, generate_grid
from nomsim.plate import (PlateMaterial, assemble_plate_forces, check_band, clamped_penalty,
                          curvature, moment, plate_energies)

PLATE = PlateMaterial(210e9, 0.3, 0.01, 7800.0)


@pytest.fixture(scope="module")
def plate_ops():
    c = generate_grid([[0, 0.5], [0, 0.5]], 0.5 / 20, "node")
    return Operators(c, build_supports(c, radius=3.01 * c.spacing))


def bending_energy(ops, w, pen=0.0):
    r = assemble_plate_forces(ops, w, PLATE, penalty=pen)
    return np.sum((r.energy_density + r.hourglass) * ops.vol)


def test_bending_stiffness():
    assert_allclose(PLATE.D0, 19230.769230769, rtol=1e-12)
    assert_allclose(PLATE.areal_mass, 78.0)


def test_moment_isotropic_bending():
    M = moment(np.eye(2), PLATE)
    assert_allclose(M, PLATE.D0 * (1 + PLATE.nu) * np.eye(2))


def test_uniform_curvature_patch(plate_ops, rng):
    x = plate_ops.cloud.positions
    kx, ky, kxy = rng.normal(size=3) * 1e-3
    w = 0.5 * kx * x[:, 0] ** 2 + kxy * x[:, 0] * x[:, 1] + 0.5 * ky * x[:, 1] ** 2 + 0.1 * x[:, 0]
    r = assemble_plate_forces(plate_ops, w, PLATE)
    kappa = np.array([[kx, kxy], [kxy, ky]])
    idx = interior(plate_ops.cloud, 6.5 * plate_ops.cloud.spacing)
    assert_allclose(r.kappa[idx], np.broadcast_to(kappa, (len(idx), 2, 2)), atol=1e-12)
    scale = PLATE.D0 * np.abs(kappa).max() * plate_ops.cloud.spacing ** 0
    assert np.abs(r.internal[idx]).max() <= 1e-8 * scale


def test_forces_are_negative_energy_gradient(plate_ops, rng):
    w = 1e-4 * rng.normal(size=plate_ops.cloud.count)
    pen = clamped_penalty(plate_ops.cloud.count, np.arange(20), PLATE.E, factor=1e-6)
    f = assemble_plate_forces(plate_ops, w, PLATE, penalty=pen).internal
    eps = 1e-9
    for k in (0, 57, 220, 440):
        e = np.zeros_like(w)
        e[k] = eps
        fd = -(bending_energy(plate_ops, w + e, pen) - bending_energy(plate_ops, w - e, pen)) / (2 * eps)
        assert_allclose(f[k], fd, rtol=1e-5, atol=1e-9 * np.abs(f).max())


def test_force_balance(plate_ops, rng):
    w = rng.normal(size=plate_ops.cloud.count)
    f = assemble_plate_forces(plate_ops, w, PLATE, penalty=PLATE.E).internal
    assert abs(f.sum()) <= 1e-10 * np.abs(f).sum()


def test_pressure_adds_volume_load(plate_ops):
    w = np.zeros(plate_ops.cloud.count)
    r = assemble_plate_forces(plate_ops, w, PLATE, q=1e3)
    assert_allclose(r.forces, 1e3 * plate_ops.vol)
    assert plate_energies(plate_ops, r, w, PLATE) == (0.0, 0.0, 0.0)


def test_curvature_of_quadratic(plate_ops):
    x = plate_ops.cloud.positions
    k = curvature(plate_ops, x[:, 0] * x[:, 1])
    assert_allclose(k[:, 0, 1], 1.0, atol=1e-8)


def test_three_dimensional_rejected(ops3d):
    with pytest.raises(ValueError, match="two-dimensional"):
        assemble_plate_forces(ops3d, np.zeros(ops3d.cloud.count), PLATE)


def test_thin_clamp_band_warns():
    c = generate_grid([[-0.1, 1.1], [-0.1, 1.1]], 0.1, "node")
    ops = Operators(c, build_supports(c, radius=3.01 * 0.1))
    pos = c.positions
    inside = np.all((pos > -1e-9) & (pos < 1 + 1e-9), axis=1)
    with pytest.warns(UserWarning, match="under-constrained"):
        assert not check_band(ops, np.flatnonzero(~inside), np.flatnonzero(inside))


def test_thick_clamp_band_is_quiet():
    c = generate_grid([[-0.3, 1.3], [-0.3, 1.3]], 0.1, "node")
    ops = Operators(c, build_supports(c, radius=3.01 * 0.1))
    pos = c.positions
    inside = np.all((pos > -1e-9) & (pos < 1 + 1e-9), axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_band(ops, np.flatnonzero(~inside), np.flatnonzero(inside))
