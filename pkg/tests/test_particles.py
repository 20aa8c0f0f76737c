import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from nomsim.particles import (ParticleCloud, SupportTable, apply_precrack, build_supports,
                              crossing_bonds, generate_grid, invert_supports, jitter)


def brute_knn(pos, k, spacing):
    d2 = np.sum((pos[:, None] - pos[None]) ** 2, axis=-1)
    out = []
    for i in range(len(pos)):
        key = np.round(d2[i] / spacing ** 2, 9)
        order = np.lexsort((np.arange(len(pos)), key))
        out.append([j for j in order if j != i][:k])
    return out


class TestGrid:
    def test_cell_centred_counts_and_volumes(self):
        c = generate_grid([[0, 1], [0, 0.5]], 0.1)
        assert c.count == 50
        assert_allclose(c.volumes, 0.01)
        assert_allclose(c.positions[0], [0.05, 0.05])
        # x varies fastest
        assert_allclose(c.positions[1], [0.15, 0.05])

    def test_node_centred_volumes_sum_to_area(self):
        c = generate_grid([[0, 0.5], [0, 0.5]], 0.0125, "node")
        assert c.count == 41 * 41
        assert_allclose(c.volumes.sum(), 0.25, rtol=1e-12)
        assert_allclose(c.volumes.min(), 0.0125 ** 2 / 4)

    def test_3d_volume(self):
        c = generate_grid([[0, 1], [0, 2], [0, 1]], 0.25)
        assert c.count == 4 * 8 * 4
        assert_allclose(c.volumes.sum(), 2.0)

    def test_empty_discretization(self):
        with pytest.raises(ValueError, match="empty discretization"):
            generate_grid([[0, 0.01], [0, 1]], 0.1)

    def test_positions_are_read_only(self, grid2d):
        with pytest.raises(ValueError):
            grid2d.positions[0, 0] = 1.0

    def test_select_box(self, grid2d):
        idx = grid2d.select([0, 0], [1, 0.05])
        assert len(idx) == 20

    def test_jitter_bounds_and_seed(self, grid2d):
        a = jitter(grid2d, 0.3 * grid2d.spacing, seed=3)
        b = jitter(grid2d, 0.3 * grid2d.spacing, seed=3)
        assert np.array_equal(a.positions, b.positions)
        assert np.abs(a.positions - grid2d.positions).max() <= 0.3 * grid2d.spacing
        with pytest.raises(ValueError):
            jitter(grid2d, 0.6 * grid2d.spacing, seed=3)


class TestSupports:
    def test_knn_matches_brute_force(self, jittered2d):
        sup = build_supports(jittered2d, k=12)
        expect = brute_knn(jittered2d.positions, 12, jittered2d.spacing)
        assert sup.lists() == expect

    def test_knn_ties_prefer_lower_index(self):
        c = generate_grid([[0, 1], [0, 1]], 0.2)
        sup = build_supports(c, k=4)
        centre = 12
        assert sorted(sup[centre]) == [7, 11, 13, 17]
        assert list(sup[centre]) == [7, 11, 13, 17]

    def test_radius_support_is_symmetric(self, grid2d):
        sup = build_supports(grid2d, radius=2.01 * grid2d.spacing)
        pairs = {(i, j) for i, s in enumerate(sup.lists()) for j in s}
        assert all((j, i) in pairs for i, j in pairs)
        interior = sup.counts.max()
        assert interior == 12

    def test_k_too_large(self, grid2d):
        with pytest.raises(ValueError):
            build_supports(grid2d, k=grid2d.count)

    def test_isolated_particle(self):
        c = ParticleCloud(np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]]), np.ones(3), 0.1)
        with pytest.raises(ValueError, match="isolated particle 2"):
            build_supports(c, radius=0.15)

    def test_self_membership_rejected(self):
        with pytest.raises(ValueError):
            SupportTable.from_lists([[0, 1], [0]])

    def test_reverse_slots(self, grid2d):
        sup = build_supports(grid2d, k=8)
        rev = sup.reverse_slots()
        w = sup.neighbors.shape[1]
        for i in (0, 57, 210):
            for slot, j in enumerate(sup[i]):
                r = rev[i, slot]
                if r >= 0:
                    assert r // w == j and sup.neighbors[j, r % w] == i
                else:
                    assert i not in sup[j]


class TestDualSupport:
    def test_four_particle_example(self):
        sup = SupportTable.from_lists([[1, 2, 3], [2], [0, 1], [0, 2]])
        dual = invert_supports(sup)
        assert dual.lists == [[2, 3], [0, 2], [0, 1, 3], [0]]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_double_inversion_preserves_bonds(self, seed):
        rng = np.random.default_rng(seed)
        n = 12
        lists = [sorted(rng.choice([j for j in range(n) if j != i], rng.integers(1, 6), replace=False).tolist())
                 for i in range(n)]
        dual = invert_supports(SupportTable.from_lists(lists))
        back = invert_supports(SupportTable.from_lists(dual.lists))
        assert back.lists == lists


class TestPrecrack:
    def test_segment_cuts_only_crossing_bonds(self):
        c = generate_grid([[0, 1], [0, 1]], 0.1)
        sup = build_supports(c, k=8)
        cut = crossing_bonds(c, sup, ("segment", [0.0, 0.5], [0.5, 0.5]))
        rows, slots = np.nonzero(cut)
        cols = sup.neighbors[rows, slots]
        p, q = c.positions[rows], c.positions[cols]
        assert np.all((p[:, 1] - 0.5) * (q[:, 1] - 0.5) < 0)
        assert np.all(np.minimum(p[:, 0], q[:, 0]) < 0.5)
        cracked = apply_precrack(c, sup, ("segment", [0.0, 0.5], [0.5, 0.5]))
        assert cracked.counts.sum() == sup.counts.sum() - cut.sum()

    def test_endpoint_touch_counts(self):
        c = ParticleCloud(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.ones(3), 1.0)
        sup = SupportTable.from_lists([[1, 2], [0], [0]])
        cut = crossing_bonds(c, sup, ("segment", [-1.0, 1.0], [1.0, 1.0]))
        assert cut[0, 0] and cut[1, 0]
        assert not cut[0, 1]

    def test_rectangle_in_3d(self):
        c = generate_grid([[0, 1], [0, 1], [0, 1]], 0.25)
        sup = build_supports(c, k=6)
        crack = ("rectangle", [0, 0.5, 0], [0.5, 0, 0], [0, 0, 1])
        cut = crossing_bonds(c, sup, crack)
        rows, slots = np.nonzero(cut)
        cols = sup.neighbors[rows, slots]
        p, q = c.positions[rows], c.positions[cols]
        assert cut.sum() > 0
        assert np.all((p[:, 1] - 0.5) * (q[:, 1] - 0.5) < 0)
        assert np.all(np.minimum(p[:, 0], q[:, 0]) <= 0.5)
