from fractions import Fraction

import numpy as np
import pytest

from laakso_lab.core.errors import LevelRangeError, ParameterError, PreconditionError
from laakso_lab.services.maps import (
    NormSpec,
    PAMap,
    bad_density,
    bad_map_blocked_lq,
    bad_map_r2,
    constant_map,
    glue,
    gluing_bound,
    height_map,
    lip,
    lip_eta,
    map_header,
    map_rows,
    orthogonal_step,
    orthogonality_defect,
    oscillation_report,
    random_lipschitz_map,
    set_diameters,
    tent_block,
    tent_values,
)
from laakso_lab.services.shortcuts import EtaGraph


class TestPAMap:
    def test_height_map(self, g1):
        f = height_map(g1)
        assert lip(f) == pytest.approx(1.0)
        assert f.value((6, (2,)))[0] == pytest.approx(6 / 16)

    def test_constant_map(self, g1):
        assert lip(constant_map(g1, (1.0, 2.0))) == 0.0

    def test_rejects_wrong_shape(self, g1):
        with pytest.raises(ParameterError):
            PAMap(g1, np.zeros(5))

    def test_rejects_non_finite(self, g1):
        values = np.zeros(g1.num_vertices)
        values[3] = np.nan
        with pytest.raises(ParameterError):
            PAMap(g1, values)

    def test_glue(self, g1):
        f = glue([height_map(g1), height_map(g1)])
        assert lip(f) == pytest.approx(2.0)
        with pytest.raises(ParameterError):
            glue([])

    def test_cross_graph_arithmetic(self, g1, g2):
        with pytest.raises(ParameterError):
            height_map(g1) + height_map(g2)

    def test_lq_norm(self):
        spec = NormSpec("lq", 1.0)
        assert spec.norm(np.array([[3.0, -4.0]]))[0] == pytest.approx(7.0)
        assert NormSpec().norm(np.array([[3.0, 4.0]]))[0] == pytest.approx(5.0)

    def test_csv_rows(self, g1):
        f = height_map(g1)
        rows = list(map_rows(f))
        assert map_header(f) == ["vertex", "height", "digits", "value_0"]
        assert len(rows) == g1.num_vertices
        assert rows[0][:3] == [0, Fraction(0), "1"]


class TestTents:
    def test_values(self, g1):
        tent = tent_values(g1, 1)
        assert tent[g1.index_of((6, (2,)))] == pytest.approx(1 / 8)
        assert tent[g1.index_of((6, (1,)))] == pytest.approx(-1 / 8)
        assert tent[g1.index_of((2, (2,)))] == 0.0
        assert tent[g1.index_of((8, (0,)))] == 0.0

    def test_lipschitz_one(self, g2):
        for i in (1, 2):
            assert lip(tent_block(g2, i)) == pytest.approx(1.0)

    def test_shortcut_diameter(self, g1, eg1):
        diameters = set_diameters(tent_block(g1, 1), eg1.sets)
        assert np.allclose(diameters, 1 / 4)

    def test_lip_eta(self, g1):
        eg = EtaGraph(g1, (Fraction(1, 4),))
        assert lip_eta(tent_block(g1, 1), eg) == pytest.approx(4.0)

    def test_level_range(self, g1):
        with pytest.raises(LevelRangeError):
            tent_values(g1, 2)


class TestOrthogonalSteps:
    def test_from_zero(self, g1):
        f = PAMap(g1, np.zeros((g1.num_vertices, 2)))
        F = orthogonal_step(f, 1, 0.5)
        assert np.allclose(F.values[:, 0], 0.0)
        assert np.allclose(F.values[:, 1], 0.5 * tent_values(g1, 1))
        assert orthogonality_defect(f, F, 1, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_two_levels(self, g2):
        eta = (Fraction(1, 2), Fraction(1, 4))
        f = PAMap(g2, np.zeros((g2.num_vertices, 2)))
        F1 = orthogonal_step(f, 1, 0.5)
        F2 = orthogonal_step(F1, 2, 0.25)
        assert orthogonality_defect(F1, F2, 2, 0.25) == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(bad_map_r2(g2, [1, 2], eta).values, F2.values)

    def test_rejects_non_affine(self, g1, rng):
        f = PAMap(g1, rng.normal(size=(g1.num_vertices, 2)))
        with pytest.raises(PreconditionError):
            orthogonal_step(f, 1, 0.5)

    def test_rejects_scalar_maps(self, g1):
        with pytest.raises(ParameterError):
            orthogonal_step(height_map(g1), 1, 0.5)

    def test_rejects_empty_levels(self, g1):
        with pytest.raises(ParameterError):
            bad_map_r2(g1, [], (Fraction(1, 2),))


class TestBlockedMaps:
    def test_block_lips(self, g2):
        eta = (Fraction(1, 2), Fraction(1, 4))
        f = bad_map_blocked_lq(g2, [[1], [2]], eta, q=2.0)
        assert f.k == 2
        assert f.block_lips() == pytest.approx([0.5, 0.25])

    def test_overlapping_blocks(self, g2):
        with pytest.raises(ParameterError):
            bad_map_blocked_lq(g2, [[1, 2], [2]], (1, 1), q=2.0)

    def test_q_below_one(self, g2):
        with pytest.raises(ParameterError):
            bad_map_blocked_lq(g2, [[1]], (1, 1), q=0.5)

    def test_gluing_bound(self, g2, eg2):
        parts = [PAMap(g2, float(eg2.eta[i - 1]) * tent_values(g2, i)) for i in (1, 2)]
        glued, bound = gluing_bound(glue(parts), parts, eg2)
        assert glued <= bound + 1e-12


class TestOscillation:
    def test_tent_sets_are_bad(self, g1, eg1):
        report = oscillation_report(tent_block(g1, 1), eg1, [1.0])
        assert report.classified[1.0] == {1: [0, 1]}
        assert all(e.ratio == pytest.approx(2.0) for e in report.entries)
        assert 0 < report.bad_density[1.0] <= 1

    def test_constant_map_has_no_bad_sets(self, g1, eg1):
        assert bad_density(constant_map(g1), eg1, 1.0) == 0.0

    def test_rejects_nonpositive_eps(self, g1, eg1):
        with pytest.raises(ParameterError):
            oscillation_report(tent_block(g1, 1), eg1, [0.0])


class TestRandomMaps:
    def test_one_lipschitz_and_anchored(self, g2, rng):
        f = random_lipschitz_map(g2, rng, anchors=5)
        assert lip(f) <= 1 + 1e-12
        assert f.values[g2.base_vertex, 0] == 0.0

    def test_seeded(self, g2):
        from laakso_lab.core.rng import make_rng

        a = random_lipschitz_map(g2, make_rng(3))
        b = random_lipschitz_map(g2, make_rng(3))
        assert np.array_equal(a.values, b.values)
