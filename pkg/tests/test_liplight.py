from fractions import Fraction

import numpy as np
import pytest

from laakso_lab.core.errors import LevelRangeError, ParameterError
from laakso_lab.core.rng import make_rng
from laakso_lab.services.liplight import (
    UnionFind,
    basic_separation,
    canonical_intervals,
    class_partition,
    component_containment,
    light_constant,
    r_components,
    union_components_bound,
)
from laakso_lab.services.schedules import eta_geometric, eta_power
from laakso_lab.services.shortcuts import EtaGraph
from tests.conftest import laakso


class TestUnionFind:
    def test_merges(self):
        uf = UnionFind(5)
        assert uf.union(0, 1)
        assert uf.union(3, 4)
        assert not uf.union(1, 0)
        labels = uf.labels()
        assert labels[0] == labels[1]
        assert labels[3] == labels[4]
        assert len(set(labels.tolist())) == 3

    def test_long_chain(self):
        uf = UnionFind(10_000)
        for u in range(9_999):
            uf.union(u, u + 1)
        assert len(set(uf.labels().tolist())) == 1


class TestComponents:
    def test_whole_graph_is_one_component(self, g1, eg1):
        components = r_components(eg1, range(g1.num_vertices), Fraction(1, 16))
        assert len(components) == 1
        assert components[0].diameter > 0

    def test_tiny_radius_splits(self, g1, eg1):
        vertices = [g1.index_of((0, (1,))), g1.index_of((0, (2,)))]
        components = r_components(eg1, vertices, Fraction(1, 16))
        assert len(components) == 2
        assert all(c.diameter == 0 for c in components)

    def test_empty(self, eg1):
        assert r_components(eg1, [], Fraction(1, 16)) == []

    @pytest.mark.parametrize("r, metric", [(0, "eta"), (Fraction(1, 16), "other")])
    def test_rejects_bad_arguments(self, eg1, r, metric):
        with pytest.raises(ParameterError):
            r_components(eg1, [0, 1], r, metric)


class TestClassPartition:
    def test_free_interval_separates_branches(self, eg1):
        partition = class_partition(eg1, 2, 0)
        assert partition.interval == (0, Fraction(1, 16))
        assert partition.wormhole_levels == set()
        assert partition.jump_levels == set()
        assert sorted(partition.classes, key=sorted) == [frozenset({(1,)}), frozenset({(2,)})]
        assert partition.separation == Fraction(3, 8)

    def test_short_jump_merges_classes(self, g1):
        eg = EtaGraph(g1, (Fraction(1, 8),))
        partition = class_partition(eg, 2, 5)
        assert partition.jump_levels == {1}
        assert len(partition.classes) == 1
        assert partition.separation is None

    def test_long_jump_keeps_classes(self, eg1):
        partition = class_partition(eg1, 2, 5)
        assert partition.jump_levels == set()
        assert len(partition.classes) == 2

    def test_wormhole_endpoint_merges_classes(self, eg1):
        partition = class_partition(eg1, 2, 3)
        assert partition.wormhole_levels == {1}
        assert len(partition.classes) == 1

    def test_components_stay_in_classes(self, eg2):
        p = eg2.params
        for k, m in canonical_intervals(p, [2, 3]):
            partition = class_partition(eg2, k, m)
            if partition.separation is None or partition.separation == 0:
                continue
            components = r_components(eg2, np.concatenate(partition.vertex_sets), partition.separation / 2)
            assert component_containment(partition, components)

    @pytest.mark.parametrize("schedule", ["ones", "geometric", "power"])
    def test_partition_bounds_at_depth_three(self, schedule):
        g = laakso(2, 4, 3)
        eta = {"ones": (Fraction(1),) * 3, "geometric": eta_geometric(3, 0.5), "power": eta_power(3)}[schedule]
        eg = EtaGraph(g, eta)
        for k, m in canonical_intervals(g.params, [2, 3, 4], limit=16, rng=make_rng(20)):
            partition = class_partition(eg, k, m)
            assert partition.max_diameter <= 5 * partition.length
            if partition.separation is not None:
                assert partition.separation >= partition.length / 3

    @pytest.mark.parametrize("level, m", [(1, 0), (3, 0), (2, 16)])
    def test_range(self, eg1, level, m):
        with pytest.raises((LevelRangeError, ParameterError)):
            class_partition(eg1, level, m)


class TestConstants:
    def test_canonical_intervals(self, g2):
        p = g2.params
        assert len(canonical_intervals(p, [1, 2])) == 4 + 16
        sampled = canonical_intervals(p, [3], limit=5, rng=make_rng(1))
        assert len(sampled) == 5
        assert sampled == canonical_intervals(p, [3], limit=5, rng=make_rng(1))
        with pytest.raises(ParameterError):
            canonical_intervals(p, [3], limit=5)
        with pytest.raises(LevelRangeError):
            canonical_intervals(p, [4])

    def test_light_constant(self, eg2):
        intervals = canonical_intervals(eg2.params, [3], limit=6, rng=make_rng(2))
        report = light_constant(eg2, intervals)
        assert np.isfinite(report.constant) and report.constant > 0
        assert {row.level for row in report.rows} == {3}
        with pytest.raises(ParameterError):
            light_constant(eg2, [])

    @staticmethod
    def level_two_constant(n):
        eg = EtaGraph(laakso(2, 4, n), eta_geometric(n, 0.5))
        return light_constant(eg, canonical_intervals(eg.params, [2], limit=6, rng=make_rng(21))).constant

    def test_light_constant_stable_in_depth(self):
        constants = [self.level_two_constant(n) for n in (2, 3)]
        assert max(constants) <= 2 * min(constants)

    @pytest.mark.slow
    def test_light_constant_stable_to_depth_four(self):
        constants = [self.level_two_constant(n) for n in (2, 3, 4)]
        assert max(constants) <= 2 * min(constants)

    def test_basic_separation_runs(self, g1, eg1):
        x = g1.index_of((1, (1,)))
        y = g1.index_of((1, (2,)))
        slack = basic_separation(eg1, [(x, y)])
        assert slack is not None and slack >= 0
        assert basic_separation(eg1, [(x, x)]) is None

    def test_union_bound(self):
        assert union_components_bound(1.0, 2.0) == pytest.approx(max(2 * 7, 8 + 8 + 1))
