import itertools
from fractions import Fraction

import networkx as nx
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from laakso_lab.core.errors import LevelRangeError, ParameterError
from laakso_lab.services.diamond import (
    build_diamond,
    compute_p_G,
    diamond_level,
    digit_criterion_failures,
    edge_list_rows,
    jump_fibers,
    jump_height_inclusion,
    midpoint_parity_failures,
    project_laakso,
    restrict,
    restricted_N,
    xy_profile,
)
from laakso_lab.services.laakso import LaaksoParams, build_graph
from laakso_lab.services.shortcuts import enumerate_shortcuts


class TestConstruction:
    def test_small_diamond(self):
        d = build_diamond(2, (4, 4))
        assert d.P == 16
        assert d.graph.number_of_nodes() == 5 + 12 * 2
        assert d.graph.number_of_edges() == 32
        assert nx.is_connected(d.graph)
        assert d.distance((0, ()), (16, ())) == 1

    def test_levels(self):
        assert diamond_level((4, 4), 0) == 1
        assert diamond_level((4, 4), 8) == 1
        assert diamond_level((4, 4), 3) == 2

    def test_rejects_bad_parameters(self):
        with pytest.raises(ParameterError):
            build_diamond(1, (4, 4))
        with pytest.raises(ParameterError):
            build_diamond(2, (4, 3))

    def test_edge_rows(self):
        d = build_diamond(2, (4, 4))
        rows = edge_list_rows(d)
        assert len(rows) == 32
        assert rows[0][0] == Fraction(0)


class TestProfiles:
    def test_known_profile(self):
        assert xy_profile((4, 4), Fraction(7, 16), 1) == (Fraction(1, 4), Fraction(1, 2))
        assert xy_profile((4, 4), Fraction(7, 16), 0) == (0, 1)
        assert xy_profile((4, 4), Fraction(7, 16), 2) == (Fraction(7, 16), Fraction(7, 16))

    def test_off_grid(self):
        with pytest.raises(ParameterError):
            xy_profile((4, 4), Fraction(1, 3), 1)
        with pytest.raises(LevelRangeError):
            xy_profile((4, 4), Fraction(1, 2), -1)

    @given(st.integers(min_value=0, max_value=64), st.integers(min_value=0, max_value=3))
    @hyp_settings(max_examples=200, deadline=None)
    def test_profile_brackets_t(self, idx, l):
        N = (4, 4, 4)
        t = Fraction(idx, 64)
        x, y = xy_profile(N, t, l)
        assert x <= t <= y
        if l < 3:
            x_next, y_next = xy_profile(N, t, l + 1)
            assert x <= x_next and y_next <= y

    @pytest.mark.parametrize("N", [(4, 4), (4, 4, 4), (4, 6, 4), (6, 4)])
    def test_midpoint_capture(self, N):
        assert compute_p_G(N) == 1
        assert midpoint_parity_failures(N) == []
        assert digit_criterion_failures(N) == []


class TestRestrictions:
    def test_restricted_N(self):
        assert restricted_N((4, 4, 4), [1]) == (4, 16)
        assert restricted_N((4, 4, 4), [2]) == (16, 4)
        assert restricted_N((4, 4, 4), [1, 2]) == (4, 4, 4)

    @pytest.mark.parametrize("levels", [[1], [2], [1, 2]])
    def test_restriction_is_a_diamond(self, levels):
        d = build_diamond(2, (4, 4, 4))
        r = restrict(d, levels)
        assert r.target.N == restricted_N(d.N, levels)
        assert set(r.projection.values()) == set(r.target.graph.nodes)

    @pytest.mark.parametrize("levels", [[], [0], [3]])
    def test_bad_level_sets(self, levels):
        with pytest.raises(ParameterError):
            restrict(build_diamond(2, (4, 4, 4)), levels)

    def test_jump_heights_survive(self):
        assert all(jump_height_inclusion((4, 4, 4), [1]))
        assert all(jump_height_inclusion((4, 4, 4), [2]))

    def test_jump_fibers(self):
        d = build_diamond(2, (4, 4, 4))
        fibers = list(jump_fibers(d, 1))
        assert len(fibers) == 2
        for fiber in fibers:
            for u, v in itertools.combinations(fiber, 2):
                assert d.distance(u, v) == Fraction(1, 4)
        with pytest.raises(LevelRangeError):
            list(jump_fibers(d, 3))


class TestLaaksoProjection:
    @pytest.mark.parametrize("levels", [[1], [2], [1, 2]])
    def test_projection(self, g2, levels):
        projection = project_laakso(g2, levels, enumerate_shortcuts(g2))
        assert projection.lipschitz
        assert projection.dichotomy_holds(g2.params)

    @pytest.mark.parametrize("levels", [[1], [2]])
    def test_three_branches_measure_every_member_pair(self, levels):
        g = build_graph(LaaksoParams.constant(3, 4, 2))
        families = enumerate_shortcuts(g)
        projection = project_laakso(g, levels, families)
        sets = sum(len(family.sets) for family in families)
        assert len(projection.jump_distances) == 3 * sets
        assert projection.lipschitz
        assert projection.dichotomy_holds(g.params)

    def test_bad_levels(self, g2):
        with pytest.raises(ParameterError):
            project_laakso(g2, [3], enumerate_shortcuts(g2))
