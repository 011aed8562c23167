import itertools
from fractions import Fraction

import numpy as np
import pytest

from laakso_lab.core.errors import LevelRangeError, ParameterError
from laakso_lab.core.rng import make_rng
from laakso_lab.services.shortcuts import (
    EtaGraph,
    best_single_jump,
    chain_distance,
    chord_diameter_bounds,
    density_profile,
    dist_eta,
    distortion,
    enumerate_shortcuts,
    jump_ball_pieces,
    jump_heights,
    member_distance_defects,
    neighbourhood_inclusion,
    net_radius,
    set_separation,
    single_jump_sweep,
    validate_eta,
)
from laakso_lab.services.schedules import alpha_sequence, eta_geometric
from tests.conftest import laakso


class TestFamilies:
    def test_jump_heights(self):
        assert jump_heights((4, 4), 1) == [Fraction(3, 8), Fraction(5, 8)]
        assert len(jump_heights((4, 4), 2)) == 8
        with pytest.raises(LevelRangeError):
            jump_heights((4, 4), 3)

    def test_depth_one(self, g1):
        (family,) = enumerate_shortcuts(g1)
        assert family.level == 1
        assert [s.height for s in family.sets] == [6, 10]
        assert g1.vertex(family.sets[0].members[0]) == (6, (1,))
        assert g1.vertex(family.sets[0].members[1]) == (6, (2,))

    def test_depth_two(self, g2):
        families = enumerate_shortcuts(g2)
        assert [len(f.sets) for f in families] == [2, 16]
        first = families[0].sets[0]
        assert [g2.vertex(v).digits for v in first.members] == [(1, 0), (2, 0)]

    def test_members_are_delta_apart(self, g2):
        assert member_distance_defects(g2, enumerate_shortcuts(g2)) == []

    def test_net_radius(self, g2):
        for family in enumerate_shortcuts(g2):
            assert net_radius(g2, family) <= Fraction(3, 2) * g2.params.delta(family.level)


class TestEta:
    @pytest.mark.parametrize("eta", [(0,), (Fraction(3, 2),), ("x",), ()])
    def test_rejects_bad_values(self, eta):
        with pytest.raises(ParameterError):
            validate_eta(eta, 1)

    def test_parses_strings(self):
        assert validate_eta(("1/2", 1), 2) == (Fraction(1, 2), Fraction(1))

    def test_scale_is_integral(self, eg1, eg2):
        assert eg1.base_factor == 1
        assert eg1.scale == 16
        assert eg2.scale % eg2.base.params.D == 0


class TestContractedMetric:
    def test_chord_distance(self, g1, eg1):
        x = g1.vertex_at(Fraction(3, 8), (1,))
        y = g1.vertex_at(Fraction(3, 8), (2,))
        assert dist_eta(eg1, x, y) == Fraction(1, 8)

    def test_eta_one_changes_nothing(self, g1):
        eg = EtaGraph(g1, (1,))
        table = g1.distance_matrix()
        contracted = eg.distances_from(np.arange(g1.num_vertices)) / eg.base_factor
        assert np.array_equal(table, contracted)

    def test_contraction_never_increases(self, g2, eg2):
        base = g2.distance_matrix() / g2.scale
        contracted = eg2.distances_from(np.arange(g2.num_vertices)) / eg2.scale
        assert np.all(contracted <= base + 1e-12)

    def test_chord_diameters(self, eg1, eg2):
        assert chord_diameter_bounds(eg1) == (1, 1)
        low, high = chord_diameter_bounds(eg2)
        assert low >= Fraction(1, 3) and high <= 1

    def test_perturbed_chord_breaks_lower_bound(self, eg2):
        low, _ = chord_diameter_bounds(eg2.with_perturbed_chord())
        assert low == Fraction(1, 100)

    def test_perturbed_chord_weights_must_match(self, g1, eg1):
        with pytest.raises(ParameterError):
            EtaGraph(g1, eg1.eta, chord_weights=[Fraction(1, 8)] * 5)

    def test_separation(self, g2, eg2):
        assert set_separation(g2, eg2.sets, g2.params) > 0
        assert set_separation(eg2, eg2.sets, g2.params) > 0
        assert set_separation(eg2, eg2.sets[:1], g2.params) is None

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("schedule", ["ones", "geometric", "steep"])
    def test_separation_bounds(self, n, schedule):
        g = laakso(2, 4, n)
        eta = {
            "ones": (Fraction(1),) * n,
            "geometric": eta_geometric(n, 0.5),
            "steep": (Fraction(1, 64),) * n,
        }[schedule]
        eg = EtaGraph(g, eta)
        base = set_separation(g, eg.sets, g.params)
        contracted = set_separation(eg, eg.sets, g.params)
        assert base is None or base >= Fraction(1, 2)
        assert contracted is None or contracted >= Fraction(1, 6)

    def test_distortion_bound(self, eg2):
        assert distortion(eg2) <= 1 / float(min(eg2.eta)) + 1e-9


class TestJumps:
    def test_best_single_jump(self, g1, eg1):
        x = g1.vertex_at(Fraction(3, 8), (1,))
        y = g1.vertex_at(Fraction(3, 8), (2,))
        jump = best_single_jump(eg1, x, y)
        assert jump is not None
        assert jump.cost == Fraction(1, 8)
        assert {jump.p_minus, jump.p_plus} == {x, y}

    def test_no_jump_on_one_branch(self, g1, eg1):
        x = g1.vertex_at(Fraction(1, 16), (1,))
        y = g1.vertex_at(Fraction(2, 16), (1,))
        assert best_single_jump(eg1, x, y) is None

    def test_two_jumps_realise_eta_at_depth_one(self, g1, eg1):
        for x, y in itertools.combinations(range(g1.num_vertices), 2):
            assert chain_distance(eg1, x, y, max_jumps=2) == dist_eta(eg1, x, y)

    def test_long_chains_realise_eta_at_depth_two(self, g2, eg2):
        members = len(np.unique(np.concatenate([eg2.jump_from, eg2.jump_to])))
        rng = make_rng(11)
        for x, y in rng.choice(g2.num_vertices, size=(40, 2)):
            assert chain_distance(eg2, int(x), int(y), max_jumps=members) == dist_eta(eg2, int(x), int(y))

    def test_zero_jumps_is_base_distance(self, g1, eg1):
        x, y = 0, g1.num_vertices - 1
        assert chain_distance(eg1, x, y, max_jumps=0) == g1.to_fraction(g1.distances_from(x)[y])

    def test_single_jump_within_factor_three(self, eg2):
        samples = single_jump_sweep(eg2, make_rng(5), 60)
        assert samples
        for sample in samples:
            assert sample.contracted < sample.base
            assert sample.best_cost <= 3 * sample.contracted

    def test_deep_sets_need_a_jump(self):
        g = laakso(2, 4, 3)
        eg = EtaGraph(g, (Fraction(1, 64), 1, 1))
        s = eg.sets[0]
        x, y = s.members
        jump = best_single_jump(eg, x, y)
        assert jump is not None
        assert jump.shortcut == s
        assert {jump.p_minus, jump.p_plus} == {x, y}
        assert jump.cost == eg.eta[0] * g.params.delta(1)

    @pytest.mark.slow
    def test_single_jump_sweep_at_depth_three(self):
        g = laakso(2, 4, 3)
        eg = EtaGraph(g, eta_geometric(3, 0.5))
        samples = single_jump_sweep(eg, make_rng(13), 1000)
        assert len(samples) == 1000
        assert max(sample.best_cost / sample.contracted for sample in samples) <= 3


class TestNeighbourhoods:
    def test_inclusion(self, eg2):
        for s in eg2.sets:
            assert neighbourhood_inclusion(eg2, s, Fraction(1, 8))

    @pytest.mark.parametrize("R", [0, Fraction(1, 6), Fraction(1, 2)])
    def test_radius_range(self, eg2, R):
        with pytest.raises(ParameterError):
            neighbourhood_inclusion(eg2, eg2.sets[0], R)

    def test_jump_ball_pieces_are_disjoint(self, eg2):
        pieces = jump_ball_pieces(eg2, eg2.sets[0], Fraction(1, 4))
        assert len(pieces.pieces) == 2
        assert not set(pieces.pieces[0]) & set(pieces.pieces[1])
        assert pieces.base_gap >= pieces.eta_gap


class TestDensity:
    def test_cumulative_profile(self, eg2):
        profile = density_profile(eg2, [1.0, 0.5])
        assert len(profile.per_level) == 2
        assert profile.cumulative[0] >= profile.cumulative[1]
        assert profile.cumulative[1] == pytest.approx(profile.per_level[1])
        assert 0 < profile.cumulative[0] <= 1 + 1e-12

    def test_eta_metric_covers_more(self, eg2):
        base = density_profile(eg2, [0.5, 0.5], metric="base")
        contracted = density_profile(eg2, [0.5, 0.5], metric="eta")
        for a, b in zip(base.per_level, contracted.per_level):
            assert b >= a - 1e-12

    def test_rejects_short_alpha(self, eg2):
        with pytest.raises(ParameterError):
            density_profile(eg2, [1.0])

    def test_rejects_unknown_metric(self, eg2):
        with pytest.raises(ParameterError):
            density_profile(eg2, [1.0, 1.0], metric="other")

    @pytest.mark.parametrize("n", [2, 3, pytest.param(4, marks=pytest.mark.slow), pytest.param(5, marks=pytest.mark.slow)])
    def test_divergent_schedule_dominates(self, n):
        eg = EtaGraph(laakso(2, 4, n), eta_geometric(n, 0.5))
        divergent = density_profile(eg, alpha_sequence("constant", n, value=1.0))
        convergent = density_profile(eg, alpha_sequence("geometric", n, ratio=0.5))
        for wide, narrow in zip(divergent.cumulative, convergent.cumulative):
            assert wide > narrow
