from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from laakso_lab.core.errors import ParameterError, ScheduleError
from laakso_lab.services.schedules import (
    alpha_sequence,
    dyadic,
    eta_block,
    eta_geometric,
    eta_power,
    eta_sum_power,
    schedule_blocks,
)


class TestScheduleBlocks:
    def test_harmonic_series(self):
        alpha = alpha_sequence("power", 1000)
        report = schedule_blocks(alpha, p=2.0, sigma=1.0)
        assert report.blocks
        assert report.total_power <= 1
        assert report.diverging(alpha)

    def test_geometric_series_does_not_diverge(self):
        alpha = alpha_sequence("geometric", 200, ratio=0.5)
        report = schedule_blocks(alpha, p=2.0, sigma=1.0)
        assert report.diverging(alpha) is False
        assert report.selected_sum(200, alpha) <= alpha.sum()

    @pytest.mark.slow
    def test_harmonic_blocks_keep_growing_to_a_million(self):
        alpha = alpha_sequence("power", 10**6)
        report = schedule_blocks(alpha, p=2.0, sigma=1.0)
        sums = [report.selected_sum(10**k, alpha) for k in range(3, 7)]
        assert all(later - earlier > 1.0 for earlier, later in zip(sums, sums[1:]))
        assert report.total_power <= 1
        assert report.diverging(alpha)

    def test_blocks_are_disjoint_and_ordered(self):
        report = schedule_blocks(alpha_sequence("power", 2000, exponent=0.8), p=2.0, sigma=0.5)
        flat = np.concatenate(report.blocks)
        assert np.all(np.diff(flat) > 0)
        assert np.array_equal(flat, report.subsequence)
        assert flat.min() >= 1 and flat.max() <= 2000

    def test_targets_follow_groups(self):
        report = schedule_blocks(alpha_sequence("power", 1000), p=2.0, sigma=1.0)
        for group, count, size in report.targets:
            assert count == int(np.ceil(2 ** group))
            assert size == pytest.approx(1 / count)

    def test_constant_sequence_rejected(self):
        with pytest.raises(ScheduleError):
            schedule_blocks(np.ones(100), p=2.0, sigma=1.0)

    @pytest.mark.parametrize("p, sigma", [(1.0, 1.0), (2.0, 0.0), (2.0, 1.5)])
    def test_bad_exponents(self, p, sigma):
        with pytest.raises(ParameterError):
            schedule_blocks(alpha_sequence("power", 100), p=p, sigma=sigma)

    @pytest.mark.parametrize("alpha", [[1.0, 0.5], [1.0, -1.0, 0.5, 0.2], [1.0, np.inf, 0.5, 0.1]])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ParameterError):
            schedule_blocks(alpha, p=2.0, sigma=1.0)

    @given(st.floats(min_value=0.6, max_value=1.0), st.floats(min_value=1.5, max_value=3.0))
    @hyp_settings(max_examples=30, deadline=None)
    def test_block_sums_stay_below_one(self, exponent, p):
        report = schedule_blocks(alpha_sequence("power", 800, exponent=exponent), p=p, sigma=1.0)
        for block, total in zip(report.blocks, report.block_sums):
            assert total <= 1 + 1e-12
            assert len(block) >= 1


class TestGenerators:
    def test_dyadic(self):
        assert dyadic(0.5) == Fraction(1, 2)
        assert dyadic(1e-12, bits=4) == Fraction(1, 16)
        assert dyadic(1.0) == 1

    def test_geometric(self):
        assert eta_geometric(3, 0.5) == (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8))
        with pytest.raises(ParameterError):
            eta_geometric(3, 1.5)

    def test_power(self):
        eta = eta_power(3, c=1.0, exponent=1.0)
        assert eta[:2] == (Fraction(1), Fraction(1, 2))
        assert abs(float(eta[2]) - 1 / 3) < 2**-20

    def test_block(self):
        assert eta_block(4, [[2, 3]], 0.25) == (1, Fraction(1, 4), Fraction(1, 4), 1)

    def test_sum_power(self):
        assert eta_sum_power((Fraction(1, 4), Fraction(1, 4)), 0.5) == pytest.approx(1.0)

    def test_alpha_kinds(self):
        assert alpha_sequence("geometric", 3, ratio=0.5).tolist() == [0.5, 0.25, 0.125]
        assert alpha_sequence("constant", 2, value=0.3).tolist() == [0.3, 0.3]
        with pytest.raises(ParameterError):
            alpha_sequence("zeta", 3)
