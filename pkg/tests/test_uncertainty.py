import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubp.errors import ContractViolation, NotReadyError
from ubp.numkernel import Rng, l2_normalize_rows
from ubp.uncertainty import (
    RadiusTable,
    SimilarityTracker,
    assign_radius,
    batch_stats,
    confidence_interval,
    radius_level,
    tracker_update,
    update_radius_table,
)

R0, C = 0.25, 10.0


class TestBatchStats:
    def test_constant_vector(self):
        assert batch_stats(np.array([1.0, 1.0, 1.0])) == (1.0, 0.0)

    def test_two_point(self):
        mean, var = batch_stats(np.array([0.0, 2.0]))
        assert mean == 1.0
        assert var == 2.0  # unbiased: ((1)^2 + (1)^2) / (2 - 1)

    def test_gaussian_sample(self):
        gen = Rng(314).gen
        scores = gen.normal(0.16, 0.02, 1000)
        mean, var = batch_stats(scores)
        assert abs(mean - 0.16) < 0.003
        assert abs(np.sqrt(var) - 0.02) < 0.003

    def test_too_short(self):
        with pytest.raises(ContractViolation):
            batch_stats(np.array([1.0]))


class TestTrackerUpdate:
    def test_first_batch_initializes_directly(self):
        t = tracker_update(SimilarityTracker(momentum=0.9), np.array([0.0, 2.0]))
        assert t.mu_hat == 1.0
        assert t.var_hat == 2.0
        assert t.batches_seen == 1

    def test_ema_arithmetic(self):
        t = SimilarityTracker(mu_hat=1.0, var_hat=2.0, momentum=0.9, batches_seen=5)
        # batch [2, 2, 2] has mean 2 and variance 0
        t2 = tracker_update(t, np.array([2.0, 2.0, 2.0]))
        assert t2.mu_hat == pytest.approx(1.1, abs=1e-12)
        assert t2.var_hat == pytest.approx(1.8, abs=1e-12)

    def test_constant_stream_converges_geometrically(self):
        t = SimilarityTracker(momentum=0.9)
        target = 0.42
        t = tracker_update(t, np.full(8, target))
        for k in range(1, 40):
            t = tracker_update(t, np.full(8, target))
            # after the direct init the gap to the target shrinks by m each step
            assert t.mu_hat == pytest.approx(target, abs=1e-9)
            assert t.var_hat == pytest.approx(0.0, abs=1e-12)

    def test_geometric_decay_from_offset_start(self):
        t = SimilarityTracker(mu_hat=1.0, var_hat=0.0, momentum=0.9, batches_seen=1)
        s = np.full(4, 0.0)
        gaps = []
        for _ in range(10):
            t = tracker_update(t, s)
            gaps.append(t.mu_hat)
        ratios = [b / a for a, b in zip(gaps, gaps[1:])]
        assert np.allclose(ratios, 0.9, atol=1e-9)


class TestConfidenceInterval:
    def test_reference_interval(self):
        t = SimilarityTracker(mu_hat=0.16, var_hat=0.02 ** 2, batches_seen=3,
                              warmup_batches=1)
        lo, hi = confidence_interval(t)
        assert lo == pytest.approx(0.1208, abs=1e-12)
        assert hi == pytest.approx(0.1992, abs=1e-12)

    def test_zero_variance(self):
        t = SimilarityTracker(mu_hat=0.3, var_hat=0.0, batches_seen=2, warmup_batches=1)
        assert confidence_interval(t) == (0.3, 0.3)

    def test_zero_critical_value(self):
        t = SimilarityTracker(mu_hat=0.3, var_hat=1.0, z=0.0, batches_seen=2,
                              warmup_batches=1)
        assert confidence_interval(t) == (0.3, 0.3)

    def test_not_ready_before_warmup(self):
        t = SimilarityTracker(batches_seen=3, warmup_batches=10)
        with pytest.raises(NotReadyError):
            confidence_interval(t)

    def test_coverage_five_percent(self):
        gen = Rng(271828).gen
        mu_true, sigma_true = 0.16, 0.02
        t = SimilarityTracker(momentum=0.9, z=1.96, warmup_batches=10)
        scores = gen.normal(mu_true, sigma_true, (100, 1000))
        for batch in scores:
            t = tracker_update(t, batch)
        lo, hi = confidence_interval(t)
        flat = scores.ravel()
        outside = float(((flat < lo) | (flat > hi)).mean())
        assert abs(outside - 0.05) < 0.007


class TestAssignRadius:
    LO, HI = 0.1208, 0.1992

    def test_below_lowers_radius(self):
        assert assign_radius(0.10, self.LO, self.HI, R0, C) == R0 - C
        assert assign_radius(0.10, self.LO, self.HI, R0, C) == -9.75

    def test_above_raises_radius(self):
        assert assign_radius(0.25, self.LO, self.HI, R0, C) == R0 + C
        assert assign_radius(0.25, self.LO, self.HI, R0, C) == 10.25

    def test_inside_keeps_baseline(self):
        assert assign_radius(0.16, self.LO, self.HI, R0, C) == R0

    def test_boundaries_inclusive(self):
        assert assign_radius(self.LO, self.LO, self.HI, R0, C) == R0
        assert assign_radius(self.HI, self.LO, self.HI, R0, C) == R0

    def test_flip_swaps_outer_branches(self):
        assert assign_radius(0.10, self.LO, self.HI, R0, C, flip=True) == R0 + C
        assert assign_radius(0.25, self.LO, self.HI, R0, C, flip=True) == R0 - C
        assert assign_radius(0.16, self.LO, self.HI, R0, C, flip=True) == R0

    def test_monotone_step_function(self):
        values = [assign_radius(s, self.LO, self.HI, R0, C)
                  for s in np.linspace(0.0, 0.4, 2001)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_inverted_interval_rejected(self):
        with pytest.raises(ContractViolation):
            assign_radius(0.1, 0.5, 0.2, R0, C)


class TestRadiusLevel:
    def test_three_levels(self):
        assert radius_level(R0 - C, R0, C) == "low"
        assert radius_level(R0, R0, C) == "base"
        assert radius_level(R0 + C, R0, C) == "high"

    def test_unknown_radius(self):
        with pytest.raises(ContractViolation):
            radius_level(3.0, R0, C)


def _ready_tracker(mu=0.16, sigma=0.02):
    return SimilarityTracker(mu_hat=mu, var_hat=sigma ** 2, batches_seen=5,
                             warmup_batches=1)


class TestRadiusTable:
    def test_initial_all_baseline(self):
        table = RadiusTable.initial([3, 7, 9], R0, C)
        assert np.all(table.radii == R0)
        assert table.levels([9, 3]) == ["base", "base"]

    def test_empty_batch_is_noop(self):
        table = RadiusTable.initial([1, 2], R0, C)
        out = update_radius_table(table, np.array([]), np.array([]), _ready_tracker())
        assert np.array_equal(out.radii, table.radii)

    def test_all_inside_keeps_baseline(self):
        table = RadiusTable.initial([1, 2, 3], R0, C)
        t = _ready_tracker()
        out = update_radius_table(table, [1, 2, 3], [0.15, 0.16, 0.17], t)
        assert np.all(out.radii == R0)

    def test_mixed_batch_matches_per_element_rule(self):
        table = RadiusTable.initial(range(10), R0, C)
        t = _ready_tracker()
        lo, hi = confidence_interval(t)
        gen = Rng(55).gen
        ids = gen.permutation(10)[:6]
        scores = gen.normal(0.16, 0.05, 6)
        out = update_radius_table(table, ids, scores, t)
        for i, s in zip(ids, scores):
            expected = assign_radius(float(s), lo, hi, R0, C)
            assert out.lookup([int(i)])[0] == expected
        untouched = sorted(set(range(10)) - set(int(i) for i in ids))
        assert np.all(out.lookup(untouched) == R0)

    def test_unknown_id_rejected(self):
        table = RadiusTable.initial([1, 2], R0, C)
        with pytest.raises(ContractViolation):
            update_radius_table(table, [5], [0.1], _ready_tracker())

    def test_support_invariant_many_updates(self):
        table = RadiusTable.initial(range(50), R0, C)
        t = _ready_tracker()
        gen = Rng(99).gen
        for _ in range(200):
            ids = gen.integers(0, 50, 50)
            # ids must be unique per update call? duplicates allowed: last wins
            scores = gen.normal(0.16, 0.06, 50)
            table = update_radius_table(table, ids, scores, t)
        support = {R0 - C, R0, R0 + C}
        assert set(float(r) for r in table.radii) <= support


class TestSeparationPower:
    def test_noisy_pairs_fall_below_interval_more_often(self):
        # paired embeddings with two corruption levels: the "averaged" level
        # and one with noise scaled by sqrt(80), mirroring what trial
        # averaging does to the noise floor
        gen = Rng(424242).gen
        dim, n = 64, 4000
        h_v = l2_normalize_rows(gen.normal(size=(n, dim)))
        base_noise = 0.35
        def scores_for(noise):
            h_b = l2_normalize_rows(h_v + noise * gen.normal(size=(n, dim)))
            return np.sum(h_b * h_v, axis=1)

        averaged = scores_for(base_noise / np.sqrt(80.0))
        noisy = scores_for(base_noise)

        t = SimilarityTracker(momentum=0.9, warmup_batches=1)
        for batch in averaged.reshape(40, -1):
            t = tracker_update(t, batch)
        lo, _ = confidence_interval(t)
        rate_avg = float((averaged < lo).mean())
        rate_noisy = float((noisy < lo).mean())
        assert rate_noisy >= 3.0 * max(rate_avg, 1e-9)
        assert rate_noisy > 0.1


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-0.5, 0.5), st.floats(0.0, 0.5))
def test_assign_radius_support_property(s, center, half):
    lo, hi = center - half, center + half
    r = assign_radius(s, lo, hi, R0, C)
    assert r in (R0 - C, R0, R0 + C)
    if lo <= s <= hi:
        assert r == R0
