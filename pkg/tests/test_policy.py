"""Selection rules and the end-of-line compression pipeline."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linear_kv.cache import VisualKVCache
from linear_kv.errors import LinearKVError
from linear_kv.grid import BudgetConfig, GridSpec
from linear_kv.oracles import bottom_k_reference, saliency_reference
from linear_kv.policy import (
    AttentionMassTracker,
    GuideQueue,
    LineGuidedPolicy,
    bottom_k,
    saliency,
    should_compress,
)

SPEC_8 = GridSpec(8, 8)
FIG_CFG = BudgetConfig(Fraction(3, 8), 24, 8, 1)


class TestSaliency:
    def test_orthogonal_keys_score_uniformly(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        keys = np.eye(4)[1:]  # three keys, all orthogonal to q
        np.testing.assert_allclose(saliency(q, keys), [1 / 3] * 3, atol=1e-12)

    def test_scores_form_a_distribution(self):
        rng = np.random.default_rng(5)
        scores = saliency(rng.normal(size=(8, 6)), rng.normal(size=(20, 6)))
        assert scores.sum() == pytest.approx(1.0)
        assert ((scores >= 0) & (scores <= 1)).all()

    def test_matches_per_query_reference(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            w = int(rng.integers(1, 9))
            m = int(rng.integers(1, 17))
            d = int(rng.integers(1, 9))
            guide = rng.normal(size=(w, d))
            keys = rng.normal(size=(m, d))
            scale = 1.0 / np.sqrt(d)
            expected = saliency_reference(guide.tolist(), keys.tolist(), scale)
            np.testing.assert_allclose(saliency(guide, keys), expected, atol=1e-9)

    def test_empty_guide_rejected(self):
        with pytest.raises(LinearKVError) as err:
            saliency(np.empty((0, 4)), np.ones((3, 4)))
        assert err.value.code == "guide-queue-empty"

    def test_empty_mid_rejected(self):
        with pytest.raises(LinearKVError) as err:
            saliency(np.ones((2, 4)), np.empty((0, 4)))
        assert err.value.code == "empty-mid-region"

    def test_width_mismatch_rejected(self):
        with pytest.raises(LinearKVError) as err:
            saliency(np.ones((2, 4)), np.ones((3, 5)))
        assert err.value.code == "shape-mismatch"


class TestBottomK:
    def test_picks_smallest(self):
        assert bottom_k([0.4, 0.1, 0.3, 0.2], 2).tolist() == [1, 3]

    def test_ties_go_to_the_older_entry(self):
        assert bottom_k([0.5, 0.2, 0.2, 0.2], 2).tolist() == [1, 2]

    def test_all_equal_takes_a_prefix(self):
        assert bottom_k([0.25] * 4, 3).tolist() == [0, 1, 2]

    def test_k_equals_size(self):
        assert bottom_k([3.0, 1.0, 2.0], 3).tolist() == [0, 1, 2]

    def test_k_too_large_rejected(self):
        with pytest.raises(LinearKVError) as err:
            bottom_k([1.0, 2.0], 3)
        assert err.value.code == "insufficient-mid-tokens"

    @settings(max_examples=100)
    @given(
        st.lists(st.sampled_from([0.0, 0.1, 0.1, 0.2, 0.5, 1.0]), min_size=1, max_size=24),
        st.data(),
    )
    def test_matches_full_sort_reference(self, scores, data):
        k = data.draw(st.integers(0, len(scores)))
        assert bottom_k(scores, k).tolist() == bottom_k_reference(scores, k)


class TestShouldCompress:
    def test_fig_cadence_truth_table(self):
        # store grows by one line per line until compression holds it at the
        # budget; events fire at the ends of lines 3..7 only
        length = 0
        fired = []
        for line in range(1, 9):
            length += 8
            if should_compress(FIG_CFG, SPEC_8, line, length):
                fired.append(line)
                length = FIG_CFG.budget - 8
        assert fired == [3, 4, 5, 6, 7]

    def test_full_budget_never_compresses(self):
        cfg = BudgetConfig(Fraction(1), 64, 8, 2)
        assert not any(should_compress(cfg, SPEC_8, line, line * 8) for line in range(1, 9))

    def test_final_line_never_compresses(self):
        assert not should_compress(FIG_CFG, SPEC_8, 8, 24)


def build_polarized_cache(spec, cfg, line, low_positions, kv_heads=1, head_dim=4):
    """Store filled through ``line`` where keys at ``low_positions`` point away
    from the probe direction and everything else points along it."""
    cache = VisualKVCache(1, kv_heads, head_dim)
    probe = np.zeros(head_dim)
    probe[0] = 1.0
    for head in range(kv_heads):
        lows = low_positions[head] if isinstance(low_positions, dict) else low_positions
        for p in range(line * spec.width):
            direction = -10.0 if p in lows else 10.0
            cache.append(0, head, probe * direction, np.full(head_dim, float(p)), p)
    return cache, probe


class TestLineGuidedPipeline:
    SPEC = GridSpec(8, 8)
    CFG = BudgetConfig(Fraction(1, 2), 32, 8, 1)

    def test_constructed_scores_pick_the_planned_set(self):
        target = {8, 10, 11, 13, 14, 15, 17, 19}
        cache, probe = build_polarized_cache(self.SPEC, self.CFG, 4, target)
        policy = LineGuidedPolicy()
        policy.bind(1, 1, 1, self.SPEC, self.CFG, seed=0)
        for _ in range(8):
            policy.observe_queries(0, 0, probe)
        events = policy.end_of_line(cache, line=4)
        assert len(events) == 1
        assert events[0].evicted_positions == sorted(target)
        assert events[0].post_len == self.CFG.budget - self.SPEC.width
        survivors = cache.positions(0, 0).tolist()
        assert survivors == [p for p in range(32) if p not in target]

    def test_heads_evict_independently(self):
        lows = {0: {8, 9, 10, 11, 12, 13, 14, 15}, 1: {16, 17, 18, 19, 20, 21, 22, 23}}
        cache, probe = build_polarized_cache(self.SPEC, self.CFG, 4, lows, kv_heads=2)
        policy = LineGuidedPolicy()
        policy.bind(1, 2, 1, self.SPEC, self.CFG, seed=0)
        for _ in range(8):
            policy.observe_queries(0, 0, probe)
            policy.observe_queries(0, 1, probe)
        events = policy.end_of_line(cache, line=4)
        by_head = {e.head: e for e in events}
        assert by_head[0].evicted_positions == sorted(lows[0])
        assert by_head[1].evicted_positions == sorted(lows[1])
        assert cache.visual_len(0, 0) == cache.visual_len(0, 1) == 24

    def test_empty_mid_region_errors(self):
        cache, probe = build_polarized_cache(SPEC_8, FIG_CFG, 3, set())
        degenerate = BudgetConfig(Fraction(3, 8), 24, 8, 2)
        policy = LineGuidedPolicy()
        policy.bind(1, 1, 1, SPEC_8, degenerate, seed=0)
        for _ in range(8):
            policy.observe_queries(0, 0, probe)
        with pytest.raises(LinearKVError) as err:
            policy.end_of_line(cache, line=3)
        assert err.value.code == "insufficient-mid-tokens"

    def test_unfilled_guide_queue_errors(self):
        cache, _ = build_polarized_cache(SPEC_8, FIG_CFG, 3, set())
        policy = LineGuidedPolicy()
        policy.bind(1, 1, 1, SPEC_8, FIG_CFG, seed=0)
        with pytest.raises(LinearKVError) as err:
            policy.end_of_line(cache, line=3)
        assert err.value.code == "guide-queue-empty"

    def test_below_budget_line_is_a_no_op(self):
        cache, probe = build_polarized_cache(SPEC_8, FIG_CFG, 2, set())
        policy = LineGuidedPolicy()
        policy.bind(1, 1, 1, SPEC_8, FIG_CFG, seed=0)
        policy.observe_queries(0, 0, probe)
        assert policy.end_of_line(cache, line=2) is None
        # the boundary still clears the guide queue
        assert policy.guide.count(0, 0) == 0


class TestGuideQueue:
    def test_concatenates_group_rows(self):
        queue = GuideQueue(1, 1, width=4)
        queue.push(0, 0, np.ones((2, 3)))
        queue.push(0, 0, np.zeros((2, 3)))
        assert queue.matrix(0, 0).shape == (4, 3)
        assert queue.count(0, 0) == 2

    def test_empty_matrix_errors(self):
        queue = GuideQueue(1, 1, width=4)
        with pytest.raises(LinearKVError) as err:
            queue.matrix(0, 0)
        assert err.value.code == "guide-queue-empty"

    def test_clear_resets_every_head(self):
        queue = GuideQueue(2, 2, width=2)
        for l in range(2):
            for h in range(2):
                queue.push(l, h, np.ones(3))
        queue.clear()
        assert all(queue.count(l, h) == 0 for l in range(2) for h in range(2))


class TestAttentionMassTracker:
    def test_uniform_step_gives_equal_shares(self):
        tracker = AttentionMassTracker(1, 1)
        for _ in range(5):
            tracker.on_append(0, 0)
        tracker.add(0, 0, np.full(5, 1 / 5))
        np.testing.assert_allclose(tracker.mass(0, 0), [0.2] * 5, atol=1e-12)

    def test_alignment_through_append_and_compact(self):
        tracker = AttentionMassTracker(1, 1)
        for i in range(4):
            tracker.on_append(0, 0)
        tracker.add(0, 0, np.array([0.4, 0.3, 0.2, 0.1]))
        tracker.on_compact(0, 0, [1, 2])
        np.testing.assert_allclose(tracker.mass(0, 0), [0.4, 0.1])
        tracker.on_append(0, 0)
        tracker.add(0, 0, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(tracker.mass(0, 0), [0.4, 0.1, 1.0])
