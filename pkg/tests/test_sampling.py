from math import comb

import numpy as np
import pytest

from trn.errors import CombinatorialLimitError, InputError
from trn.sampling import (
    SamplingPlan,
    enumerate_tuples,
    segment_bounds,
    segment_sample,
    subsample_tuples,
    tuples_per_video,
)


def center_plan(n_frames):
    return SamplingPlan(num_frames=n_frames, subsamples=1, mode="center")


def random_plan(n_frames, k=3):
    return SamplingPlan(num_frames=n_frames, subsamples=k, mode="random")


class TestSegmentSample:
    def test_one_frame_per_segment(self):
        assert segment_sample(8, center_plan(8)) == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_midpoints_of_length_two_segments(self):
        assert segment_sample(16, center_plan(8)) == [1, 3, 5, 7, 9, 11, 13, 15]

    def test_short_video_reuses_earlier_index(self):
        assert segment_sample(3, center_plan(8)) == [0, 1, 2, 2, 2, 2, 2, 2]

    def test_zero_length_rejected(self):
        with pytest.raises(InputError):
            segment_sample(0, center_plan(4))

    def test_random_indices_stay_in_their_segments(self):
        # independent boundary oracle: cumulative near-equal lengths with the
        # remainder spread over the leading segments
        n, N = 100, 8
        base, extra = divmod(n, N)
        starts, s = [], 0
        for i in range(N):
            starts.append(s)
            s += base + (1 if i < extra else 0)
        ends = starts[1:] + [n]
        for seed in range(200):
            idx = segment_sample(n, random_plan(N), np.random.default_rng(seed))
            for i, frame in enumerate(idx):
                assert starts[i] <= frame < ends[i]

    def test_center_mode_is_pure_function(self):
        for n in (1, 5, 8, 33, 100):
            a = segment_sample(n, center_plan(8))
            b = segment_sample(n, center_plan(8))
            assert a == b

    def test_random_mode_requires_generator(self):
        with pytest.raises(InputError):
            segment_sample(10, random_plan(4))

    def test_indices_non_decreasing(self):
        for seed in range(50):
            idx = segment_sample(37, random_plan(8), np.random.default_rng(seed))
            assert all(a <= b for a, b in zip(idx, idx[1:]))

    def test_bounds_cover_video_exactly(self):
        for n in (1, 7, 8, 9, 100):
            bounds = segment_bounds(n, 8)
            assert sum(length for _, length in bounds) == n
            assert bounds[0][0] == 0


class TestEnumerateTuples:
    def test_four_choose_two(self):
        combos = enumerate_tuples(4, 2)
        assert len(combos) == 6
        assert combos[0] == (0, 1)
        assert combos[-1] == (2, 3)

    def test_eight_choose_three_count(self):
        assert len(enumerate_tuples(8, 3)) == 56

    def test_lexicographic_and_duplicate_free(self):
        combos = enumerate_tuples(6, 3)
        assert combos == sorted(set(combos))

    def test_combinatorial_guard(self):
        with pytest.raises(CombinatorialLimitError):
            enumerate_tuples(17, 3)

    def test_scale_bounds(self):
        with pytest.raises(InputError):
            enumerate_tuples(4, 1)
        with pytest.raises(InputError):
            enumerate_tuples(4, 5)


class TestSubsampleTuples:
    def test_full_scale_returns_single_full_set(self):
        for k in (1, 3, 100):
            out = subsample_tuples(range(8), 8, k, np.random.default_rng(0))
            assert out == [tuple(range(8))]

    def test_k_at_least_total_exhausts_combinations(self):
        out = subsample_tuples(range(4), 2, 10)
        assert out == enumerate_tuples(4, 2)

    def test_distinct_and_sorted_over_many_seeds(self):
        for seed in range(1000):
            out = subsample_tuples(range(8), 3, 3, np.random.default_rng(seed))
            assert len(out) == 3
            assert len(set(out)) == 3
            for combo in out:
                assert list(combo) == sorted(combo)

    def test_deterministic_given_seed(self):
        a = subsample_tuples(range(8), 4, 3, np.random.default_rng(99))
        b = subsample_tuples(range(8), 4, 3, np.random.default_rng(99))
        assert a == b

    def test_outputs_contained_in_enumeration(self):
        universe = set(enumerate_tuples(8, 3))
        for seed in range(200):
            out = subsample_tuples(range(8), 3, 5, np.random.default_rng(seed))
            assert set(out) <= universe

    def test_maps_through_frame_positions(self):
        frames = [4, 9, 13, 20]
        out = subsample_tuples(frames, 2, 100)
        assert out[0] == (4, 9)
        assert out[-1] == (13, 20)

    def test_scale_above_count_rejected(self):
        with pytest.raises(InputError):
            subsample_tuples(range(4), 5, 3, np.random.default_rng(0))

    def test_subsample_equals_enumeration_for_all_small_cases(self):
        for N in range(2, 9):
            for d in range(2, N + 1):
                got = subsample_tuples(range(N), d, comb(N, d))
                assert got == enumerate_tuples(N, d)


class TestBudget:
    def test_default_plan_budget_is_nineteen(self):
        # scales 2..8 at k=3: six scales of 3 subsets plus the single full set
        plan = SamplingPlan(num_frames=8, subsamples=3)
        assert tuples_per_video(plan) == 19
        assert 3 * (8 - 2) + 1 == 19

    def test_emitted_tuples_strictly_increasing(self):
        rng = np.random.default_rng(5)
        for d in range(2, 9):
            for combo in subsample_tuples(range(8), d, 3, rng):
                assert all(a < b for a, b in zip(combo, combo[1:]))

    def test_plan_validation(self):
        with pytest.raises(InputError):
            SamplingPlan(num_frames=1)
        with pytest.raises(InputError):
            SamplingPlan(subsamples=0)
        with pytest.raises(InputError):
            SamplingPlan(mode="middle")
