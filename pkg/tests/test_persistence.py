from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_persistence
from primbench.persistence import persistence_pairs, persistent_peaks


def as_dict(pairs):
    return {p.index: (p.height, p.persistence) for p in pairs}


class TestExamples:
    def test_profile_two_peaks(self):
        peaks = persistent_peaks([0, 5, 1, 4, 0], 0.1)
        assert [(p.height, p.persistence) for p in peaks] == [(5, 5), (4, 3)]
        assert [p.index for p in peaks] == [(1,), (3,)]

    def test_single_nonzero_cell(self):
        grid = np.zeros((5, 5))
        grid[2, 3] = 7
        peaks = persistent_peaks(grid, 0.1)
        assert len(peaks) == 1 and peaks[0].index == (2, 3)

    def test_ratio_one_keeps_only_global_max(self):
        peaks = persistent_peaks([0, 5, 1, 4, 0, 3, 0], 1.0)
        assert len(peaks) == 1 and peaks[0].height == 5

    def test_all_zero_is_empty(self):
        assert persistent_peaks(np.zeros((4, 4)), 0.1) == []

    def test_ratio_filter(self):
        # peak 4 has persistence 3 > 0.5*5, peak 2 only 1 < 2.5
        peaks = persistent_peaks([0, 5, 1, 4, 0, 2, 1], 0.5)
        assert [p.height for p in peaks] == [5, 4]

    def test_diagonal_neighbors_connect(self):
        grid = np.array([[3, 0], [0, 2]])
        pairs = as_dict(persistence_pairs(grid))
        assert pairs == {(0, 0): (3.0, 3.0)}

    def test_periodic_axis_merges_across_seam(self):
        prof = [4, 1, 0, 1, 3]
        open_pairs = as_dict(persistence_pairs(prof))
        wrapped = as_dict(persistence_pairs(prof, periodic=(True,)))
        assert open_pairs[(4,)] == (3.0, 3.0)
        assert (4,) not in wrapped  # 3 joins 4 through the seam without a gap

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            persistent_peaks([1, 2], 0.0)


class TestOracle:
    @pytest.mark.parametrize("shape", [(17,), (6, 7), (3, 4, 5)])
    def test_random_integer_grids(self, shape):
        rng = np.random.default_rng(len(shape))
        for _ in range(40):
            grid = rng.integers(0, 6, size=shape)
            assert as_dict(persistence_pairs(grid)) == brute_force_persistence(grid)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 4)))
    def test_matches_oracle_2d(self, grid):
        assert as_dict(persistence_pairs(grid)) == brute_force_persistence(grid)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-3, 3, allow_nan=False)))
    def test_persistence_bounded_by_range(self, prof):
        pairs = persistence_pairs(prof)
        span = float(np.ptp(prof)) if len(prof) else 0.0
        for p in pairs:
            assert 0 <= p.persistence <= span
        heights = [p.height for p in pairs]
        assert heights == sorted(heights, reverse=True)
