
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdblab import correlation as corr
from cdblab.rng import substream

from oracles import naive_bp_matrix, naive_ma_matrix, naive_rank


def peak_map(positions, h=6, w=6):
    """Feature map whose per-channel smoothed peak lands on the given cells.

    A 3x3 plateau with a center bump survives the averaging window: interior
    centers win outright, border centers win on the lowest-flat-index tie."""
    f = np.zeros((len(positions), h, w), dtype=np.float32)
    for c, (i, j) in enumerate(positions):
        f[c, max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2] = 1.0
        f[c, i, j] = 5.0
    return f


class TestMaxActivation:
    def test_three_four_five_distance(self):
        m = corr.max_activation_matrix(peak_map([(0, 0), (3, 4)]))
        assert m.values.tolist() == [[0.0, 25.0], [25.0, 0.0]]
        assert m.metric is corr.Metric.MAX_ACTIVATION
        assert m.orientation is corr.Orientation.DISTANCE_ASCENDING

    def test_coincident_peaks_zero_matrix(self):
        m = corr.max_activation_matrix(peak_map([(2, 2), (2, 2), (2, 2)]))
        assert np.array_equal(m.values, np.zeros((3, 3)))

    def test_matches_composed_oracle(self, rng):
        f = rng.standard_normal((8, 6, 6)).astype(np.float32)
        got = corr.max_activation_matrix(f).values
        assert np.max(np.abs(got - naive_ma_matrix(f))) < 1e-6

    def test_smoothing_moves_peak_off_raw_argmax(self):
        # a dense cluster of moderate values beats an isolated spike after 3x3 averaging
        f = np.zeros((2, 7, 7), dtype=np.float32)
        f[0, 0, 0] = 5.0
        f[0, 4:7, 4:7] = 3.0
        f[1, 4:7, 4:7] = 1.0
        m = corr.max_activation_matrix(f)
        assert m.values[0, 1] == 0.0  # both smoothed peaks at (5,5)

    def test_degenerate_channel_count(self):
        with pytest.raises(corr.DegenerateInputError):
            corr.max_activation_matrix(np.ones((1, 4, 4), dtype=np.float32))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 50.0), chan=st.integers(0, 4))
    def test_positive_channel_scaling_invariance(self, seed, scale, chan):
        f = substream(seed, "ma-scale").standard_normal((5, 6, 6)).astype(np.float64)
        g = f.copy()
        g[chan] *= scale
        a = corr.max_activation_matrix(f).values
        b = corr.max_activation_matrix(g).values
        assert np.array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_symmetry_and_nonneg(self, seed):
        f = substream(seed, "ma-sym").standard_normal((6, 5, 5)).astype(np.float32)
        m = corr.max_activation_matrix(f).values
        assert np.max(np.abs(m - m.T)) < 1e-6
        assert np.all(m >= 0.0)
        assert np.all(np.diag(m) == 0.0)


class TestBilinearPooling:
    def test_orthogonal_rows(self):
        f = np.array([[[1.0, 0.0]], [[0.0, 1.0]]], dtype=np.float32)
        m = corr.bilinear_correlation_matrix(f)
        assert np.allclose(m.values, np.eye(2))
        assert m.orientation is corr.Orientation.SIMILARITY_DESCENDING

    def test_duplicated_channel_perfect_similarity(self, rng):
        base = rng.standard_normal((4, 4)).astype(np.float32)
        f = np.stack([base, base, rng.standard_normal((4, 4)).astype(np.float32)])
        m = corr.bilinear_correlation_matrix(f)
        assert m.values[0, 1] == pytest.approx(1.0, abs=1e-6)

    def test_hand_cosine(self):
        f = np.array([[[1.0, 2.0]], [[3.0, 4.0]]], dtype=np.float64)
        m = corr.bilinear_correlation_matrix(f)
        expected = 11.0 / (np.sqrt(5.0) * 5.0)
        assert m.values[0, 1] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.98387, abs=5e-6)

    def test_zero_norm_channel_fully_uncorrelated(self, rng):
        f = rng.standard_normal((3, 4, 4)).astype(np.float32)
        f[1] = 0.0
        m = corr.bilinear_correlation_matrix(f).values
        assert np.all(m[1] == 0.0)
        assert np.all(m[:, 1] == 0.0)

    def test_matches_naive_oracle(self, rng):
        f = rng.standard_normal((7, 5, 5)).astype(np.float32)
        got = corr.bilinear_correlation_matrix(f).values
        assert np.max(np.abs(got - naive_bp_matrix(f))) < 1e-6

    def test_degenerate_channel_count(self):
        with pytest.raises(corr.DegenerateInputError):
            corr.bilinear_correlation_matrix(np.ones((1, 2, 2), dtype=np.float32))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 50.0), chan=st.integers(0, 3))
    def test_positive_channel_scaling_invariance(self, seed, scale, chan):
        f = substream(seed, "bp-scale").standard_normal((4, 5, 5)).astype(np.float64)
        g = f.copy()
        g[chan] *= scale
        a = corr.bilinear_correlation_matrix(f).values
        b = corr.bilinear_correlation_matrix(g).values
        assert np.max(np.abs(a - b)) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_bounded_symmetric_unit_diag(self, seed):
        f = substream(seed, "bp-sym").standard_normal((5, 4, 4)).astype(np.float32)
        m = corr.bilinear_correlation_matrix(f).values
        assert np.max(np.abs(m - m.T)) < 1e-6
        assert np.all(m >= -1.0 - 1e-6)
        assert np.all(m <= 1.0 + 1e-6)
        assert np.allclose(np.diag(m), 1.0, atol=1e-5)


class TestDispatcher:
    def test_selects_metric(self, rng):
        f = rng.standard_normal((4, 5, 5)).astype(np.float32)
        assert corr.correlation_matrix(f, corr.Metric.MAX_ACTIVATION).metric is corr.Metric.MAX_ACTIVATION
        assert corr.correlation_matrix(f, corr.Metric.BILINEAR_POOLING).metric is corr.Metric.BILINEAR_POOLING


class TestRankCorrelated:
    def _matrix(self, values, metric):
        arr = np.asarray(values, dtype=np.float64)
        return corr.CorrelationMatrix(
            values=arr, metric=metric, orientation=corr.ORIENTATION_OF[metric]
        )

    def test_ma_row_example(self):
        m = self._matrix([[0, 25, 4], [25, 0, 9], [4, 9, 0]], corr.Metric.MAX_ACTIVATION)
        assert corr.rank_correlated(m, 0) == [0, 2, 1]

    def test_bp_tie_breaks_to_lower_index(self):
        m = self._matrix(
            [[1.0, 0.9, 0.9], [0.9, 1.0, 0.5], [0.9, 0.5, 1.0]], corr.Metric.BILINEAR_POOLING
        )
        assert corr.rank_correlated(m, 0) == [0, 1, 2]

    def test_ma_tie_breaks_to_lower_index(self):
        m = self._matrix([[0, 4, 4], [4, 0, 1], [4, 1, 0]], corr.Metric.MAX_ACTIVATION)
        assert corr.rank_correlated(m, 0) == [0, 1, 2]

    def test_anchor_always_first(self, rng):
        vals = rng.standard_normal((6, 6))
        vals = (vals + vals.T) / 2
        np.fill_diagonal(vals, 0.0)
        m = self._matrix(np.abs(vals), corr.Metric.MAX_ACTIVATION)
        for a in range(6):
            assert corr.rank_correlated(m, a)[0] == a

    def test_anchor_out_of_range(self):
        m = self._matrix([[0, 1], [1, 0]], corr.Metric.MAX_ACTIVATION)
        with pytest.raises(IndexError):
            corr.rank_correlated(m, 2)
        with pytest.raises(IndexError):
            corr.rank_correlated(m, -1)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), anchor=st.integers(0, 6), metric=st.sampled_from(list(corr.Metric)))
    def test_matches_sort_oracle(self, seed, anchor, metric):
        gen = substream(seed, "rank")
        raw = gen.standard_normal((7, 7))
        raw = (raw + raw.T) / 2
        if metric is corr.Metric.MAX_ACTIVATION:
            raw = np.abs(raw)
            np.fill_diagonal(raw, 0.0)
        else:
            raw = np.clip(raw, -1.0, 1.0)
            np.fill_diagonal(raw, 1.0)
        m = self._matrix(raw, metric)
        got = corr.rank_correlated(m, anchor)
        want = naive_rank(raw, anchor, descending=metric is corr.Metric.BILINEAR_POOLING)
        assert got == want


class TestCsv:
    def test_header_and_round_trip(self, rng):
        f = rng.standard_normal((5, 4, 4)).astype(np.float32)
        m = corr.correlation_matrix(f, corr.Metric.BILINEAR_POOLING)
        text = corr.correlation_to_csv(m)
        first = text.splitlines()[0]
        assert first == "bp,SimilarityDescending,5"
        back = corr.correlation_from_csv(text)
        assert back.metric is m.metric
        assert back.orientation is m.orientation
        assert np.array_equal(back.values, m.values.astype(np.float64))

    def test_round_trip_full_precision(self, rng):
        f = rng.standard_normal((4, 6, 6)).astype(np.float32)
        m = corr.correlation_matrix(f, corr.Metric.MAX_ACTIVATION)
        back = corr.correlation_from_csv(corr.correlation_to_csv(m))
        assert np.max(np.abs(back.values - m.values)) == 0.0

    def test_reparsed_symmetry(self, rng):
        f = rng.standard_normal((6, 5, 5)).astype(np.float32)
        m = corr.correlation_matrix(f, corr.Metric.BILINEAR_POOLING)
        back = corr.correlation_from_csv(corr.correlation_to_csv(m))
        assert np.max(np.abs(back.values - back.values.T)) < 1e-6

    def test_mismatched_orientation_rejected(self):
        text = "ma,SimilarityDescending,2\n0.0,1.0\n1.0,0.0\n"
        with pytest.raises(ValueError):
            corr.correlation_from_csv(text)

    def test_wrong_row_count_rejected(self):
        text = "ma,DistanceAscending,3\n0.0,1.0,2.0\n1.0,0.0,1.0\n"
        with pytest.raises(ValueError):
            corr.correlation_from_csv(text)
