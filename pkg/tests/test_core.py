"""Core type invariants and the argmax/unary/one-hot conversions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segpost import (
    IGNORE_LABEL,
    LabelMap,
    ProbMap,
    RgbImage,
    UnaryMap,
    argmax_labels,
    probs_from_labels,
    unary_from_probs,
)
from segpost.errors import ParameterError, ValidationError

from conftest import random_labelmap, random_probmap


class TestProbMap:
    def test_accepts_valid_rows(self):
        pm = ProbMap(np.array([[[0.25, 0.75]]]))
        assert pm.height == 1 and pm.width == 1 and pm.num_classes == 2

    def test_row_sum_tolerance_accepts_small_drift(self):
        ProbMap(np.array([[[0.5, 0.5 + 9e-5]]]))

    def test_row_sum_tolerance_rejects_large_drift(self):
        with pytest.raises(ValidationError):
            ProbMap(np.array([[[0.5, 0.502]]]))

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            ProbMap(np.array([[[-0.1, 1.1]]]))

    def test_rejects_nan_and_inf(self):
        with pytest.raises(ValidationError):
            ProbMap(np.array([[[np.nan, 1.0]]]))
        with pytest.raises(ValidationError):
            ProbMap(np.array([[[np.inf, 0.0]]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValidationError):
            ProbMap(np.ones((2, 2)))


class TestLabelMap:
    def test_accepts_ignore_sentinel(self):
        lm = LabelMap(np.array([[0, 255]], dtype=np.uint8), 3)
        assert lm.data[0, 1] == IGNORE_LABEL

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            LabelMap(np.array([[5]], dtype=np.uint8), 3)

    def test_rejects_too_many_classes(self):
        with pytest.raises(ValidationError):
            LabelMap(np.zeros((1, 1), dtype=np.uint8), 256)


class TestRgbImage:
    def test_requires_three_channels(self):
        with pytest.raises(ValidationError):
            RgbImage(np.zeros((2, 2, 4), dtype=np.uint8))


class TestArgmaxLabels:
    def test_forced_maximum(self):
        lm = argmax_labels(ProbMap(np.array([[[1.0, 0.0]]])))
        assert lm.data[0, 0] == 0

    def test_tie_breaks_to_lowest_index(self):
        lm = argmax_labels(ProbMap(np.array([[[0.25, 0.25, 0.25, 0.25]]])))
        assert lm.data[0, 0] == 0

    def test_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(7)
        pm = random_probmap(rng, 4, 4, 3)
        got = argmax_labels(pm)
        for r in range(4):
            for c in range(4):
                best, best_p = 0, pm.data[r, c, 0]
                for k in range(1, 3):
                    if pm.data[r, c, k] > best_p:
                        best, best_p = k, pm.data[r, c, k]
                assert got.data[r, c] == best

    def test_produces_no_ignore(self):
        rng = np.random.default_rng(8)
        lm = argmax_labels(random_probmap(rng, 6, 6, 5))
        assert not np.any(lm.data == IGNORE_LABEL)


class TestUnaryFromProbs:
    def test_certainty_gives_zero(self):
        pm = ProbMap(np.array([[[1.0, 0.0]]]))
        um = unary_from_probs(pm)
        assert um.data[0, 0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_half_gives_ln_two(self):
        pm = ProbMap(np.array([[[0.5, 0.5]]]))
        um = unary_from_probs(pm)
        assert um.data[0, 0, 0] == pytest.approx(math.log(2.0), abs=1e-6)

    def test_zero_clamps_to_floor(self):
        pm = ProbMap(np.array([[[1.0, 0.0]]]))
        um = unary_from_probs(pm, clamp_floor=1e-8)
        assert um.data[0, 0, 1] == pytest.approx(-math.log(1e-8), abs=1e-5)

    def test_monotone_decreasing_in_p(self):
        pm = ProbMap(np.array([[[0.1, 0.3, 0.6]]]))
        um = unary_from_probs(pm)
        assert um.data[0, 0, 0] > um.data[0, 0, 1] > um.data[0, 0, 2]

    def test_clamp_floor_out_of_range(self):
        pm = ProbMap(np.array([[[0.5, 0.5]]]))
        with pytest.raises(ParameterError):
            unary_from_probs(pm, clamp_floor=0.0)
        with pytest.raises(ParameterError):
            unary_from_probs(pm, clamp_floor=0.6)

    def test_unary_map_rejects_negative(self):
        with pytest.raises(ValidationError):
            UnaryMap(np.array([[[-0.5, 0.5]]]))


class TestProbsFromLabels:
    def test_one_hot(self):
        lm = LabelMap(np.array([[2]], dtype=np.uint8), 3)
        pm = probs_from_labels(lm)
        assert pm.data[0, 0].tolist() == [0.0, 0.0, 1.0]

    def test_smoothing_split(self):
        lm = LabelMap(np.array([[0]], dtype=np.uint8), 2)
        pm = probs_from_labels(lm, smoothing=0.1)
        assert pm.data[0, 0] == pytest.approx([0.9, 0.1], abs=1e-7)

    def test_rejects_ignore(self):
        lm = LabelMap(np.array([[255]], dtype=np.uint8), 3)
        with pytest.raises(ValidationError, match="mask"):
            probs_from_labels(lm)

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.4))
    @settings(max_examples=50, deadline=None)
    def test_argmax_round_trip(self, seed, eps):
        rng = np.random.default_rng(seed)
        lm = random_labelmap(rng, 5, 7, 4)
        back = argmax_labels(probs_from_labels(lm, smoothing=eps))
        assert np.array_equal(back.data, lm.data)
