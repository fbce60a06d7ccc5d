"""Voting against a brute-force counting oracle and soft averaging."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segpost import (
    IGNORE_LABEL,
    EnsembleConfig,
    LabelMap,
    average_probs,
    vote,
)
from segpost.errors import ParameterError, ShapeMismatchError, ValidationError

from conftest import random_labelmap, random_probmap


def vote_oracle(votes: list, tie_break: str) -> int:
    """Count votes for one pixel the slow way, honoring the tie policy."""
    valid = [v for v in votes if v != IGNORE_LABEL]
    if not valid:
        return IGNORE_LABEL
    counts = {}
    for v in valid:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    tied = sorted(c for c, n in counts.items() if n == top)
    if len(tied) == 1 or tie_break == "lowest_class":
        return tied[0]
    for v in votes:
        if v in tied:
            return v
    raise AssertionError("unreachable")


def members_for(rng, k, h, w, c, ignore_rate=0.15):
    return [random_labelmap(rng, h, w, c, ignore_rate) for _ in range(k)]


class TestVote:
    def test_single_member_identity(self):
        rng = np.random.default_rng(0)
        m = random_labelmap(rng, 6, 6, 4, ignore_rate=0.1)
        out = vote([m], EnsembleConfig(("only",)))
        assert np.array_equal(out.data, m.data)

    def test_strict_majority(self):
        ms = [LabelMap(np.array([[v]], dtype=np.uint8), 3) for v in (0, 0, 1)]
        out = vote(ms, EnsembleConfig(("a", "b", "c")))
        assert out.data[0, 0] == 0

    def test_priority_tie_goes_to_earliest_member(self):
        ms = [LabelMap(np.array([[2]], dtype=np.uint8), 6),
              LabelMap(np.array([[5]], dtype=np.uint8), 6)]
        out = vote(ms, EnsembleConfig(("A", "B"), tie_break="priority"))
        assert out.data[0, 0] == 2

    def test_lowest_class_tie(self):
        ms = [LabelMap(np.array([[5]], dtype=np.uint8), 6),
              LabelMap(np.array([[2]], dtype=np.uint8), 6)]
        out = vote(ms, EnsembleConfig(("A", "B"), tie_break="lowest_class"))
        assert out.data[0, 0] == 2

    def test_all_ignore_yields_ignore(self):
        ms = [LabelMap(np.full((1, 1), 255, dtype=np.uint8), 3) for _ in range(3)]
        out = vote(ms, EnsembleConfig(("a", "b", "c")))
        assert out.data[0, 0] == IGNORE_LABEL

    @pytest.mark.parametrize("tie_break", ["priority", "lowest_class"])
    def test_500_cases_match_oracle(self, tie_break):
        rng = np.random.default_rng(11)
        for _ in range(250):
            k = int(rng.integers(1, 8))
            c = int(rng.integers(2, 11))
            ms = members_for(rng, k, 2, 3, c)
            cfg = EnsembleConfig(tuple(f"m{i}" for i in range(k)), tie_break=tie_break)
            out = vote(ms, cfg)
            for r in range(2):
                for col in range(3):
                    votes = [int(m.data[r, col]) for m in ms]
                    assert out.data[r, col] == vote_oracle(votes, tie_break)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance_when_tie_free(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        ms = members_for(rng, k, 4, 4, 3)
        cfg = EnsembleConfig(tuple(f"m{i}" for i in range(k)))
        out = vote(ms, cfg)
        tied = np.zeros((4, 4), dtype=bool)
        for r in range(4):
            for col in range(4):
                votes = [int(m.data[r, col]) for m in ms]
                valid = [v for v in votes if v != IGNORE_LABEL]
                counts = {v: valid.count(v) for v in set(valid)}
                if counts and list(counts.values()).count(max(counts.values())) > 1:
                    tied[r, col] = True
        perm = rng.permutation(k)
        out2 = vote([ms[i] for i in perm], cfg)
        assert np.array_equal(out.data[~tied], out2.data[~tied])

    def test_duplicate_member_keeps_strict_majorities(self):
        rng = np.random.default_rng(12)
        ms = members_for(rng, 3, 5, 5, 4, ignore_rate=0.0)
        cfg3 = EnsembleConfig(("a", "b", "c"))
        out3 = vote(ms, cfg3)
        strict = np.zeros((5, 5), dtype=bool)
        for r in range(5):
            for col in range(5):
                votes = [int(m.data[r, col]) for m in ms]
                win = int(out3.data[r, col])
                strict[r, col] = votes.count(win) * 2 > len(votes)
        out4 = vote(ms + [ms[0]], EnsembleConfig(("a", "b", "c", "a2")))
        won_by_a = strict & (out3.data == ms[0].data)
        assert np.array_equal(out3.data[won_by_a], out4.data[won_by_a])

    def test_shape_mismatch_names_member(self):
        ms = [LabelMap(np.zeros((2, 2), dtype=np.uint8), 3),
              LabelMap(np.zeros((2, 3), dtype=np.uint8), 3)]
        with pytest.raises(ShapeMismatchError, match="b"):
            vote(ms, EnsembleConfig(("a", "b")))

    def test_config_requires_unique_names(self):
        with pytest.raises(ValidationError):
            EnsembleConfig(("a", "a"))


class TestAverageProbs:
    def test_identical_members_fixed_point(self):
        rng = np.random.default_rng(20)
        pm = random_probmap(rng, 4, 4, 3)
        out = average_probs([pm, pm, pm])
        assert np.allclose(out.data, pm.data, atol=1e-7)

    def test_degenerate_weight_picks_first(self):
        rng = np.random.default_rng(21)
        a, b = random_probmap(rng, 3, 3, 4), random_probmap(rng, 3, 3, 4)
        out = average_probs([a, b], weights=(1.0, 0.0))
        assert np.allclose(out.data, a.data, atol=1e-7)

    def test_uniform_mean_matches_scalar_loop(self):
        rng = np.random.default_rng(22)
        ms = [random_probmap(rng, 3, 4, 3) for _ in range(3)]
        out = average_probs(ms)
        for r in range(3):
            for c in range(4):
                for k in range(3):
                    mean = sum(m.data[r, c, k] for m in ms) / 3.0
                    assert abs(out.data[r, c, k] - mean) < 1e-6

    def test_rows_renormalized(self):
        rng = np.random.default_rng(23)
        ms = [random_probmap(rng, 5, 5, 6) for _ in range(4)]
        out = average_probs(ms, weights=(0.1, 2.0, 0.4, 1.5))
        assert np.allclose(out.data.sum(axis=2), 1.0, atol=1e-6)

    def test_all_zero_weights_rejected(self):
        rng = np.random.default_rng(24)
        ms = [random_probmap(rng, 2, 2, 2) for _ in range(2)]
        with pytest.raises(ParameterError):
            average_probs(ms, weights=(0.0, 0.0))
