"""Combine per-pixel predictions of multiple models into one map.

Hard majority voting on label maps is the primary path; ``average_probs``
offers a soft alternative that blends probability maps instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import IGNORE_LABEL, LabelMap, ProbMap
from .errors import ParameterError, ShapeMismatchError, ValidationError

TIE_BREAKS = ("priority", "lowest_class")


@dataclass(frozen=True)
class EnsembleConfig:
    """Member identities in priority order (highest first) and the tie policy.

    ``priority`` resolves a tied pixel to the tied label voted by the
    earliest member; ``lowest_class`` picks the smallest tied class index.
    """

    member_names: tuple[str, ...]
    tie_break: str = "priority"

    def __post_init__(self) -> None:
        if not self.member_names:
            raise ValidationError("ensemble needs at least one member")
        if len(set(self.member_names)) != len(self.member_names):
            raise ValidationError(f"member names must be unique, got {self.member_names}")
        if self.tie_break not in TIE_BREAKS:
            raise ParameterError(f"tie_break must be one of {TIE_BREAKS}, got {self.tie_break!r}")


def _check_members(members: Sequence[LabelMap] | Sequence[ProbMap], names: Sequence[str]) -> None:
    if len(members) != len(names):
        raise ValidationError(
            f"{len(members)} member maps for {len(names)} configured names"
        )
    ref = members[0]
    for m, name in zip(members, names):
        if (m.height, m.width, m.num_classes) != (ref.height, ref.width, ref.num_classes):
            raise ShapeMismatchError(
                f"member {name!r} is {m.height}x{m.width} with {m.num_classes} classes, "
                f"expected {ref.height}x{ref.width} with {ref.num_classes}"
            )


def vote(members: Sequence[LabelMap], config: EnsembleConfig) -> LabelMap:
    """Per-pixel majority vote across members.

    Ignore-sentinel votes are excluded from counting; a pixel where every
    member abstains stays ignore. Ties resolve per ``config.tie_break``.
    The result is deterministic and independent of evaluation order.
    """
    _check_members(members, config.member_names)
    c = members[0].num_classes
    h, w = members[0].height, members[0].width
    n = h * w

    counts = np.zeros(n * c, dtype=np.int32)
    pixel_base = np.arange(n, dtype=np.int64) * c
    for m in members:
        lbl = m.data.ravel().astype(np.int64)
        valid = lbl != IGNORE_LABEL
        counts += np.bincount(pixel_base[valid] + lbl[valid], minlength=n * c).astype(np.int32)
    counts = counts.reshape(h, w, c)

    total = counts.sum(axis=2)
    max_count = counts.max(axis=2)
    # argmax picks the first maximum, i.e. the lowest tied class index.
    winner = np.argmax(counts, axis=2).astype(np.uint8)

    if config.tie_break == "priority":
        tied = (counts == max_count[:, :, None]).sum(axis=2) > 1
        undecided = tied & (total > 0)
        for m in members:
            if not undecided.any():
                break
            lbl = m.data
            voted_count = np.take_along_axis(
                counts, np.minimum(lbl, c - 1)[:, :, None].astype(np.intp), axis=2
            )[:, :, 0]
            take = undecided & (lbl != IGNORE_LABEL) & (voted_count == max_count)
            winner[take] = lbl[take]
            undecided &= ~take

    winner[total == 0] = IGNORE_LABEL
    return LabelMap(winner, c)


def average_probs(members: Sequence[ProbMap], weights: Sequence[float] | None = None) -> ProbMap:
    """Per-pixel convex combination of probability maps, renormalized to sum 1.

    Weights default to uniform; they must be non-negative with positive sum.
    """
    if not members:
        raise ValidationError("average_probs needs at least one member")
    if weights is None:
        weights = [1.0] * len(members)
    if len(weights) != len(members):
        raise ParameterError(f"{len(weights)} weights for {len(members)} members")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or not np.isfinite(w).all():
        raise ParameterError(f"weights must be finite and non-negative, got {list(weights)}")
    if w.sum() <= 0:
        raise ParameterError("weights must not all be zero")
    ref = members[0]
    for i, m in enumerate(members[1:], start=1):
        if m.data.shape != ref.data.shape:
            raise ShapeMismatchError(
                f"member {i} has shape {m.data.shape}, expected {ref.data.shape}"
            )
    acc = np.zeros(ref.data.shape, dtype=np.float64)
    for wk, m in zip(w, members):
        if wk != 0.0:
            acc += wk * m.data
    acc /= acc.sum(axis=2, keepdims=True)
    return ProbMap(acc.astype(np.float32))
