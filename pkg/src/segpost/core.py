"""Core array types and label/probability conversions.

All types validate their invariants at construction and freeze their
buffers afterwards, so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError

#: Label value excluded from voting and evaluation.
IGNORE_LABEL = 255

#: Per-pixel tolerance on probability row sums (accommodates float32 exports).
ROW_SUM_TOL = 1e-4


def _first_bad_pixel(mask_2d: np.ndarray) -> tuple[int, int]:
    """Row/column of the first True entry in a (H, W) violation mask."""
    flat = int(np.argmax(mask_2d))
    h, w = mask_2d.shape
    return flat // w, flat % w


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ProbMap:
    """H x W x C map of per-pixel class probabilities.

    Every value must be finite and in [0, 1], and each pixel's C values
    must sum to 1 within ``ROW_SUM_TOL``. Stored as float32 in row-major
    (row, column, class) order.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, order="C")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(
                f"probability map must be (H, W, C) with positive dims, got shape {arr.shape}"
            )
        finite = np.isfinite(arr)
        if not finite.all():
            r, c = _first_bad_pixel(~finite.all(axis=2))
            raise ValidationError(f"non-finite probability at pixel ({r}, {c})")
        in_range = (arr >= 0.0) & (arr <= 1.0)
        if not in_range.all():
            r, c = _first_bad_pixel(~in_range.all(axis=2))
            raise ValidationError(f"probability outside [0, 1] at pixel ({r}, {c})")
        sums = arr.sum(axis=2, dtype=np.float64)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            r, c = _first_bad_pixel(bad)
            raise ValidationError(
                f"class probabilities sum to {sums[r, c]:.6f} (not 1 within {ROW_SUM_TOL}) "
                f"at pixel ({r}, {c})"
            )
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """H x W map of discrete class indices with 255 as the ignore sentinel."""

    data: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if not 1 <= self.num_classes <= 255:
            raise ValidationError(
                f"num_classes must be in [1, 255], got {self.num_classes}"
            )
        arr = np.array(self.data, order="C")
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValidationError(
                f"label map must be 2-D with positive dims, got shape {arr.shape}"
            )
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValidationError(f"label map must be integer, got dtype {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValidationError("label values must fit in uint8")
            arr = arr.astype(np.uint8)
        bad = (arr >= self.num_classes) & (arr != IGNORE_LABEL)
        if bad.any():
            r, c = _first_bad_pixel(bad)
            raise ValidationError(
                f"label {int(arr[r, c])} >= num_classes={self.num_classes} at pixel ({r}, {c})"
            )
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RgbImage:
    """H x W x 3 8-bit image in row-major (row, column, channel) order."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, order="C")
        if arr.ndim != 3 or arr.shape[2] != 3 or min(arr.shape[:2]) < 1:
            raise ValidationError(f"image must be (H, W, 3), got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValidationError(f"image must be integer, got dtype {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValidationError("image values must fit in uint8")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class UnaryMap:
    """H x W x C map of per-pixel negative log-probabilities.

    Values are finite and non-negative. Because the unaries derive from a
    valid probability distribution, at least one class per pixel must have
    probability >= 1/C, so the per-pixel minimum unary cannot exceed
    ln(C) (plus the row-sum tolerance).
    """

    data: np.ndarray

    # ln(1 / (1 - ROW_SUM_TOL)) slack plus the validation margin.
    _MIN_UNARY_SLACK = 2e-4

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, order="C")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(
                f"unary map must be (H, W, C) with positive dims, got shape {arr.shape}"
            )
        finite = np.isfinite(arr)
        if not finite.all():
            r, c = _first_bad_pixel(~finite.all(axis=2))
            raise ValidationError(f"non-finite unary at pixel ({r}, {c})")
        if (arr < 0).any():
            r, c = _first_bad_pixel((arr < 0).any(axis=2))
            raise ValidationError(f"negative unary at pixel ({r}, {c})")
        limit = float(np.log(arr.shape[2])) + self._MIN_UNARY_SLACK
        mins = arr.min(axis=2)
        bad = mins > limit
        if bad.any():
            r, c = _first_bad_pixel(bad)
            raise ValidationError(
                f"minimum unary {mins[r, c]:.6f} exceeds ln(C)={limit:.6f} at pixel "
                f"({r}, {c}); values cannot derive from a valid distribution"
            )
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]


def argmax_labels(probs: ProbMap) -> LabelMap:
    """Decode a probability map into hard labels.

    Ties break to the lowest class index, so the result is deterministic
    and independent of evaluation order. Never produces ignore sentinels.
    """
    labels = np.argmax(probs.data, axis=2).astype(np.uint8)
    return LabelMap(labels, probs.num_classes)


def unary_from_probs(probs: ProbMap, clamp_floor: float = 1e-8) -> UnaryMap:
    """Convert probabilities to negative-log unaries, clamping at ``clamp_floor``.

    The floor bounds the largest unary at -ln(clamp_floor), which keeps the
    mean-field exponentials in range downstream.
    """
    if not 0.0 < clamp_floor < 1.0 / probs.num_classes:
        raise ParameterError(
            f"clamp_floor must be in (0, 1/C) = (0, {1.0 / probs.num_classes:.6g}), "
            f"got {clamp_floor}"
        )
    u = -np.log(np.maximum(probs.data, np.float32(clamp_floor)))
    return UnaryMap(u)


def probs_from_labels(labels: LabelMap, smoothing: float = 0.0) -> ProbMap:
    """Expand hard labels into a (possibly smoothed) one-hot probability map.

    The label class receives 1 - smoothing and every other class
    smoothing / (C - 1), so rows sum to 1. Ignore sentinels are rejected:
    they carry no distribution, so callers must mask them out first.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ParameterError(f"smoothing must be in [0, 1), got {smoothing}")
    c = labels.num_classes
    if c == 1 and smoothing != 0.0:
        raise ParameterError("smoothing must be 0 when there is a single class")
    if (labels.data == IGNORE_LABEL).any():
        r, col = _first_bad_pixel(labels.data == IGNORE_LABEL)
        raise ValidationError(
            f"ignore sentinel at pixel ({r}, {col}); mask ignore pixels before expanding "
            "labels to probabilities"
        )
    off = smoothing / (c - 1) if c > 1 else 0.0
    out = np.full((labels.height, labels.width, c), off, dtype=np.float32)
    np.put_along_axis(out, labels.data[:, :, None].astype(np.intp), 1.0 - smoothing, axis=2)
    return ProbMap(out)
