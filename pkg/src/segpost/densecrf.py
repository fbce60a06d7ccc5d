"""Dense fully-connected CRF refinement by parallel mean-field inference.

The pairwise energy couples every pixel pair through two Gaussian kernels:
an appearance kernel over (position, color) that encourages nearby,
similarly colored pixels to share a label, and a smoothness kernel over
position alone that removes small isolated regions. Label compatibility is
the Potts model. One mean-field step updates all pixels simultaneously:

    message m_i(l) = sum over kernels of w_k * (filter_k(Q)_i(l) - Q_i(l))
    penalty_i(l)   = sum_{l' != l} m_i(l')
    Q'_i(l)       propto exp(-unary_i(l) - penalty_i(l))

Both filter backends include the j = i self term with kernel value 1
(hence the subtraction) and are divided by the filtered all-ones field
before use, which keeps message magnitudes resolution-independent.
The ``exact`` backend evaluates all pairs in O(N^2) and serves as the
oracle for the permutohedral ``lattice`` backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .core import ProbMap, RgbImage, UnaryMap, unary_from_probs
from .errors import NumericsError, ParameterError, ShapeMismatchError
from .permutohedral import FeatureSet, PermutohedralLattice

FILTER_BACKENDS = ("exact", "lattice")
FEATURE_KINDS = ("appearance", "smoothness")

# Cap on the pairwise-distance block so the exact filter never materializes
# more than ~64 MB at once.
_EXACT_BLOCK_ELEMENTS = 2**23


@dataclass(frozen=True)
class CrfParams:
    """Kernel weights and widths plus the mean-field iteration count.

    theta_alpha/theta_gamma are spatial widths in pixels; theta_beta is a
    color width in 0-255 intensity units. Defaults are the widely used
    values for this kernel family and are meant to be overridden per run.
    """

    w_appearance: float = 10.0
    theta_alpha: float = 80.0
    theta_beta: float = 13.0
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    iterations: int = 10
    clamp_floor: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("theta_alpha", "theta_beta", "theta_gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be strictly positive, got {v}")
        for name in ("w_appearance", "w_smooth"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.clamp_floor < 1.0:
            raise ParameterError(f"clamp_floor must be in (0, 1), got {self.clamp_floor}")


def build_features(image: RgbImage, kind: str, params: CrfParams) -> FeatureSet:
    """Per-pixel feature vectors for one kernel.

    appearance: (x/theta_alpha, y/theta_alpha, r/theta_beta, g/theta_beta,
    b/theta_beta); smoothness: (x/theta_gamma, y/theta_gamma). x is the
    column index, y the row index, colors raw 0-255 values.
    """
    if kind not in FEATURE_KINDS:
        raise ParameterError(f"kind must be one of {FEATURE_KINDS}, got {kind!r}")
    h, w = image.height, image.width
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float32)
    if kind == "appearance":
        rgb = image.data.astype(np.float32) / np.float32(params.theta_beta)
        feats = np.stack(
            [cols / params.theta_alpha, rows / params.theta_alpha]
            + [rgb[:, :, k] for k in range(3)],
            axis=-1,
        )
    else:
        feats = np.stack([cols / params.theta_gamma, rows / params.theta_gamma], axis=-1)
    return FeatureSet(feats.reshape(h * w, -1), h, w)


def gaussian_filter_exact(features: FeatureSet, values: np.ndarray) -> np.ndarray:
    """All-pairs Gaussian filter: out_i = sum_j exp(-||f_i - f_j||^2 / 2) v_j.

    The sum runs over every j including j = i. O(N^2) time, blocked to
    bound memory; this is the oracle the lattice backend is checked against.
    """
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    f = features.features.astype(np.float64)
    n = features.num_points
    if values.shape[0] != n:
        raise ShapeMismatchError(f"{values.shape[0]} value rows for {n} feature points")
    out = np.empty((n, values.shape[1]))
    block = max(1, _EXACT_BLOCK_ELEMENTS // n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = cdist(f[start:stop], f, "sqeuclidean")
        out[start:stop] = np.exp(-0.5 * d2) @ values
    return out[:, 0] if squeeze else out


class _KernelFilter:
    """One pairwise kernel: a filter closure plus its all-ones normalizer."""

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], num_points: int) -> None:
        self._apply = apply
        norm = apply(np.ones((num_points, 1)))
        self.norm = np.maximum(norm, 1e-20)

    def normalized(self, values: np.ndarray) -> np.ndarray:
        return self._apply(values) / self.norm


def _build_filters(
    image: RgbImage, params: CrfParams, backend: str
) -> list[tuple[float, _KernelFilter]]:
    """Weighted kernel filters for one image; zero-weight kernels are skipped."""
    if backend not in FILTER_BACKENDS:
        raise ParameterError(f"filter_backend must be one of {FILTER_BACKENDS}, got {backend!r}")
    n = image.height * image.width
    filters = []
    for weight, kind in ((params.w_appearance, "appearance"), (params.w_smooth, "smoothness")):
        if weight == 0.0:
            continue
        feats = build_features(image, kind, params)
        if backend == "exact":
            apply = lambda v, f=feats: gaussian_filter_exact(f, v)
        else:
            lattice = PermutohedralLattice.build(feats)
            apply = lattice.filter
        filters.append((weight, _KernelFilter(apply, n)))
    return filters


def _step(q: np.ndarray, unary: np.ndarray, filters) -> np.ndarray:
    """One synchronous mean-field update on flattened (N, C) arrays."""
    # Overflow is detected below and reported as NumericsError, so the
    # transient inf/nan values must not also warn.
    with np.errstate(over="ignore", invalid="ignore"):
        messages = np.zeros_like(q)
        for weight, kernel in filters:
            messages += weight * (kernel.normalized(q) - q)
        penalty = messages.sum(axis=1, keepdims=True) - messages
        logits = -unary - penalty
    if not np.isfinite(logits).all():
        raise NumericsError(
            "mean-field update overflowed; reduce the pairwise kernel weights"
        )
    logits -= logits.max(axis=1, keepdims=True)
    q_new = np.exp(logits)
    q_new /= q_new.sum(axis=1, keepdims=True)
    return q_new


def _softmax_neg_unary(unary: np.ndarray) -> np.ndarray:
    logits = -unary - (-unary).max(axis=1, keepdims=True)
    q = np.exp(logits)
    q /= q.sum(axis=1, keepdims=True)
    return q


def _check_same_size(probs_like, image: RgbImage) -> None:
    if (probs_like.height, probs_like.width) != (image.height, image.width):
        raise ShapeMismatchError(
            f"probability map is {probs_like.height}x{probs_like.width} but image is "
            f"{image.height}x{image.width}"
        )


def meanfield_step(
    q: ProbMap,
    unary: UnaryMap,
    image: RgbImage,
    params: CrfParams,
    filter_backend: str = "lattice",
) -> ProbMap:
    """Run a single parallel mean-field update and return the new marginals."""
    _check_same_size(q, image)
    if q.data.shape != unary.data.shape:
        raise ShapeMismatchError(
            f"marginals {q.data.shape} and unaries {unary.data.shape} disagree"
        )
    filters = _build_filters(image, params, filter_backend)
    c = q.num_classes
    out = _step(
        q.data.reshape(-1, c).astype(np.float64),
        unary.data.reshape(-1, c).astype(np.float64),
        filters,
    )
    return ProbMap(out.reshape(q.data.shape).astype(np.float32))


def crf_refine(
    probs: ProbMap,
    image: RgbImage,
    params: CrfParams,
    filter_backend: str = "lattice",
) -> ProbMap:
    """Refine a probability map with ``params.iterations`` mean-field steps.

    The initial marginals are the per-pixel softmax of the negated unaries,
    i.e. the clamped input distribution renormalized. Take the argmax of
    the result for the refined label map.
    """
    _check_same_size(probs, image)
    unary_map = unary_from_probs(probs, params.clamp_floor)
    c = probs.num_classes
    unary = unary_map.data.reshape(-1, c).astype(np.float64)
    q = _softmax_neg_unary(unary)
    if params.iterations > 0:
        filters = _build_filters(image, params, filter_backend)
        for _ in range(params.iterations):
            q = _step(q, unary, filters)
    return ProbMap(q.reshape(probs.data.shape).astype(np.float32))
