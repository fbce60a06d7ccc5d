"""Shared helpers for building random maps with seeded generators."""

import numpy as np

from segpost import LabelMap, ProbMap, RgbImage


def random_probmap(rng: np.random.Generator, h: int, w: int, c: int) -> ProbMap:
    raw = rng.uniform(0.05, 1.0, size=(h, w, c))
    return ProbMap(raw / raw.sum(axis=2, keepdims=True))


def random_labelmap(
    rng: np.random.Generator, h: int, w: int, c: int, ignore_rate: float = 0.0
) -> LabelMap:
    data = rng.integers(0, c, size=(h, w)).astype(np.uint8)
    if ignore_rate > 0:
        data[rng.uniform(size=(h, w)) < ignore_rate] = 255
    return LabelMap(data, c)


def random_image(rng: np.random.Generator, h: int, w: int) -> RgbImage:
    return RgbImage(rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8))
