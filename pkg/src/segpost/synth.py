"""Synthetic Voronoi scenes and probability-map corruption.

Stands in for real data so the full ensemble / CRF / morphology ladder
can be exercised end to end. Scenes are piecewise-constant regions with
color-correlated boundaries, the regime the bilateral kernel is built
for.

Reproducibility contract: all randomness comes from numpy's PCG64
seeded with SeedSequence(rng_seed, spawn_key=(stream, purpose)), where
purpose is 0 for seed placement, 1 for colors, 2 for flips. The stream
index separates ensemble members drawn from one scene. Identical inputs
give bitwise-identical outputs on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import LabelMap, ProbMap, RgbImage
from .errors import ParameterError, ValidationError
from .io import (
    read_labelmap_png,
    read_probmap,
    read_rgb_png,
    write_labelmap_png,
    write_probmap,
    write_rgb_png,
)

_PURPOSE_SEEDS = 0
_PURPOSE_COLORS = 1
_PURPOSE_FLIPS = 2

MANIFEST_NAME = "manifest.txt"


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene and its corruption model."""

    height: int
    width: int
    num_classes: int
    num_seeds: int
    noise_flip_rate: float = 0.1
    flip_confidence: float = 0.9
    speckle_rate: float = 0.02
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 4 or self.width < 4:
            raise ParameterError(
                f"degenerate dims {self.height}x{self.width}; need at least 4x4"
            )
        if not 1 <= self.num_classes <= 255:
            raise ParameterError(f"num_classes must be in [1, 255], got {self.num_classes}")
        if self.num_seeds < 1:
            raise ParameterError(f"num_seeds must be >= 1, got {self.num_seeds}")
        if not 0.0 <= self.noise_flip_rate <= 1.0:
            raise ParameterError(
                f"noise_flip_rate must be in [0, 1], got {self.noise_flip_rate}"
            )
        if not 0.0 <= self.speckle_rate <= 1.0:
            raise ParameterError(
                f"speckle_rate must be in [0, 1], got {self.speckle_rate}"
            )
        if not 0.5 < self.flip_confidence <= 1.0:
            raise ParameterError(
                f"flip_confidence must be in (0.5, 1], got {self.flip_confidence}"
            )
        if not 0 <= self.rng_seed < 2**64:
            raise ParameterError(
                f"rng_seed must be an unsigned 64-bit value, got {self.rng_seed}"
            )


def _rng(spec: SceneSpec, purpose: int, stream: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(spec.rng_seed, spawn_key=(stream, purpose))
    return np.random.Generator(np.random.PCG64(seq))


def _distinct_colors(rng: np.random.Generator, n: int) -> np.ndarray:
    """n distinct RGB triples; collisions are redrawn until unique."""
    colors = rng.integers(0, 256, size=(n, 3), dtype=np.int64)
    while True:
        packed = colors[:, 0] * 65536 + colors[:, 1] * 256 + colors[:, 2]
        _, first = np.unique(packed, return_index=True)
        dup = np.ones(n, dtype=bool)
        dup[first] = False
        if not dup.any():
            return colors.astype(np.uint8)
        colors[dup] = rng.integers(0, 256, size=(int(dup.sum()), 3), dtype=np.int64)


def generate_scene(spec: SceneSpec) -> tuple:
    """Voronoi ground truth plus a color image with per-pixel jitter.

    Each seed gets a class and a distinct base color; every pixel takes
    the nearest seed under Euclidean distance (ties go to the lowest
    seed index). Jitter is an integer in [-10, 10] per channel, clamped.
    """
    rng_seeds = _rng(spec, _PURPOSE_SEEDS)
    rows = rng_seeds.integers(0, spec.height, size=spec.num_seeds)
    cols = rng_seeds.integers(0, spec.width, size=spec.num_seeds)
    classes = rng_seeds.integers(0, spec.num_classes, size=spec.num_seeds)
    rng_colors = _rng(spec, _PURPOSE_COLORS)
    colors = _distinct_colors(rng_colors, spec.num_seeds)

    rr = np.arange(spec.height)[:, None, None]
    cc = np.arange(spec.width)[None, :, None]
    d2 = (rr - rows[None, None, :]) ** 2 + (cc - cols[None, None, :]) ** 2
    owner = np.argmin(d2, axis=2)

    gt = LabelMap(classes[owner].astype(np.uint8), spec.num_classes)
    base = colors[owner].astype(np.int16)
    jitter = rng_colors.integers(-10, 11, size=base.shape, dtype=np.int16)
    pixels = np.clip(base + jitter, 0, 255).astype(np.uint8)
    return gt, RgbImage(pixels)


@dataclass(frozen=True)
class CorruptionLog:
    """What corrupt_to_probs actually did, for direct counting in tests."""

    flip_mask: np.ndarray
    speckle_mask: np.ndarray
    corrupted_labels: LabelMap


def corrupt_to_probs_logged(
    gt: LabelMap, spec: SceneSpec, stream: int = 0
) -> tuple:
    """Corrupt a ground-truth map into soft probabilities, with a log.

    A flipped pixel's winner is a uniformly random wrong class; all
    winners get probability flip_confidence with the remaining mass
    spread uniformly over the other classes. The stream index yields
    independent corruptions of one scene for separate ensemble members.
    """
    if gt.num_classes != spec.num_classes:
        raise ValidationError(
            f"gt has {gt.num_classes} classes but spec says {spec.num_classes}"
        )
    if (gt.height, gt.width) != (spec.height, spec.width):
        raise ValidationError(
            f"gt is {gt.height}x{gt.width} but spec says {spec.height}x{spec.width}"
        )
    c = spec.num_classes
    rng = _rng(spec, _PURPOSE_FLIPS, stream=stream)
    shape = (spec.height, spec.width)
    flip_mask = rng.random(shape) < spec.noise_flip_rate
    speckle_mask = rng.random(shape) < spec.speckle_rate
    winners = gt.data.astype(np.int64)
    union = flip_mask | speckle_mask
    if c > 1:
        offsets = rng.integers(1, c, size=shape)
        winners = np.where(union, (winners + offsets) % c, winners)

    confidence = spec.flip_confidence if c > 1 else 1.0
    off_value = (1.0 - confidence) / (c - 1) if c > 1 else 0.0
    probs = np.full((*shape, c), off_value, dtype=np.float32)
    np.put_along_axis(probs, winners[:, :, None], np.float32(confidence), axis=2)
    log = CorruptionLog(
        flip_mask, speckle_mask, LabelMap(winners.astype(np.uint8), c)
    )
    return ProbMap(probs), log


def corrupt_to_probs(gt: LabelMap, spec: SceneSpec, stream: int = 0) -> ProbMap:
    """Corrupt a ground-truth map into soft probabilities."""
    probs, _ = corrupt_to_probs_logged(gt, spec, stream=stream)
    return probs


def write_scene_bundle(
    directory,
    spec: SceneSpec,
    gt: LabelMap,
    image: RgbImage,
    members: Sequence[ProbMap],
) -> None:
    """Write gt.png, image.png, member_XX.spm1, and a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_labelmap_png(gt, directory / "gt.png")
    write_rgb_png(image, directory / "image.png")
    for k, probs in enumerate(members):
        write_probmap(probs, directory / f"member_{k:02d}.spm1")
    lines = [f"{name} = {getattr(spec, name)}" for name in (
        "height", "width", "num_classes", "num_seeds",
        "noise_flip_rate", "flip_confidence", "speckle_rate", "rng_seed",
    )]
    lines.append(f"num_members = {len(members)}")
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scene_bundle(directory) -> tuple:
    """Read back (spec, gt, image, members) from a scene bundle."""
    directory = Path(directory)
    fields = {}
    for line in (directory / MANIFEST_NAME).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        spec = SceneSpec(
            height=int(fields["height"]),
            width=int(fields["width"]),
            num_classes=int(fields["num_classes"]),
            num_seeds=int(fields["num_seeds"]),
            noise_flip_rate=float(fields["noise_flip_rate"]),
            flip_confidence=float(fields["flip_confidence"]),
            speckle_rate=float(fields["speckle_rate"]),
            rng_seed=int(fields["rng_seed"]),
        )
        num_members = int(fields["num_members"])
    except KeyError as exc:
        raise ValidationError(f"manifest is missing field {exc}") from exc
    gt = read_labelmap_png(directory / "gt.png", spec.num_classes)
    image = read_rgb_png(directory / "image.png")
    members = [
        read_probmap(directory / f"member_{k:02d}.spm1") for k in range(num_members)
    ]
    return spec, gt, image, members
