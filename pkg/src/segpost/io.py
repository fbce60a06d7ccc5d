"""Bit-exact serialization of probability maps, label maps, images, and palettes.

Probability maps use the SPM1 container: magic ``SPM1``, then four
little-endian uint32 words (format version = 1, height, width, num_classes),
then height*width*num_classes IEEE-754 binary32 little-endian values in
row-major (row, column, class) order. No padding, no checksum. Label maps
are 8-bit grayscale PNGs; palettes are CSV.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import IGNORE_LABEL, LabelMap, ProbMap, RgbImage
from .errors import (
    BadMagicError,
    DimensionOverflowError,
    LabelRangeError,
    PaletteError,
    PngFormatError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    ValidationError,
)

SPM1_MAGIC = b"SPM1"
SPM1_VERSION = 1
_MAX_ELEMENTS = 2**31


def write_probmap(probs: ProbMap, path: str | Path) -> None:
    """Write a probability map as an SPM1 file."""
    header = SPM1_MAGIC + struct.pack(
        "<IIII", SPM1_VERSION, probs.height, probs.width, probs.num_classes
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(probs.data, dtype="<f4").tobytes())


def read_probmap(path: str | Path) -> ProbMap:
    """Read an SPM1 file, validating magic, version, dimensions, and payload."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != SPM1_MAGIC:
        raise BadMagicError(f"{path}: expected magic {SPM1_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 20:
        raise TruncatedPayloadError(f"{path}: header requires 20 bytes, file has {len(raw)}")
    version, height, width, num_classes = struct.unpack("<IIII", raw[4:20])
    if version != SPM1_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {SPM1_VERSION}")
    total = height * width * num_classes
    if total > _MAX_ELEMENTS:
        raise DimensionOverflowError(
            f"{path}: {height}x{width}x{num_classes} = {total} elements exceeds 2^31"
        )
    expected = 20 + 4 * total
    if len(raw) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload requires {expected - 20} bytes, file has {len(raw) - 20}"
        )
    if len(raw) > expected:
        raise TrailingDataError(f"{path}: {len(raw) - expected} bytes beyond declared payload")
    if height < 1 or width < 1 or num_classes < 1:
        raise ValidationError(f"{path}: zero dimension in header")
    data = np.frombuffer(raw, dtype="<f4", offset=20).reshape(height, width, num_classes)
    return ProbMap(data)


def write_labelmap_png(labels: LabelMap, path: str | Path) -> None:
    """Write a label map as an 8-bit grayscale PNG; values are class indices."""
    Image.fromarray(labels.data, mode="L").save(path, format="PNG")


def read_labelmap_png(path: str | Path, num_classes: int) -> LabelMap:
    """Read an 8-bit grayscale PNG whose pixel values are class indices.

    Values must be < num_classes or equal to the ignore sentinel 255.
    """
    with Image.open(path) as img:
        if img.mode != "L":
            raise PngFormatError(
                f"{path}: label maps must be 8-bit grayscale PNG, got mode {img.mode!r}"
            )
        arr = np.asarray(img, dtype=np.uint8)
    bad = (arr >= num_classes) & (arr != IGNORE_LABEL)
    if bad.any():
        flat = int(np.argmax(bad))
        r, c = flat // arr.shape[1], flat % arr.shape[1]
        raise LabelRangeError(
            f"{path}: value {int(arr[r, c])} at pixel ({r}, {c}) is outside "
            f"[0, {num_classes}) and is not the ignore sentinel"
        )
    return LabelMap(arr, num_classes)


def write_rgb_png(image: RgbImage, path: str | Path) -> None:
    """Write an RGB image as an 8-bit PNG."""
    Image.fromarray(image.data, mode="RGB").save(path, format="PNG")


def read_rgb_png(path: str | Path) -> RgbImage:
    """Read an 8-bit RGB (or RGBA, alpha dropped) PNG."""
    with Image.open(path) as img:
        if img.mode == "RGBA":
            arr = np.asarray(img)[:, :, :3]
        elif img.mode == "RGB":
            arr = np.asarray(img)
        else:
            raise PngFormatError(
                f"{path}: expected 8-bit RGB or RGBA PNG, got mode {img.mode!r}"
            )
    return RgbImage(np.ascontiguousarray(arr, dtype=np.uint8))


@dataclass(frozen=True)
class Palette:
    """Ordered mapping from class index to display color and name.

    Indices must be unique and contiguous from 0; names unique and non-empty.
    """

    entries: tuple[tuple[int, tuple[int, int, int], str], ...]

    def __post_init__(self) -> None:
        indices = [e[0] for e in self.entries]
        names = [e[2] for e in self.entries]
        if not self.entries:
            raise PaletteError("palette has no entries")
        if indices != list(range(len(self.entries))):
            raise PaletteError(f"class indices must be contiguous from 0, got {indices}")
        if len(set(names)) != len(names) or any(not n for n in names):
            raise PaletteError("class names must be unique and non-empty")
        for idx, rgb, _ in self.entries:
            if len(rgb) != 3 or any(not 0 <= v <= 255 for v in rgb):
                raise PaletteError(f"class {idx}: rgb {rgb} outside [0, 255]")

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e[2] for e in self.entries)

    @property
    def colors(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(e[1] for e in self.entries)


def write_palette_csv(palette: Palette, path: str | Path) -> None:
    """Write a palette as CSV with header row class_index,name,r,g,b."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_index", "name", "r", "g", "b"])
        for idx, (r, g, b), name in palette.entries:
            writer.writerow([idx, name, r, g, b])


def read_palette_csv(path: str | Path) -> Palette:
    """Read a palette CSV (class_index,name,r,g,b with a header row)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["class_index", "name", "r", "g", "b"]:
        raise PaletteError(f"{path}: expected header 'class_index,name,r,g,b'")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise PaletteError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
        try:
            idx = int(row[0])
            rgb = (int(row[2]), int(row[3]), int(row[4]))
        except ValueError as exc:
            raise PaletteError(f"{path}:{lineno}: {exc}") from exc
        entries.append((idx, rgb, row[1]))
    return Palette(tuple(entries))


def colorize(labels: LabelMap, palette: Palette) -> RgbImage:
    """Render a label map through a palette; the ignore sentinel maps to black."""
    present = set(np.unique(labels.data).tolist()) - {IGNORE_LABEL}
    missing = sorted(present - set(range(palette.num_classes)))
    if missing:
        raise PaletteError(f"no palette entry for class {missing[0]}")
    lut = np.zeros((256, 3), dtype=np.uint8)
    for idx, rgb, _ in palette.entries:
        lut[idx] = rgb
    return RgbImage(lut[labels.data])
