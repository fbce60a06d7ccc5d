"""Remove isolated misclassified regions and smooth label boundaries.

Label maps are categorical, so cleanup works on connected components
rather than per-class binary morphology: components smaller than a
threshold are absorbed into the modal class of their surrounding pixels,
repeatedly, until a fixed point or a pass cap. Connected components
treat the ignore sentinel as its own label value; only the mode filter
excludes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import LabelMap
from .errors import ParameterError, ValidationError

CONNECTIVITIES = ("four", "eight")

_STRUCTURES = {
    "four": np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    "eight": np.ones((3, 3), dtype=bool),
}

_OFFSETS = {
    "four": ((-1, 0), (1, 0), (0, -1), (0, 1)),
    "eight": ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)),
}


@dataclass(frozen=True)
class ComponentMap:
    """Partition of a label map into maximal same-label connected regions.

    Component ids are dense from 0, assigned in raster-scan discovery
    order; all pixels of a component share one class label.
    """

    component_ids: np.ndarray
    component_sizes: np.ndarray
    component_labels: np.ndarray

    def __post_init__(self) -> None:
        ids = self.component_ids
        if ids.ndim != 2:
            raise ValidationError(f"component_ids must be 2-D, got shape {ids.shape}")
        m = len(self.component_sizes)
        if len(self.component_labels) != m:
            raise ValidationError("component_sizes and component_labels lengths differ")
        if int(self.component_sizes.sum()) != ids.size:
            raise ValidationError("component sizes must partition the image")

    @property
    def height(self) -> int:
        return self.component_ids.shape[0]

    @property
    def width(self) -> int:
        return self.component_ids.shape[1]

    @property
    def num_components(self) -> int:
        return len(self.component_sizes)


@dataclass(frozen=True)
class CleanupResult:
    """Cleaned label map plus whether the pass loop reached a fixed point."""

    labels: LabelMap
    fixed_point: bool
    passes: int


def _check_connectivity(connectivity: str) -> None:
    if connectivity not in CONNECTIVITIES:
        raise ParameterError(
            f"connectivity must be one of {CONNECTIVITIES}, got {connectivity!r}"
        )


def connected_components(labels: LabelMap, connectivity: str = "four") -> ComponentMap:
    """Maximal same-label connected regions of a label map.

    The ignore sentinel forms its own regions. Ids follow raster-scan
    discovery order, so the labeling is deterministic.
    """
    _check_connectivity(connectivity)
    structure = _STRUCTURES[connectivity]
    data = labels.data
    raw = np.zeros(data.shape, dtype=np.int64)
    offset = 0
    for value in np.unique(data):
        mask = data == value
        lab, count = ndimage.label(mask, structure=structure)
        raw[mask] = lab[mask] + offset
        offset += count
    flat = raw.ravel()
    ids_sorted, first_index = np.unique(flat, return_index=True)
    discovery = np.argsort(first_index, kind="stable")
    remap = np.empty(offset + 1, dtype=np.int64)
    remap[ids_sorted[discovery]] = np.arange(len(discovery))
    component_ids = remap[flat].reshape(data.shape).astype(np.uint32)
    sizes = np.bincount(component_ids.ravel()).astype(np.int64)
    component_labels = data.ravel()[first_index[discovery]].copy()
    return ComponentMap(component_ids, sizes, component_labels)


def _absorb_small_once(
    data: np.ndarray, num_classes: int, min_area: int, connectivity: str
) -> tuple[np.ndarray, bool]:
    """One simultaneous absorption pass; returns (new labels, changed)."""
    cm = connected_components(LabelMap(data, num_classes), connectivity)
    small = cm.component_sizes < min_area
    if not small.any():
        return data, False
    small_ids = np.flatnonzero(small)
    dense = np.full(cm.num_components, -1, dtype=np.int64)
    dense[small_ids] = np.arange(len(small_ids))

    # Per small component, count the labels of adjacent outside pixels.
    h, w = data.shape
    ids = cm.component_ids.astype(np.int64)
    neighbor_counts = np.zeros((len(small_ids), 256), dtype=np.int64)
    for dr, dc in _OFFSETS[connectivity]:
        src = (slice(max(dr, 0), h + min(dr, 0)), slice(max(dc, 0), w + min(dc, 0)))
        dst = (slice(max(-dr, 0), h + min(-dr, 0)), slice(max(-dc, 0), w + min(-dc, 0)))
        here = ids[src]
        there_ids = ids[dst]
        there_labels = data[dst]
        sel = (small[here]) & (here != there_ids)
        if sel.any():
            np.add.at(neighbor_counts, (dense[here[sel]], there_labels[sel]), 1)

    # Modal neighbor label; ties break to the lowest class index. Components
    # with no in-image neighbors (the whole image) keep their label.
    has_neighbors = neighbor_counts.sum(axis=1) > 0
    target = np.argmax(neighbor_counts, axis=1).astype(np.uint8)
    new_label_of = cm.component_labels.copy()
    new_label_of[small_ids[has_neighbors]] = target[has_neighbors]
    if not has_neighbors.any():
        return data, False
    return new_label_of[ids].astype(np.uint8), True


def remove_small_components(
    labels: LabelMap,
    min_area: int,
    connectivity: str = "four",
    max_passes: int = 8,
) -> CleanupResult:
    """Absorb components smaller than ``min_area`` into their surroundings.

    Each pass reassigns every undersized component to the modal class of
    its boundary-adjacent pixels (ties to the lowest class index),
    simultaneously from the pass-start map. Absorptions can merge regions
    into new undersized components, so passes repeat until a fixed point
    or ``max_passes``. A component with no in-image neighbors keeps its
    label.
    """
    _check_connectivity(connectivity)
    if min_area < 1:
        raise ParameterError(f"min_area must be >= 1, got {min_area}")
    if max_passes < 1:
        raise ParameterError(f"max_passes must be >= 1, got {max_passes}")
    data = labels.data
    fixed_point = False
    passes = 0
    for _ in range(max_passes):
        passes += 1
        data, changed = _absorb_small_once(data, labels.num_classes, min_area, connectivity)
        if not changed:
            fixed_point = True
            break
    out = LabelMap(data, labels.num_classes)
    return CleanupResult(out, fixed_point, passes)


def mode_filter(labels: LabelMap, radius: int) -> LabelMap:
    """Replace each pixel with the modal label of its (2r+1)^2 window.

    Windows clip to the image. Ignore sentinels are excluded from the
    mode; on a tie the pixel keeps its own label if tied, otherwise the
    lowest tied class index wins. Pixels whose window holds no valid
    label stay unchanged.
    """
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    data = labels.data
    h, w = data.shape
    classes = np.unique(data)
    classes = classes[classes != 255]
    if len(classes) == 0:
        return labels

    # Integral image per present class gives exact window counts.
    counts = np.empty((h, w, len(classes)), dtype=np.int32)
    for k, value in enumerate(classes):
        ii = np.zeros((h + 1, w + 1), dtype=np.int32)
        np.cumsum(np.cumsum(data == value, axis=0), axis=1, out=ii[1:, 1:])
        r0 = np.clip(np.arange(h) - radius, 0, h)
        r1 = np.clip(np.arange(h) + radius + 1, 0, h)
        c0 = np.clip(np.arange(w) - radius, 0, w)
        c1 = np.clip(np.arange(w) + radius + 1, 0, w)
        counts[:, :, k] = (
            ii[r1[:, None], c1[None, :]]
            - ii[r0[:, None], c1[None, :]]
            - ii[r1[:, None], c0[None, :]]
            + ii[r0[:, None], c0[None, :]]
        )

    max_count = counts.max(axis=2)
    modal = classes[np.argmax(counts, axis=2)]

    out = modal.astype(np.uint8)
    out[max_count == 0] = data[max_count == 0]

    # Keep the original label when it ties for the maximum.
    class_pos = np.full(256, -1, dtype=np.int64)
    class_pos[classes] = np.arange(len(classes))
    own = class_pos[data]
    valid_own = own >= 0
    own_count = np.zeros((h, w), dtype=np.int32)
    idx = np.where(valid_own, own, 0)
    own_count_all = np.take_along_axis(counts, idx[:, :, None], axis=2)[:, :, 0]
    own_count[valid_own] = own_count_all[valid_own]
    keep = valid_own & (own_count == max_count)
    out[keep] = data[keep]
    return LabelMap(out, labels.num_classes)
