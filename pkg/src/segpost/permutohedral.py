"""Permutohedral lattice for approximate high-dimensional Gaussian filtering.

Filtering runs in three phases: values are splatted onto the enclosing
simplex vertices with barycentric weights, blurred along each of the d+1
lattice directions with a [1, 2, 1]/4 kernel, then sliced back with the
same weights. The result approximates the inclusive all-pairs filter

    out_i = sum_j exp(-||f_i - f_j||^2 / 2) * v_j

up to a global scale, so callers normalize by filtering an all-ones field.

Vertex deduplication uses an exact sort-and-unique over integer lattice
keys (packed into int64 where the coordinate ranges allow, with a
byte-view fallback otherwise), so key collisions are resolved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ShapeMismatchError, ValidationError


@dataclass(frozen=True)
class FeatureSet:
    """One d-dimensional feature vector per pixel of an H x W image."""

    features: np.ndarray
    height: int
    width: int

    def __post_init__(self) -> None:
        arr = np.array(self.features, dtype=np.float32, order="C")
        if arr.ndim != 2:
            raise ValidationError(f"features must be (N, d), got shape {arr.shape}")
        if arr.shape[0] != self.height * self.width:
            raise ValidationError(
                f"{arr.shape[0]} feature vectors for a {self.height}x{self.width} image"
            )
        if not np.isfinite(arr).all():
            raise ValidationError("features must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "features", arr)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_points(self) -> int:
        return self.features.shape[0]


def _elevation_matrix(d: int) -> np.ndarray:
    """(d+1) x d embedding into the sum-zero hyperplane.

    Columns are orthogonal with equal norm sqrt(2/3)*(d+1); the scaling
    makes the lattice blur approximate a unit-variance Gaussian in the
    original feature space.
    """
    inv_std_dev = np.sqrt(2.0 / 3.0) * (d + 1)
    scale = inv_std_dev / np.sqrt((np.arange(d) + 1.0) * (np.arange(d) + 2.0))
    e = np.zeros((d + 1, d))
    e[0, :] = scale
    for j in range(1, d + 1):
        e[j, j - 1] = -j * scale[j - 1]
        e[j, j:] = scale[j:]
    return e


def _canonical_simplex(d: int) -> np.ndarray:
    """canonical[r, q]: coordinate of the r-th simplex vertex at rank q."""
    canonical = np.zeros((d + 1, d + 1), dtype=np.int64)
    for r in range(d + 1):
        canonical[r, : d + 1 - r] = r
        canonical[r, d + 1 - r :] = r - (d + 1)
    return canonical


def _pack_keys(keys: np.ndarray, lo: np.ndarray, strides: np.ndarray) -> np.ndarray:
    return (keys - lo) @ strides


def _unique_void(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact unique over integer key rows via a raw-byte view.

    Returns (first_occurrence_indices, inverse, count). Byte order of the
    view is irrelevant: any consistent total order suffices for grouping.
    """
    arr = np.ascontiguousarray(keys)
    flat = arr.view(np.dtype((np.void, arr.dtype.itemsize * arr.shape[1]))).ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    return first, inverse.astype(np.int64), len(first)


class PermutohedralLattice:
    """Splat/blur/slice structure built once per feature set.

    Attributes
    ----------
    dim : feature dimensionality d
    vertex_keys : (M, d+1) integer lattice coordinates, each row summing to 0
    splat_indices : (N, d+1) vertex index per point and enclosing-simplex corner
    splat_weights : (N, d+1) non-negative barycentric weights summing to 1
    """

    def __init__(
        self,
        dim: int,
        vertex_keys: np.ndarray,
        splat_indices: np.ndarray,
        splat_weights: np.ndarray,
        blur_n1: np.ndarray,
        blur_n2: np.ndarray,
    ) -> None:
        self.dim = dim
        self.vertex_keys = vertex_keys
        self.splat_indices = splat_indices
        self.splat_weights = splat_weights
        self.num_points = splat_indices.shape[0]
        self.num_vertices = vertex_keys.shape[0]
        # (d+1, M) neighbor vertex indices per blur direction; num_vertices
        # marks a missing neighbor and points at the zero padding row.
        self._blur_n1 = blur_n1
        self._blur_n2 = blur_n2
        n = self.num_points
        cols = np.repeat(np.arange(n, dtype=np.int64), dim + 1)
        self._splat = sparse.csr_matrix(
            (splat_weights.ravel(), (splat_indices.ravel().astype(np.int64), cols)),
            shape=(self.num_vertices, n),
        )
        self._slice = self._splat.T.tocsr()

    @classmethod
    def build(cls, features: FeatureSet) -> "PermutohedralLattice":
        d = features.dim
        n = features.num_points
        f = features.features.astype(np.float64)

        elevated = f @ _elevation_matrix(d).T  # (N, d+1)

        # Nearest 0-colored lattice point (multiple of d+1 per coordinate).
        rem0 = np.rint(elevated / (d + 1)) * (d + 1)
        h = (rem0.sum(axis=1) / (d + 1)).round().astype(np.int64)

        # Rank = position in the descending sort of elevated - rem0, ties
        # broken toward the earlier coordinate.
        diff = elevated - rem0
        order = np.argsort(-diff, axis=1, kind="stable")
        rank = np.empty((n, d + 1), dtype=np.int64)
        np.put_along_axis(rank, order, np.arange(d + 1, dtype=np.int64)[None, :], axis=1)

        # Walk back inside the canonical simplex if rounding overshot.
        rank += h[:, None]
        low = rank < 0
        high = rank > d
        rank[low] += d + 1
        rank[high] -= d + 1
        rem0[low] += d + 1
        rem0[high] -= d + 1

        # Barycentric coordinates via the telescoping scatter; per point the
        # scatter targets are distinct, so two put_along_axis calls suffice.
        v = (elevated - rem0) / (d + 1)
        scatter_hi = np.zeros((n, d + 2))
        scatter_lo = np.zeros((n, d + 2))
        np.put_along_axis(scatter_hi, d - rank, v, axis=1)
        np.put_along_axis(scatter_lo, d + 1 - rank, v, axis=1)
        bary = scatter_hi - scatter_lo
        bary[:, 0] += 1.0 + bary[:, d + 1]
        weights = np.maximum(bary[:, : d + 1], 0.0)  # clip float residue

        # Enclosing simplex vertices: one key per remainder.
        canonical = _canonical_simplex(d)
        rem0_int = rem0.astype(np.int64)
        keys = rem0_int[:, None, :] + np.moveaxis(canonical[:, rank], 1, 0)  # (N, d+1, d+1)
        keys_flat = keys.reshape(-1, d + 1)

        packed = cls._packing(keys_flat, d)
        if packed is not None:
            lo, strides = packed
            codes = _pack_keys(keys_flat, lo, strides)
            uniq_codes, first, inverse = np.unique(
                codes, return_index=True, return_inverse=True
            )
            m = len(uniq_codes)
            vertex_keys = keys_flat[first]
            blur_n1, blur_n2 = cls._neighbors_packed(
                vertex_keys, uniq_codes, lo, strides, d, m
            )
        else:
            first, inverse, m = _unique_void(keys_flat)
            vertex_keys = keys_flat[first]
            blur_n1, blur_n2 = cls._neighbors_void(vertex_keys, d, m)

        splat_indices = inverse.reshape(n, d + 1).astype(np.int64)
        return cls(d, vertex_keys, splat_indices, weights, blur_n1, blur_n2)

    @staticmethod
    def _packing(keys: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray] | None:
        """Per-coordinate offsets and strides for injective int64 key packing.

        The box is widened by d+1 on each side so blur-neighbor keys pack
        into the same space. Returns None when the box would overflow int64.
        """
        lo = keys.min(axis=0) - (d + 1)
        hi = keys.max(axis=0) + (d + 1)
        span = (hi - lo + 1).tolist()
        total = 1
        for s in span:
            total *= int(s)
            if total >= 2**62:
                return None
        strides = np.ones(d + 1, dtype=np.int64)
        for i in range(d - 1, -1, -1):
            strides[i] = strides[i + 1] * span[i + 1]
        return lo, strides

    @staticmethod
    def _direction_offsets(d: int) -> np.ndarray:
        offs = np.ones((d + 1, d + 1), dtype=np.int64)
        np.fill_diagonal(offs, -d)
        return offs

    @classmethod
    def _neighbors_packed(
        cls,
        vertex_keys: np.ndarray,
        uniq_codes: np.ndarray,
        lo: np.ndarray,
        strides: np.ndarray,
        d: int,
        m: int,
    ) -> tuple[np.ndarray, np.ndarray]:
        offsets = cls._direction_offsets(d)
        code_offsets = offsets @ strides  # packing is affine in the key
        n1 = np.empty((d + 1, m), dtype=np.int64)
        n2 = np.empty((d + 1, m), dtype=np.int64)
        for j in range(d + 1):
            for target, sign in ((n1, 1), (n2, -1)):
                codes = uniq_codes + sign * code_offsets[j]
                pos = np.searchsorted(uniq_codes, codes)
                pos = np.minimum(pos, m - 1)
                found = uniq_codes[pos] == codes
                target[j] = np.where(found, pos, m)
        return n1, n2

    @classmethod
    def _neighbors_void(
        cls, vertex_keys: np.ndarray, d: int, m: int
    ) -> tuple[np.ndarray, np.ndarray]:
        offsets = cls._direction_offsets(d)
        queries = (
            vertex_keys[None, None, :, :]
            + np.stack([offsets, -offsets])[:, :, None, :]
        ).reshape(-1, d + 1)
        all_keys = np.concatenate([vertex_keys, queries], axis=0)
        _, inverse, _ = _unique_void(all_keys)
        group_to_vertex = np.full(inverse.max() + 1, m, dtype=np.int64)
        group_to_vertex[inverse[:m]] = np.arange(m)
        resolved = group_to_vertex[inverse[m:]].reshape(2, d + 1, m)
        return resolved[0], resolved[1]

    def filter(self, values: np.ndarray) -> np.ndarray:
        """Apply splat -> blur -> slice to an (N, C) value matrix."""
        values = np.asarray(values, dtype=np.float64)
        squeeze = values.ndim == 1
        if squeeze:
            values = values[:, None]
        if values.shape[0] != self.num_points:
            raise ShapeMismatchError(
                f"{values.shape[0]} value rows for a lattice over {self.num_points} points"
            )
        c = values.shape[1]
        m = self.num_vertices
        padded = np.zeros((m + 1, c))
        padded[:m] = self._splat @ values
        for j in range(self.dim + 1):
            padded[:m] = 0.5 * padded[:m] + 0.25 * (
                padded[self._blur_n1[j]] + padded[self._blur_n2[j]]
            )
        out = self._slice @ padded[:m]
        return out[:, 0] if squeeze else out

    def vertex_table(self) -> dict[tuple[int, ...], int]:
        """Key-to-storage-index map (materialized on demand; for inspection)."""
        return {tuple(k): i for i, k in enumerate(self.vertex_keys.tolist())}


def lattice_filter(lattice: PermutohedralLattice, values: np.ndarray) -> np.ndarray:
    """Filter an (N, C) value matrix through a prebuilt lattice."""
    return lattice.filter(values)
