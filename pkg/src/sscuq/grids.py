"""Domain types: camera model, grid geometry, depth maps, and voxel grids.

All types validate their invariants at construction and hold read-only
arrays, so instances can be shared freely across threads.  Class labels
are 1-based throughout the package; class 1 is the empty class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "CameraIntrinsics",
    "GridGeometry",
    "DepthEstimate",
    "GroundTruthDepth",
    "ProbOccupancyGrid",
    "BinaryOccupancyGrid",
    "SoftmaxGrid",
    "LabelGrid",
    "SOFTMAX_SUM_TOL",
]

SOFTMAX_SUM_TOL = 1e-5  # absorbs float32 serialization error


class ValidationError(ValueError):
    """A domain type invariant does not hold."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths, principal point, image size (pixels)."""

    f_u: float
    f_v: float
    c_h: float
    c_w: float
    height: int
    width: int

    def __post_init__(self):
        if not (self.f_u > 0 and self.f_v > 0):
            raise ValidationError("focal lengths must be positive")
        if not (self.height >= 1 and self.width >= 1):
            raise ValidationError("image dimensions must be at least 1")
        if not (0 <= self.c_h < self.height and 0 <= self.c_w < self.width):
            raise ValidationError("principal point must lie inside the image")


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned voxel lattice in the camera frame.

    ``dims`` are the voxel counts (U, V, D) along the x, y, z axes and
    ``origin`` is the world position of the grid's minimum corner.
    Voxel (u, v, d) covers the half-open box
    ``[origin + (u,v,d)*edge, origin + (u+1,v+1,d+1)*edge)``.
    """

    dims: tuple[int, int, int]
    voxel_edge: float
    origin: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValidationError("dims must be three positive voxel counts")
        if not (self.voxel_edge > 0 and np.isfinite(self.voxel_edge)):
            raise ValidationError("voxel_edge must be positive and finite")
        origin = _frozen(np.asarray(self.origin, dtype=np.float64))
        if origin.shape != (3,) or not np.all(np.isfinite(origin)):
            raise ValidationError("origin must be a finite 3-vector")
        object.__setattr__(self, "origin", origin)

    @property
    def extent(self) -> np.ndarray:
        """Edge lengths of the grid box in meters."""
        return np.array(self.dims, dtype=np.float64) * self.voxel_edge

    @property
    def voxel_count(self) -> int:
        return int(np.prod(self.dims))


def _check_depth_pair(values: np.ndarray, valid: np.ndarray, what: str):
    if values.ndim != 2:
        raise ValidationError(f"{what} must be a 2-d array")
    if valid.shape != values.shape:
        raise ValidationError("valid_mask shape must match the depth map")
    if not np.all(np.isfinite(values[valid])):
        raise ValidationError(f"{what} must be finite on valid pixels")


@dataclass(frozen=True)
class DepthEstimate:
    """Per-pixel depth means and standard deviations with a validity mask."""

    mean: np.ndarray
    sigma: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        mean = _frozen(np.asarray(self.mean, dtype=np.float64))
        sigma = _frozen(np.asarray(self.sigma, dtype=np.float64))
        valid = _frozen(np.asarray(self.valid_mask, dtype=bool))
        _check_depth_pair(mean, valid, "mean")
        if sigma.shape != mean.shape:
            raise ValidationError("sigma shape must match mean")
        if np.any(mean[valid] <= 0):
            raise ValidationError("mean must be positive on valid pixels")
        if np.any(sigma[valid] <= 0) or not np.all(np.isfinite(sigma[valid])):
            raise ValidationError("sigma must be positive and finite on valid pixels")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "valid_mask", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


@dataclass(frozen=True)
class GroundTruthDepth:
    """True per-pixel depths with a validity mask."""

    depth: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        depth = _frozen(np.asarray(self.depth, dtype=np.float64))
        valid = _frozen(np.asarray(self.valid_mask, dtype=bool))
        _check_depth_pair(depth, valid, "depth")
        if np.any(depth[valid] <= 0):
            raise ValidationError("depth must be positive on valid pixels")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid_mask", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def _check_3d(values: np.ndarray):
    if values.ndim != 3:
        raise ValidationError("voxel grid must be a 3-d array")
    if any(n < 1 for n in values.shape):
        raise ValidationError("voxel grid dims must be positive")


@dataclass(frozen=True)
class ProbOccupancyGrid:
    """Per-voxel occupancy probabilities in [0, 1] (float32 storage)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(np.asarray(self.values, dtype=np.float32))
        _check_3d(values)
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValidationError("occupancy probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryOccupancyGrid:
    """Per-voxel occupancy flags in {0, 1} (uint8 storage)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(np.asarray(self.values, dtype=np.uint8))
        _check_3d(values)
        if not np.all(values <= 1):
            raise ValidationError("binary occupancy values must be 0 or 1")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def as_bool(self) -> np.ndarray:
        return self.values.astype(bool)


@dataclass(frozen=True)
class SoftmaxGrid:
    """Per-voxel class probability vectors over all classes including empty.

    ``probs[u, v, d, j]`` is the probability of class ``j + 1``; vectors
    sum to 1 within ``SOFTMAX_SUM_TOL``.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(np.asarray(self.probs, dtype=np.float32))
        if probs.ndim != 4:
            raise ValidationError("softmax grid must be a 4-d array")
        if any(n < 1 for n in probs.shape[:3]) or probs.shape[3] < 2:
            raise ValidationError("softmax grid needs positive dims and at least 2 classes")
        if np.any(probs < 0):
            raise ValidationError("softmax entries must be non-negative")
        sums = probs.sum(axis=3, dtype=np.float64)
        if not np.all(np.abs(sums - 1.0) <= SOFTMAX_SUM_TOL):
            raise ValidationError(
                f"softmax vectors must sum to 1 within {SOFTMAX_SUM_TOL}"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.probs.shape[:3]

    @property
    def class_count(self) -> int:
        return self.probs.shape[3]

    def flat(self) -> np.ndarray:
        """View as an (n_voxels, M) matrix in raster voxel order."""
        return self.probs.reshape(-1, self.probs.shape[3])


@dataclass(frozen=True)
class LabelGrid:
    """Per-voxel class labels in {1..M}; class 1 is empty (uint16 storage)."""

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size and (labels.min() < 1 or labels.max() > np.iinfo(np.uint16).max):
            raise ValidationError("labels must fit in {1..65535}")
        labels = _frozen(labels.astype(np.uint16))
        _check_3d(labels)
        m = int(self.class_count)
        object.__setattr__(self, "class_count", m)
        if m < 1:
            raise ValidationError("class_count must be at least 1")
        if labels.size and labels.max() > m:
            raise ValidationError("labels must lie in {1..class_count}")
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def occupied_mask(self) -> np.ndarray:
        """Boolean grid marking voxels whose label is any nonempty class."""
        return self.labels >= 2

    def flat(self) -> np.ndarray:
        """Labels as a 1-d array in raster voxel order."""
        return self.labels.reshape(-1)
