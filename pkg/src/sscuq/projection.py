"""Back-projection of depth maps into probabilistic and binary voxel grids.

A pixel (h, w) observed at depth z maps to the camera-frame point

    x = (h - c_h) * z / f_u,   y = (w - c_w) * z / f_v,

so each pixel's ray is the line ``z -> (kx*z, ky*z, z)``.  Rays are
traversed through the voxel lattice exactly: the segment boundaries are
the ray's crossings of the grid planes, parameterized by camera-frame
depth z (not arc length), which makes the per-voxel Gaussian integral
bounds the crossing depths directly.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .depth import _interval_prob
from .grids import (
    BinaryOccupancyGrid,
    CameraIntrinsics,
    DepthEstimate,
    GridGeometry,
    ProbOccupancyGrid,
)

__all__ = [
    "RaySegment",
    "pixel_to_point",
    "ray_direction",
    "traverse_ray",
    "build_prob_grid",
    "build_binary_grid",
]


class RaySegment(NamedTuple):
    """One voxel crossed by a ray, with entry and exit depths (meters)."""

    voxel: tuple[int, int, int]
    z_entry: float
    z_exit: float


def pixel_to_point(h: float, w: float, z: float, intr: CameraIntrinsics):
    """Back-project pixel (h, w) at depth z to a camera-frame point."""
    if not z > 0:
        raise ValueError(f"depth must be positive, got {z}")
    x = (h - intr.c_h) * z / intr.f_u
    y = (w - intr.c_w) * z / intr.f_v
    return (x, y, z)


def ray_direction(h: float, w: float, intr: CameraIntrinsics) -> np.ndarray:
    """Direction (dx/dz, dy/dz, 1) of the pixel's ray, depth-parameterized."""
    return np.array(
        [(h - intr.c_h) / intr.f_u, (w - intr.c_w) / intr.f_v, 1.0], dtype=np.float64
    )


def _ray_segments(dirs: np.ndarray, geom: GridGeometry, z_max: float):
    """Exact voxel crossings of the ray ``z -> dirs * z`` within the grid.

    Returns ``(idx, z_lo, z_hi)`` with idx an (n, 3) int array of voxel
    indices and the segment depth bounds, ordered by increasing z and
    with zero-length segments dropped.
    """
    origin = geom.origin
    edge = geom.voxel_edge
    dims = geom.dims

    lo, hi = 0.0, float(z_max)
    for ax in range(3):
        d = dirs[ax]
        if d == 0.0:
            if not (origin[ax] <= 0.0 < origin[ax] + dims[ax] * edge):
                return _EMPTY_SEGMENTS
            continue
        za = origin[ax] / d
        zb = (origin[ax] + dims[ax] * edge) / d
        lo = max(lo, min(za, zb))
        hi = min(hi, max(za, zb))
    if not hi > lo:
        return _EMPTY_SEGMENTS

    cuts = [np.array([lo, hi])]
    for ax in range(3):
        d = dirs[ax]
        if d == 0.0:
            continue
        zc = (origin[ax] + edge * np.arange(dims[ax] + 1)) / d
        cuts.append(zc[(zc > lo) & (zc < hi)])
    zs = np.sort(np.concatenate(cuts))
    z_lo, z_hi = zs[:-1], zs[1:]
    keep = z_hi > z_lo
    z_lo, z_hi = z_lo[keep], z_hi[keep]

    mids = 0.5 * (z_lo + z_hi)
    idx = np.floor((dirs[None, :] * mids[:, None] - origin[None, :]) / edge).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
    return idx[ok], z_lo[ok], z_hi[ok]


_EMPTY_SEGMENTS = (
    np.empty((0, 3), dtype=np.int64),
    np.empty(0, dtype=np.float64),
    np.empty(0, dtype=np.float64),
)


def traverse_ray(
    h: float,
    w: float,
    intr: CameraIntrinsics,
    geom: GridGeometry,
    z_max: float | None = None,
) -> list[RaySegment]:
    """Ordered voxels crossed by pixel (h, w)'s ray with z in (0, z_max].

    Consecutive segments share their boundary depth, no voxel repeats,
    and corner grazes of zero depth extent are dropped.  A ray that
    misses the grid returns an empty list.
    """
    if z_max is None:
        z_max = np.inf
    elif not z_max > 0:
        raise ValueError(f"z_max must be positive, got {z_max}")
    idx, z_lo, z_hi = _ray_segments(ray_direction(h, w, intr), geom, z_max)
    return [
        RaySegment((int(i[0]), int(i[1]), int(i[2])), float(a), float(b))
        for i, a, b in zip(idx, z_lo, z_hi)
    ]


def build_prob_grid(
    est: DepthEstimate,
    intr: CameraIntrinsics,
    geom: GridGeometry,
    sigma_cut: float | None = None,
) -> ProbOccupancyGrid:
    """Probabilistic occupancy: per voxel, the clamped sum over rays of the
    Gaussian depth mass falling between the ray's entry and exit depths.

    Pixels are accumulated in raster order into a float64 buffer and the
    total is clamped to 1, so the result is deterministic.  ``sigma_cut``
    optionally truncates each ray ``sigma_cut`` standard deviations past
    its depth mean; leave it None for exact results.
    """
    if (est.shape[0], est.shape[1]) != (intr.height, intr.width):
        raise ValueError(
            f"depth map {est.shape} does not match intrinsics "
            f"{(intr.height, intr.width)}"
        )
    if sigma_cut is not None and not sigma_cut > 0:
        raise ValueError(f"sigma_cut must be positive, got {sigma_cut}")

    acc = np.zeros(geom.dims, dtype=np.float64)
    rows, cols = np.nonzero(est.valid_mask)
    for h, w in zip(rows.tolist(), cols.tolist()):
        mean = est.mean[h, w]
        sigma = est.sigma[h, w]
        z_max = mean + sigma_cut * sigma if sigma_cut is not None else np.inf
        idx, z_lo, z_hi = _ray_segments(ray_direction(h, w, intr), geom, z_max)
        if idx.shape[0] == 0:
            continue
        p = _interval_prob(z_lo, z_hi, mean, sigma)
        np.add.at(acc, (idx[:, 0], idx[:, 1], idx[:, 2]), p)
    return ProbOccupancyGrid(np.minimum(acc, 1.0).astype(np.float32))


def build_binary_grid(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    geom: GridGeometry,
    valid: np.ndarray | None = None,
) -> BinaryOccupancyGrid:
    """Binary occupancy: a voxel is 1 iff some pixel's point falls inside it.

    ``depth`` holds per-pixel depths; ``valid`` masks the pixels to use
    (all finite positive entries by default).  Points exactly on a voxel
    face belong to the voxel with the larger index (half-open voxels).
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ValueError(
            f"depth map {depth.shape} does not match intrinsics "
            f"{(intr.height, intr.width)}"
        )
    if valid is None:
        valid = np.isfinite(depth) & (depth > 0)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != depth.shape:
            raise ValueError("valid mask shape must match the depth map")
        if np.any(depth[valid] <= 0):
            raise ValueError("depths must be positive on valid pixels")

    h, w = np.nonzero(valid)
    z = depth[h, w]
    x = (h - intr.c_h) * z / intr.f_u
    y = (w - intr.c_w) * z / intr.f_v
    pts = np.stack([x, y, z], axis=1)
    idx = np.floor((pts - geom.origin[None, :]) / geom.voxel_edge).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(geom.dims)), axis=1)
    values = np.zeros(geom.dims, dtype=np.uint8)
    values[idx[ok, 0], idx[ok, 1], idx[ok, 2]] = 1
    return BinaryOccupancyGrid(values)
