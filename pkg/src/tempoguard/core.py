"""Point-cloud primitives: clouds, frames, voxel grids, downsampling.

A point cloud is a float64 numpy array of shape (N, 3) in meters. Index i
refers to the same point for the lifetime of the array; clouds are treated
as immutable once constructed. Frames are assumed to live in a common world
frame (ego-motion compensation applied upstream or negligible).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["Frame", "VoxelGrid", "as_cloud", "empty_cloud", "voxelize", "downsample"]


def empty_cloud() -> np.ndarray:
    return np.empty((0, 3), dtype=np.float64)


def as_cloud(points) -> np.ndarray:
    """Validate and normalize input into an (N, 3) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return empty_cloud()
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgumentError(f"point cloud must have shape (N, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise InvalidArgumentError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Frame:
    """A timestamped point-cloud frame within a sequence."""

    index: int
    timestamp: float
    points: np.ndarray

    def __post_init__(self):
        if self.index < 0:
            raise InvalidArgumentError(f"frame index must be non-negative, got {self.index}")
        if not np.isfinite(self.timestamp):
            raise InvalidArgumentError("frame timestamp must be finite")
        object.__setattr__(self, "points", as_cloud(self.points))


@dataclass(frozen=True)
class VoxelGrid:
    """Partition of a cloud's point indices into cubic voxels.

    The voxel index of point p is floor((p - origin) / side) per axis, so
    a point exactly on a boundary belongs to the higher-index voxel.
    """

    side: float
    origin: np.ndarray
    cells: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)

    def num_points(self) -> int:
        return sum(len(v) for v in self.cells.values())


def _voxel_indices(pts: np.ndarray, side: float, origin: np.ndarray) -> np.ndarray:
    return np.floor((pts - origin[None, :]) / side).astype(np.int64)


def voxelize(cloud, side: float, origin=None) -> VoxelGrid:
    """Bucket point indices into cubic voxels of edge `side`.

    The origin defaults to the component-wise minimum of the cloud so voxel
    indices are non-negative; pass an explicit origin to align grids across
    frames.
    """
    if side <= 0:
        raise InvalidArgumentError(f"voxel side must be positive, got {side}")
    pts = as_cloud(cloud)
    if origin is None:
        origin = pts.min(axis=0) if len(pts) else np.zeros(3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    if len(pts) == 0:
        return VoxelGrid(side=float(side), origin=origin, cells={})
    vox = _voxel_indices(pts, float(side), origin)
    order = np.lexsort((vox[:, 2], vox[:, 1], vox[:, 0]))
    vox_sorted = vox[order]
    change = np.ones(len(order), dtype=bool)
    change[1:] = np.any(vox_sorted[1:] != vox_sorted[:-1], axis=1)
    starts = np.flatnonzero(change)
    bounds = np.append(starts, len(order))
    cells = {}
    for s, e in zip(bounds[:-1], bounds[1:]):
        key = tuple(int(c) for c in vox_sorted[s])
        cells[key] = np.sort(order[s:e])
    return VoxelGrid(side=float(side), origin=origin, cells=cells)


def downsample(cloud, side: float, origin=None) -> np.ndarray:
    """Replace each non-empty voxel by the centroid of its points.

    Output order follows lexicographic voxel-index order; output size never
    exceeds input size, and a cloud with at most one point per voxel maps to
    itself (up to ordering).
    """
    grid = voxelize(cloud, side, origin)
    pts = as_cloud(cloud)
    if not grid.cells:
        return empty_cloud()
    out = np.empty((len(grid.cells), 3), dtype=np.float64)
    for row, key in enumerate(sorted(grid.cells)):
        out[row] = pts[grid.cells[key]].mean(axis=0)
    return out


def downsample_with_members(cloud, side: float, origin=None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Like downsample, additionally returning per-centroid source indices."""
    grid = voxelize(cloud, side, origin)
    pts = as_cloud(cloud)
    if not grid.cells:
        return empty_cloud(), []
    keys = sorted(grid.cells)
    out = np.empty((len(keys), 3), dtype=np.float64)
    members = []
    for row, key in enumerate(keys):
        idx = grid.cells[key]
        out[row] = pts[idx].mean(axis=0)
        members.append(idx)
    return out, members
