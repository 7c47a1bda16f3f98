"""DBSCAN density clustering over 3-D point clouds.

Used in two places: the binary same-cluster mask inside the flow coherence
loss, and the residual-cluster rule of the detector. Neighborhood counting
includes the point itself, so a point with min_pts - 1 neighbors within eps
is core. Border points reachable from several clusters go to the cluster of
their closest core neighbor (ties broken by lowest core index), which makes
the partition independent of input order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import as_cloud
from .errors import InvalidArgumentError

__all__ = ["ClusterParams", "ClusterLabeling", "dbscan", "same_cluster", "DENSE_PRESET", "SPARSE_PRESET"]


@dataclass(frozen=True)
class ClusterParams:
    """eps: max neighbor distance (m); min_pts: minimum cluster population."""

    eps: float
    min_pts: int

    def __post_init__(self):
        if not (self.eps > 0):
            raise InvalidArgumentError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise InvalidArgumentError(f"min_pts must be >= 1, got {self.min_pts}")


# Operating points for the two injection threat models.
DENSE_PRESET = ClusterParams(eps=0.25, min_pts=17)
SPARSE_PRESET = ClusterParams(eps=0.75, min_pts=9)


@dataclass(frozen=True)
class ClusterLabeling:
    """Per-point labels: -1 for outliers, 0..num_clusters-1 for clusters."""

    labels: np.ndarray
    num_clusters: int

    def cluster_indices(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cid)


def dbscan(cloud, params: ClusterParams) -> ClusterLabeling:
    """Cluster with Euclidean DBSCAN semantics.

    Clusters are maximal density-connected sets of core points plus the
    border points they reach; everything else is an outlier. Cluster ids are
    assigned in order of each cluster's lowest core-point index.
    """
    if not isinstance(params, ClusterParams):
        raise InvalidArgumentError("params must be a ClusterParams")
    pts = as_cloud(cloud)
    n = len(pts)
    if n == 0:
        return ClusterLabeling(labels=np.empty(0, dtype=np.int64), num_clusters=0)

    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, r=params.eps)
    core = np.fromiter((len(nb) >= params.min_pts for nb in neighborhoods), dtype=bool, count=n)

    labels = np.full(n, -1, dtype=np.int64)
    cid = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cid
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in neighborhoods[i]:
                if core[j] and labels[j] == -1:
                    labels[j] = cid
                    queue.append(j)
        cid += 1

    # Border points: nearest core neighbor wins, ties by lowest core index.
    for i in range(n):
        if core[i]:
            continue
        best = None
        for j in neighborhoods[i]:
            if not core[j]:
                continue
            d = np.dot(pts[i] - pts[j], pts[i] - pts[j])
            if best is None or d < best[0] or (d == best[0] and j < best[1]):
                best = (d, j)
        if best is not None:
            labels[i] = labels[best[1]]

    return ClusterLabeling(labels=labels, num_clusters=cid)


def same_cluster(labeling: ClusterLabeling, i: int, j: int) -> bool:
    """True iff points i and j share a cluster (outliers never match)."""
    labels = labeling.labels
    n = len(labels)
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidArgumentError(f"point index out of range: ({i}, {j}) for {n} points")
    return labels[i] == labels[j] != -1
