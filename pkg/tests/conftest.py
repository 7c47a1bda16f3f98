"""Shared fixtures and reference implementations used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from tempoguard.clustering import ClusterLabeling, ClusterParams


def brute_force_dbscan(pts: np.ndarray, params: ClusterParams) -> np.ndarray:
    """O(n^2) DBSCAN reference returning a canonical partition id per point.

    Cluster ids are canonicalized by the lowest member index so partitions
    can be compared across implementations; border points reachable from
    several clusters follow the closest core point (ties to the lowest core
    index), matching the library's documented rule. Outliers get -1.
    """
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    within = d2 <= params.eps**2
    core = within.sum(axis=1) >= params.min_pts

    labels = np.full(n, -1, dtype=np.int64)
    cid = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        stack = [seed]
        labels[seed] = cid
        while stack:
            i = stack.pop()
            for j in range(n):
                if within[i, j] and core[j] and labels[j] == -1:
                    labels[j] = cid
                    stack.append(j)
        cid += 1

    for i in range(n):
        if core[i]:
            continue
        best = None
        for j in range(n):
            if within[i, j] and core[j]:
                key = (d2[i, j], j)
                if best is None or key < best:
                    best = key
        if best is not None:
            labels[i] = labels[best[1]]
    return canonical_partition(labels)


def canonical_partition(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by their lowest member index; -1 stays -1."""
    out = np.full(len(labels), -1, dtype=np.int64)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab == -1:
            continue
        if lab not in mapping:
            mapping[lab] = i
        out[i] = mapping[lab]
    return out


def brute_force_coherence(f1, flow, labels, pair_weight=1.0) -> float:
    """Double-loop oracle for the coherence loss."""
    valid = labels >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0
    total = 0.0
    n = len(flow)
    for i in range(n):
        for j in range(n):
            if i != j and labels[i] == labels[j] != -1:
                d = flow[i] - flow[j]
                total += pair_weight * float(np.dot(d, d))
    return total / n_valid**2


def brute_force_chamfer(a, b) -> float:
    """Double-loop oracle for the unnormalized bidirectional chamfer sum."""
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).sum() + d2.min(axis=0).sum())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
