"""History buffer and synthesis construction.

Each incoming frame triggers exactly one runtime flow solve, between the
newest buffered frame and the incoming one. The solved step flow is then
propagated backward through older buffered frames by voxel-index
correspondence and added to their accumulated displacements, so every
buffered frame stays aligned to the newest buffered timestamp at O(L) total
solves instead of O(L^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Frame, VoxelGrid, as_cloud, downsample, empty_cloud, voxelize
from .errors import InvalidArgumentError
from .sceneflow import FlowEstimate, SfeConfig, estimate_flow

__all__ = ["Synthesis", "HistoryBuffer", "propagate_flow", "warp_to_incoming"]

_NEIGHBOR_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)],
    dtype=np.int64,
)


@dataclass(frozen=True)
class Synthesis:
    """Historical points warped to a common timestamp.

    source_frame tags each point with the index of the frame it came from;
    stale marks points whose flow could not be propagated (zero flow used).
    """

    points: np.ndarray
    source_frame: np.ndarray
    stale: np.ndarray

    def __post_init__(self):
        if len(self.source_frame) != len(self.points) or len(self.stale) != len(self.points):
            raise InvalidArgumentError("synthesis metadata must align with points")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "Synthesis":
        return cls(points=empty_cloud(), source_frame=np.empty(0, dtype=np.int64), stale=np.empty(0, dtype=bool))


def propagate_flow(
    older_grid: VoxelGrid,
    newer_grid: VoxelGrid,
    newer_flow: np.ndarray,
    num_older_points: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Carry a per-point flow of the newer frame back to the older frame.

    Both grids must share side and origin. Every older point in a voxel that
    is non-empty in the newer grid receives the mean flow of the newer points
    there; otherwise the mean over the non-empty 26-neighborhood voxel flows;
    otherwise zero flow and a stale mark.
    """
    if older_grid.side != newer_grid.side or not np.array_equal(older_grid.origin, newer_grid.origin):
        raise InvalidArgumentError("voxel grids must share side and origin")
    newer_flow = as_cloud(newer_flow)
    if len(newer_flow) != newer_grid.num_points():
        raise InvalidArgumentError("newer_flow must align with the newer grid's points")

    voxel_mean = {key: newer_flow[idx].mean(axis=0) for key, idx in newer_grid.cells.items()}
    flow = np.zeros((num_older_points, 3))
    stale = np.zeros(num_older_points, dtype=bool)
    for key, idx in older_grid.cells.items():
        if key in voxel_mean:
            flow[idx] = voxel_mean[key]
            continue
        base = np.asarray(key, dtype=np.int64)
        neighbor_flows = [
            voxel_mean[nk]
            for nk in map(tuple, base + _NEIGHBOR_OFFSETS)
            if nk in voxel_mean
        ]
        if neighbor_flows:
            flow[idx] = np.mean(neighbor_flows, axis=0)
        else:
            stale[idx] = True
    return flow, stale


class HistoryBuffer:
    """Rolling buffer of the last `capacity` frames with accumulated flows.

    Single-writer: advance must not run concurrently on the same buffer.
    Frames are voxel-downsampled on entry to bound synthesis size.
    """

    def __init__(
        self,
        capacity: int = 10,
        downsample_side: float = 0.1,
        propagation_side: float = 1.0,
        sfe_config: SfeConfig | None = None,
    ):
        if capacity < 1:
            raise InvalidArgumentError("capacity must be >= 1")
        if downsample_side <= 0 or propagation_side <= 0:
            raise InvalidArgumentError("voxel sides must be positive")
        self.capacity = capacity
        self.downsample_side = downsample_side
        self.propagation_side = propagation_side
        self.sfe_config = sfe_config or SfeConfig()
        self.frames: list[Frame] = []
        self.acc_flows: list[np.ndarray] = []
        self.stale: list[np.ndarray] = []
        self.solve_count = 0
        self.last_estimate: FlowEstimate | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def _build_synthesis(self) -> Synthesis:
        if not self.frames:
            return Synthesis.empty()
        clouds, sources, stales = [], [], []
        for fr, acc, st in zip(self.frames, self.acc_flows, self.stale):
            clouds.append(fr.points + acc)
            sources.append(np.full(len(fr.points), fr.index, dtype=np.int64))
            stales.append(st)
        return Synthesis(
            points=np.concatenate(clouds),
            source_frame=np.concatenate(sources),
            stale=np.concatenate(stales),
        )

    def advance(self, frame: Frame) -> Synthesis:
        """Ingest a frame; return the synthesis aligned to its predecessor.

        Performs exactly one flow solve (previous newest -> incoming) per
        call once the buffer is non-empty; the returned synthesis is built
        from the frames buffered before ingestion.
        """
        if self.frames and frame.index <= self.frames[-1].index:
            raise InvalidArgumentError(
                f"out-of-order frame: index {frame.index} after {self.frames[-1].index}"
            )
        ds = Frame(
            index=frame.index,
            timestamp=frame.timestamp,
            points=downsample(frame.points, self.downsample_side),
        )
        synthesis = self._build_synthesis()

        if self.frames:
            prev = self.frames[-1]
            est = estimate_flow(prev.points, ds.points, self.sfe_config)
            self.solve_count += 1
            self.last_estimate = est

            # Shared grid origin: AABB minimum over the buffer and the new frame.
            mins = [fr.points.min(axis=0) for fr in self.frames if len(fr.points)]
            if len(ds.points):
                mins.append(ds.points.min(axis=0))
            origin = np.min(mins, axis=0) if mins else np.zeros(3)
            grids = [voxelize(fr.points, self.propagation_side, origin) for fr in self.frames]

            step_flows: list[np.ndarray] = [None] * len(self.frames)
            step_stale: list[np.ndarray] = [None] * len(self.frames)
            step_flows[-1] = est.flow
            step_stale[-1] = np.zeros(len(prev.points), dtype=bool)
            for k in range(len(self.frames) - 2, -1, -1):
                step_flows[k], step_stale[k] = propagate_flow(
                    grids[k], grids[k + 1], step_flows[k + 1], len(self.frames[k].points)
                )
            for k in range(len(self.frames)):
                self.acc_flows[k] = self.acc_flows[k] + step_flows[k]
                self.stale[k] = self.stale[k] | step_stale[k]

        self.frames.append(ds)
        self.acc_flows.append(np.zeros((len(ds.points), 3)))
        self.stale.append(np.zeros(len(ds.points), dtype=bool))
        if len(self.frames) > self.capacity:
            self.frames.pop(0)
            self.acc_flows.pop(0)
            self.stale.pop(0)
        return synthesis


def warp_to_incoming(
    synthesis: Synthesis,
    incoming_cloud,
    config: SfeConfig,
    max_fit_points: int | None = None,
) -> tuple[Synthesis, FlowEstimate]:
    """Align a synthesis to an incoming cloud with one flow solve.

    With max_fit_points set, the solve fits the flow field on an evenly
    strided subsample of the synthesis and evaluates the fitted field at
    every synthesis point; by default it fits on the full cloud. Provenance
    metadata is carried over unchanged.
    """
    incoming_cloud = as_cloud(incoming_cloud)
    if len(synthesis) == 0 or len(incoming_cloud) == 0:
        raise InvalidArgumentError("warp_to_incoming requires non-empty clouds")
    n = len(synthesis)
    if max_fit_points is not None and max_fit_points < 1:
        raise InvalidArgumentError("max_fit_points must be >= 1")
    if max_fit_points is not None and n > max_fit_points:
        fit_idx = np.unique(np.linspace(0, n - 1, max_fit_points).astype(np.int64))
        est = estimate_flow(synthesis.points[fit_idx], incoming_cloud, config)
        flow = est.flow_at(synthesis.points)
    else:
        est = estimate_flow(synthesis.points, incoming_cloud, config)
        flow = est.flow
    warped = Synthesis(
        points=synthesis.points + flow,
        source_frame=synthesis.source_frame,
        stale=synthesis.stale,
    )
    return warped, est
