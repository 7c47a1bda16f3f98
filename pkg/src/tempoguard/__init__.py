"""Point-level temporal-consistency detection of injected LiDAR point clusters.

The pipeline warps a rolling history of point-cloud frames into a synthesis
via coherence-regularized runtime scene flow, merges the warped synthesis
with each incoming frame, and flags density clusters that contain no
historical points as fabricated objects.
"""

from .clustering import ClusterLabeling, ClusterParams, DENSE_PRESET, SPARSE_PRESET, dbscan, same_cluster
from .core import Frame, VoxelGrid, as_cloud, downsample, empty_cloud, voxelize
from .detector import (
    DetectionReport,
    DetectorConfig,
    MergedCloud,
    PipelineConfig,
    Provenance,
    anomaly_score,
    baseline_cd_metric,
    detect,
    merge,
    residual_clusters,
)
from .errors import (
    FrameFormatError,
    InvalidArgumentError,
    NonFiniteValueError,
    NumericFailureError,
    TempoGuardError,
    TruncatedRecordError,
)
from .frameio import load_frames, save_frames
from .sceneflow import (
    FlowEstimate,
    MlpPrior,
    SfeConfig,
    apply_flow,
    chamfer_distance,
    coherence_loss,
    estimate_flow,
    total_loss,
)
from .synthesis import HistoryBuffer, Synthesis, propagate_flow, warp_to_incoming

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
