"""Runtime-optimized scene flow with a coherence-regularized MLP prior.

The flow field between a source cloud F1 and a target cloud F2 is the output
of a small fully connected network mapping point coordinates to 3-D
displacements. Its parameters are fitted per frame pair by plain gradient
descent on

    alpha * chamfer(F1 + flow, F2) + beta * coherence(flow)

where chamfer is the unnormalized bidirectional sum of squared
nearest-neighbor distances and the coherence term penalizes flow differences
between points sharing a DBSCAN cluster of the raw F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .clustering import ClusterLabeling, ClusterParams, DENSE_PRESET, dbscan
from .core import as_cloud
from .errors import InvalidArgumentError, NumericFailureError

__all__ = [
    "SfeConfig",
    "MlpPrior",
    "FlowEstimate",
    "SfInstance",
    "chamfer_distance",
    "coherence_loss",
    "total_loss",
    "apply_flow",
    "loss_gradient",
    "estimate_flow",
]


@dataclass(frozen=True)
class SfeConfig:
    alpha: float = 1.0                 # chamfer weight
    beta: float = 2.0                  # coherence weight
    learning_rate: float = 0.0008
    iterations: int = 30
    hidden_width: int = 128
    num_layers: int = 6                # linear layers, input and output included
    pair_weight: float = 1.0           # constant pairwise weight in the coherence term
    cluster_params: ClusterParams = field(default_factory=lambda: DENSE_PRESET)
    init_scale: float = 1.8            # uniform fan-in scale for hidden layers
    seed: int = 0
    # Optimization stops early once total loss exceeds this multiple of the
    # best loss seen, guarding against runaway divergence at a fixed step size.
    divergence_stop_factor: float = 1e6

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if not (self.learning_rate > 0):
            raise InvalidArgumentError("learning_rate must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError("alpha and beta must be non-negative")
        if self.num_layers < 2:
            raise InvalidArgumentError("num_layers must be >= 2")
        if self.hidden_width < 1:
            raise InvalidArgumentError("hidden_width must be >= 1")


class MlpPrior:
    """Fully connected 3 -> hidden... -> 3 network with ReLU hidden units.

    Hidden layers use uniform fan-in initialization scaled by
    config.init_scale; the output layer starts at zero so the initial flow
    field is identically zero.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def create(cls, config: SfeConfig) -> "MlpPrior":
        rng = np.random.default_rng(config.seed)
        dims = [3] + [config.hidden_width] * (config.num_layers - 1) + [3]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = config.init_scale / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        weights[-1][:] = 0.0
        return cls(weights, biases)

    def copy(self) -> "MlpPrior":
        return MlpPrior([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping post-activation values for backprop."""
        activations = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            activations.append(h)
        return h @ self.weights[-1] + self.biases[-1], activations

    def backprop(self, activations: list[np.ndarray], dout: np.ndarray):
        """Gradients of a scalar loss w.r.t. all weights and biases.

        `dout` is the loss gradient w.r.t. the network output, row-aligned
        with the input that produced `activations`.
        """
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = dout
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w[layer] = activations[layer].T @ delta
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ self.weights[layer].T
                delta = np.where(activations[layer] > 0, delta, 0.0)
        return grad_w, grad_b

    def step(self, grad_w, grad_b, lr: float) -> None:
        for w, gw in zip(self.weights, grad_w):
            w -= lr * gw
        for b, gb in zip(self.biases, grad_b):
            b -= lr * gb


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def chamfer_distance(f1, f2) -> float:
    """Bidirectional sum of squared nearest-neighbor distances (no normalization)."""
    a = as_cloud(f1)
    b = as_cloud(f2)
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgumentError("chamfer distance is undefined for empty clouds")
    d_fwd, _ = cKDTree(b).query(a)
    d_bwd, _ = cKDTree(a).query(b)
    return float(np.dot(d_fwd, d_fwd) + np.dot(d_bwd, d_bwd))


def _cluster_stats(labeling: ClusterLabeling):
    labels = labeling.labels
    valid = labels >= 0
    n_valid = int(valid.sum())
    counts = np.bincount(labels[valid], minlength=labeling.num_clusters) if n_valid else np.zeros(0, dtype=np.int64)
    return valid, n_valid, counts


def coherence_loss(f1, flow, labeling: ClusterLabeling, pair_weight: float = 1.0) -> float:
    """Mean squared flow disagreement over ordered same-cluster point pairs.

    Normalized by N^2 where N counts points in valid (non-outlier) clusters;
    returns 0 when no valid cluster exists.
    """
    pts = as_cloud(f1)
    fl = as_cloud(flow)
    if len(fl) != len(pts) or len(labeling.labels) != len(pts):
        raise InvalidArgumentError("flow and labeling must be aligned with the cloud")
    valid, n_valid, counts = _cluster_stats(labeling)
    if n_valid == 0:
        return 0.0
    labels = labeling.labels
    sums = np.zeros((labeling.num_clusters, 3))
    np.add.at(sums, labels[valid], fl[valid])
    sq = np.einsum("ij,ij->i", fl, fl)
    sq_per_cluster = np.bincount(labels[valid], weights=sq[valid], minlength=labeling.num_clusters)
    # sum over ordered pairs in cluster c: 2*n_c*sum|f|^2 - 2*|sum f|^2
    per_cluster = 2.0 * counts * sq_per_cluster - 2.0 * np.einsum("ij,ij->i", sums, sums)
    # cancellation can produce tiny negatives; the true value is >= 0
    return max(0.0, float(pair_weight * per_cluster.sum() / n_valid**2))


def apply_flow(cloud, flow) -> np.ndarray:
    pts = as_cloud(cloud)
    fl = as_cloud(flow)
    if len(fl) != len(pts):
        raise InvalidArgumentError(f"flow length {len(fl)} != cloud length {len(pts)}")
    return pts + fl


def total_loss(f1, f2, flow, labeling: ClusterLabeling, config: SfeConfig) -> float:
    return config.alpha * chamfer_distance(apply_flow(f1, flow), f2) + config.beta * coherence_loss(
        f1, flow, labeling, config.pair_weight
    )


# ---------------------------------------------------------------------------
# Gradient and optimization
# ---------------------------------------------------------------------------

@dataclass
class SfInstance:
    """A frame pair plus the fixed clustering of the source cloud.

    The network input is the source cloud centered and scaled to unit RMS
    radius, so optimization behaves the same regardless of scene extent;
    the flow output stays in meters.
    """

    f1: np.ndarray
    f2: np.ndarray
    labeling: ClusterLabeling
    config: SfeConfig
    _tree2: cKDTree | None = None
    x_in: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        self.f1 = as_cloud(self.f1)
        self.f2 = as_cloud(self.f2)
        if len(self.f1) == 0 or len(self.f2) == 0:
            raise InvalidArgumentError("scene flow requires non-empty clouds")
        if len(self.labeling.labels) != len(self.f1):
            raise InvalidArgumentError("labeling must be aligned with f1")
        if self._tree2 is None:
            self._tree2 = cKDTree(self.f2)
        if self.x_in is None:
            self.center = self.f1.mean(axis=0)
            centered = self.f1 - self.center
            self.radius = max(float(np.sqrt(np.mean(np.sum(centered**2, axis=1)))), 1e-9)
            self.x_in = centered / self.radius


def _evaluate(mlp: MlpPrior, inst: SfInstance):
    """One forward evaluation: losses plus the per-point flow gradient.

    Chamfer nearest-neighbor correspondences are treated as fixed at their
    current values; they are recomputed on every call.
    """
    cfg = inst.config
    flow, activations = mlp.forward_cached(inst.x_in)
    warped = inst.f1 + flow

    d_fwd, nn_fwd = inst._tree2.query(warped)
    d_bwd, nn_bwd = cKDTree(warped).query(inst.f2)
    chamfer = float(np.dot(d_fwd, d_fwd) + np.dot(d_bwd, d_bwd))

    dflow = 2.0 * (warped - inst.f2[nn_fwd])
    back = 2.0 * (warped[nn_bwd] - inst.f2)
    np.add.at(dflow, nn_bwd, back)
    dflow *= cfg.alpha

    valid, n_valid, counts = _cluster_stats(inst.labeling)
    if n_valid > 0:
        labels = inst.labeling.labels
        sums = np.zeros((inst.labeling.num_clusters, 3))
        np.add.at(sums, labels[valid], flow[valid])
        sq = np.einsum("ij,ij->i", flow, flow)
        sq_pc = np.bincount(labels[valid], weights=sq[valid], minlength=inst.labeling.num_clusters)
        per_cluster = 2.0 * counts * sq_pc - 2.0 * np.einsum("ij,ij->i", sums, sums)
        coherence = max(0.0, float(cfg.pair_weight * per_cluster.sum() / n_valid**2))
        coh_grad = np.zeros_like(flow)
        vl = labels[valid]
        coh_grad[valid] = (4.0 * cfg.pair_weight / n_valid**2) * (
            counts[vl, None] * flow[valid] - sums[vl]
        )
        dflow += cfg.beta * coh_grad
    else:
        coherence = 0.0

    return flow, activations, dflow, chamfer, coherence


def loss_gradient(mlp: MlpPrior, inst: SfInstance):
    """Gradient of the total loss w.r.t. all MLP parameters.

    Returns (grad_weights, grad_biases, chamfer, coherence). Nearest-neighbor
    correspondences are held fixed within the evaluation.
    """
    flow, activations, dflow, chamfer, coherence = _evaluate(mlp, inst)
    grad_w, grad_b = mlp.backprop(activations, dflow)
    for g in grad_w + grad_b:
        if not np.isfinite(g).all():
            raise NumericFailureError("non-finite gradient")
    return grad_w, grad_b, chamfer, coherence


@dataclass
class FlowEstimate:
    """Result of one runtime flow solve."""

    flow: np.ndarray               # displacement of the best-loss iterate
    trace: np.ndarray              # (iterations, 2): chamfer and coherence per iteration
    labeling: ClusterLabeling      # fixed DBSCAN mask computed on raw F1
    best_iteration: int            # 0 = initial parameters
    best_loss: float
    mlp: MlpPrior | None = None    # parameters of the best-loss iterate
    center: np.ndarray | None = None   # input normalization used during the fit
    radius: float | None = None

    def flow_at(self, points) -> np.ndarray:
        """Evaluate the fitted flow field at arbitrary points."""
        if self.mlp is None:
            raise InvalidArgumentError("this estimate does not carry its model")
        pts = as_cloud(points)
        return self.mlp.forward((pts - self.center) / self.radius)


def estimate_flow(f1, f2, config: SfeConfig) -> FlowEstimate:
    """Fit the MLP prior to a frame pair and return the best-loss flow.

    The clustering mask is computed once on the raw F1 and held fixed. The
    trace records the loss terms after each parameter update; the returned
    flow belongs to the iterate (initial parameters included) with the lowest
    total loss, which makes best-so-far loss non-increasing by construction.
    """
    f1 = as_cloud(f1)
    f2 = as_cloud(f2)
    if len(f1) == 0 or len(f2) == 0:
        raise InvalidArgumentError("estimate_flow requires non-empty clouds")
    labeling = dbscan(f1, config.cluster_params)
    inst = SfInstance(f1=f1, f2=f2, labeling=labeling, config=config)
    mlp = MlpPrior.create(config)

    trace = []
    best_iteration = 0

    flow, activations, dflow, chamfer, coherence = _evaluate(mlp, inst)
    total = config.alpha * chamfer + config.beta * coherence
    if not np.isfinite(total):
        raise NumericFailureError("non-finite loss at initialization", iteration=0)
    best_flow, best_total, best_mlp = flow, total, mlp.copy()

    for it in range(1, config.iterations + 1):
        grad_w, grad_b = mlp.backprop(activations, dflow)
        mlp.step(grad_w, grad_b, config.learning_rate)
        flow, activations, dflow, chamfer, coherence = _evaluate(mlp, inst)
        total = config.alpha * chamfer + config.beta * coherence
        if not np.isfinite(total):
            raise NumericFailureError(f"non-finite loss at iteration {it}", iteration=it)
        trace.append((chamfer, coherence))
        if total < best_total:
            best_flow, best_total, best_iteration, best_mlp = flow, total, it, mlp.copy()
        if total > config.divergence_stop_factor * (best_total + 1e-12):
            break

    return FlowEstimate(
        flow=best_flow,
        trace=np.array(trace, dtype=np.float64).reshape(-1, 2),
        labeling=labeling,
        best_iteration=best_iteration,
        best_loss=float(best_total),
        mlp=best_mlp,
        center=inst.center,
        radius=inst.radius,
    )
