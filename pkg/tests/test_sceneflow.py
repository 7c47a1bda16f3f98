import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tempoguard.attacksim import rigid_translation_instance
from tempoguard.clustering import ClusterLabeling, ClusterParams, dbscan
from tempoguard.errors import InvalidArgumentError
from tempoguard.sceneflow import (
    MlpPrior,
    SfeConfig,
    SfInstance,
    apply_flow,
    chamfer_distance,
    coherence_loss,
    estimate_flow,
    loss_gradient,
    total_loss,
)

from conftest import brute_force_chamfer, brute_force_coherence

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def test_chamfer_hand_values():
    # Single points a unit apart: 1^2 forward + 1^2 backward.
    assert chamfer_distance([[0.0, 0, 0]], [[1.0, 0, 0]]) == pytest.approx(2.0)
    # Identical clouds have zero distance.
    pts = [[0.0, 0, 0], [1.0, 2, 3]]
    assert chamfer_distance(pts, pts) == pytest.approx(0.0)
    # Two source points sharing the same nearest target: sum, not mean.
    got = chamfer_distance([[0.0, 0, 0], [2.0, 0, 0]], [[1.0, 0, 0]])
    assert got == pytest.approx(1.0 + 1.0 + 1.0)


def test_chamfer_is_unnormalized():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0.0, 0.0]])
    # 10 copies of the source point: forward term grows tenfold, backward stays 1.
    assert chamfer_distance(np.repeat(a, 10, axis=0), b) == pytest.approx(11.0)


def test_chamfer_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        chamfer_distance(np.empty((0, 3)), np.zeros((1, 3)))


@given(
    a=arrays(np.float64, st.tuples(st.integers(1, 15), st.just(3)), elements=finite),
    b=arrays(np.float64, st.tuples(st.integers(1, 15), st.just(3)), elements=finite),
)
@settings(max_examples=60, deadline=None)
def test_chamfer_matches_brute_force(a, b):
    assert chamfer_distance(a, b) == pytest.approx(brute_force_chamfer(a, b), abs=1e-9)


def test_coherence_two_point_hand_value():
    # One cluster of two points with unit flow disagreement:
    # ordered pairs contribute 2 * |d|^2, normalized by N^2 = 4 -> 0.5.
    f1 = np.zeros((2, 3))
    flow = np.array([[1.0, 0, 0], [0.0, 0, 0]])
    labeling = ClusterLabeling(labels=np.array([0, 0]), num_clusters=1)
    assert coherence_loss(f1, flow, labeling) == pytest.approx(0.5)


def test_coherence_zero_without_clusters():
    f1 = np.zeros((3, 3))
    flow = np.random.default_rng(0).normal(size=(3, 3))
    labeling = ClusterLabeling(labels=np.array([-1, -1, -1]), num_clusters=0)
    assert coherence_loss(f1, flow, labeling) == 0.0


def test_coherence_zero_for_uniform_flow():
    f1 = np.zeros((4, 3))
    flow = np.tile([0.3, -0.2, 0.1], (4, 1))
    labeling = ClusterLabeling(labels=np.zeros(4, dtype=np.int64), num_clusters=1)
    assert coherence_loss(f1, flow, labeling) == pytest.approx(0.0, abs=1e-12)


def test_coherence_outliers_do_not_contribute():
    f1 = np.zeros((3, 3))
    flow = np.array([[1.0, 0, 0], [0.0, 0, 0], [9.0, 9, 9]])
    with_outlier = ClusterLabeling(labels=np.array([0, 0, -1]), num_clusters=1)
    assert coherence_loss(f1, flow, with_outlier) == pytest.approx(0.5)


@given(
    flow=arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)), elements=finite),
    seed=st.integers(0, 2**31),
    weight=st.floats(0.1, 3.0),
)
@settings(max_examples=60, deadline=None)
def test_coherence_matches_double_loop(flow, seed, weight):
    n = len(flow)
    labels = np.random.default_rng(seed).integers(-1, 3, size=n)
    used = sorted(set(labels[labels >= 0]))
    labels = np.array([used.index(v) if v >= 0 else -1 for v in labels], dtype=np.int64)
    labeling = ClusterLabeling(labels=labels, num_clusters=len(used))
    f1 = np.zeros((n, 3))
    got = coherence_loss(f1, flow, labeling, pair_weight=weight)
    want = brute_force_coherence(f1, flow, labels, pair_weight=weight)
    assert got == pytest.approx(want, abs=1e-9, rel=1e-9)
    assert got >= 0.0


def test_apply_flow_and_total_loss():
    f1 = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    flow = np.array([[0.5, 0, 0], [0.5, 0, 0]])
    assert np.allclose(apply_flow(f1, flow), f1 + flow)
    with pytest.raises(InvalidArgumentError):
        apply_flow(f1, flow[:1])
    labeling = ClusterLabeling(labels=np.array([0, 0]), num_clusters=1)
    cfg = SfeConfig(alpha=2.0, beta=3.0)
    want = 2.0 * chamfer_distance(f1 + flow, f1) + 3.0 * coherence_loss(f1, flow, labeling)
    assert total_loss(f1, f1, flow, labeling, cfg) == pytest.approx(want)


# ---------------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------------

def _fd_check(seed: int, h: float = 1e-4, samples: int = 6) -> float:
    """Max relative error between backprop and central finite differences."""
    rng = np.random.default_rng(seed)
    cfg = SfeConfig(hidden_width=8, num_layers=3, seed=seed,
                    cluster_params=ClusterParams(eps=1.0, min_pts=2))
    f1 = rng.normal(0.0, 0.5, (12, 3))
    f2 = f1 + rng.normal(0.0, 0.2, (12, 3))
    labeling = dbscan(f1, cfg.cluster_params)
    inst = SfInstance(f1=f1, f2=f2, labeling=labeling, config=cfg)
    mlp = MlpPrior.create(cfg)
    # Perturb so hidden activations sit away from the ReLU kink and the
    # output layer is non-zero.
    for w in mlp.weights:
        w += rng.normal(0.0, 0.05, w.shape)

    grad_w, grad_b, _, _ = loss_gradient(mlp, inst)

    def loss_at() -> float:
        flow = mlp.forward(inst.x_in)
        return total_loss(f1, f2, flow, labeling, cfg)

    worst = 0.0
    for layer in range(len(mlp.weights)):
        w = mlp.weights[layer]
        for _ in range(samples):
            i, j = rng.integers(w.shape[0]), rng.integers(w.shape[1])
            orig = w[i, j]
            w[i, j] = orig + h
            up = loss_at()
            w[i, j] = orig - h
            down = loss_at()
            w[i, j] = orig
            fd = (up - down) / (2 * h)
            an = grad_w[layer][i, j]
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    assert _fd_check(seed) < 1e-3


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def test_initial_flow_is_zero():
    cfg = SfeConfig()
    mlp = MlpPrior.create(cfg)
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert np.allclose(mlp.forward(x), 0.0)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        SfeConfig(iterations=0)
    with pytest.raises(InvalidArgumentError):
        SfeConfig(learning_rate=0.0)
    with pytest.raises(InvalidArgumentError):
        SfeConfig(alpha=-1.0)
    with pytest.raises(InvalidArgumentError):
        SfeConfig(num_layers=1)


def test_rigid_translation_recovery():
    f1, f2, t = rigid_translation_instance(seed=0)
    est = estimate_flow(f1, f2, SfeConfig())
    epe = float(np.mean(np.linalg.norm(est.flow - t, axis=1)))
    assert epe < 0.1


def test_rigid_recovery_without_coherence():
    f1, f2, t = rigid_translation_instance(seed=1)
    est = estimate_flow(f1, f2, SfeConfig(beta=0.0))
    epe = float(np.mean(np.linalg.norm(est.flow - t, axis=1)))
    assert epe < 0.15


def test_best_so_far_loss_non_increasing():
    f1, f2, _ = rigid_translation_instance(seed=2, n_points=200)
    cfg = SfeConfig()
    est = estimate_flow(f1, f2, cfg)
    totals = cfg.alpha * est.trace[:, 0] + cfg.beta * est.trace[:, 1]
    best_so_far = np.minimum.accumulate(totals)
    assert np.all(np.diff(best_so_far) <= 1e-12)
    assert est.best_loss <= totals.min() + 1e-9


def test_estimate_flow_is_deterministic():
    f1, f2, _ = rigid_translation_instance(seed=3, n_points=150)
    a = estimate_flow(f1, f2, SfeConfig())
    b = estimate_flow(f1, f2, SfeConfig())
    assert np.array_equal(a.flow, b.flow)
    assert np.array_equal(a.trace, b.trace)
    assert a.best_iteration == b.best_iteration


def test_flow_at_matches_fit_points():
    f1, f2, _ = rigid_translation_instance(seed=4, n_points=150)
    est = estimate_flow(f1, f2, SfeConfig())
    assert np.allclose(est.flow_at(f1), est.flow, atol=1e-10)


def test_flow_at_input_normalization_is_scale_invariant():
    # The same instance rigidly shifted far from the origin must produce the
    # same solve, because the network sees centered, unit-RMS inputs.
    f1, f2, _ = rigid_translation_instance(seed=5, n_points=150)
    shift = np.array([500.0, -300.0, 50.0])
    a = estimate_flow(f1, f2, SfeConfig())
    b = estimate_flow(f1 + shift, f2 + shift, SfeConfig())
    assert np.allclose(a.flow, b.flow, atol=1e-6)


def test_trace_shape_and_labeling():
    f1, f2, _ = rigid_translation_instance(seed=6, n_points=100)
    cfg = SfeConfig(iterations=12)
    est = estimate_flow(f1, f2, cfg)
    assert est.trace.shape == (12, 2)
    assert np.all(est.trace >= 0.0)
    assert len(est.labeling.labels) == len(f1)


def test_estimate_flow_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        estimate_flow(np.empty((0, 3)), np.zeros((1, 3)), SfeConfig())
