"""Seeded benchmark suites: scenario generation, detection runs, aggregates.

A suite pairs benign and poisoned variants of the same seeded scenes; the
poisoned variant injects a fake object into the final frame only. Rows carry
the exact columns the CLI emits to CSV; FPR/TPR aggregates are recomputed
from rows.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial import cKDTree

from .attacksim import (
    AttackSpec,
    DENSE_BUDGET,
    SPARSE_BUDGET,
    ObjectPlacement,
    SceneSpec,
    TEMPLATES,
    generate_scene,
    inject,
)
from .clustering import ClusterParams, DENSE_PRESET, SPARSE_PRESET, dbscan
from .core import Frame
from .detector import DetectorConfig, PipelineConfig, detect_full, residual_clusters, anomaly_score
from .errors import InvalidArgumentError
from .sceneflow import SfeConfig, estimate_flow

__all__ = [
    "SuiteConfig",
    "ScenarioRow",
    "BenchmarkResult",
    "SweepRow",
    "AblationResult",
    "default_suite",
    "load_suite",
    "save_suite",
    "run_benchmark",
    "run_sweep",
    "run_ablation",
    "flow_variance_probe",
    "write_rows_csv",
    "BENCHMARK_COLUMNS",
]

BENCHMARK_COLUMNS = ["scenario", "label", "score", "decision", "wall_ms"]
SWEEP_COLUMNS = ["min_pts", "eps", "fpr", "tpr", "dist_ideal"]
ABLATION_COLUMNS = ["beta", "fpr", "tpr", "mean_flow_variance"]

_DENSE_TEMPLATES = ("PEDESTRIAN", "CYCLIST", "CAR")
_OBJECT_BUDGETS = {"CAR": 90, "CYCLIST": 60, "PEDESTRIAN": 50}


@dataclass(frozen=True)
class SuiteConfig:
    kind: str = "dense"            # "dense" | "sparse"
    n_benign: int = 100
    n_poisoned: int = 100
    seed_base: int = 0
    history_length: int = 10
    decision_threshold: float = 15.0
    score_mode: str = "point_count"
    downsample_side: float = 0.1
    propagation_side: float = 1.0
    eps: float | None = None       # None = preset for the kind
    min_pts: int | None = None
    # Clustering scale for the flow coherence mask. Scene objects are much
    # sparser in a single frame than injected clusters are in the merged
    # cloud, so the regularizer needs an object-scale neighborhood.
    flow_eps: float = 0.75
    flow_min_pts: int = 9
    ground_extent: float = 14.0
    ground_spacing: float = 0.9
    noise_sigma: float = 0.02
    n_objects: int = 2
    speed_range: tuple[float, float] = (0.3, 1.5)
    frame_rate: float = 10.0
    alpha: float = 1.0
    beta: float = 2.0
    learning_rate: float = 0.0008
    iterations: int = 30
    hidden_width: int = 128
    num_layers: int = 6
    init_scale: float = 1.8

    def __post_init__(self):
        if self.kind not in ("dense", "sparse"):
            raise InvalidArgumentError(f"unknown suite kind {self.kind!r}")

    def cluster_params(self) -> ClusterParams:
        preset = DENSE_PRESET if self.kind == "dense" else SPARSE_PRESET
        return ClusterParams(
            eps=self.eps if self.eps is not None else preset.eps,
            min_pts=self.min_pts if self.min_pts is not None else preset.min_pts,
        )

    def sfe_config(self, beta: float | None = None) -> SfeConfig:
        return SfeConfig(
            alpha=self.alpha,
            beta=self.beta if beta is None else beta,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            hidden_width=self.hidden_width,
            num_layers=self.num_layers,
            cluster_params=ClusterParams(eps=self.flow_eps, min_pts=self.flow_min_pts),
            init_scale=self.init_scale,
        )

    def pipeline(self, beta: float | None = None, history_length: int | None = None) -> PipelineConfig:
        return PipelineConfig(
            history_length=self.history_length if history_length is None else history_length,
            downsample_side=self.downsample_side,
            propagation_side=self.propagation_side,
            sfe=self.sfe_config(beta=beta),
            detector=DetectorConfig(
                cluster_params=self.cluster_params(),
                decision_threshold=self.decision_threshold,
                score_mode=self.score_mode,
            ),
        )


def default_suite(kind: str, **overrides) -> SuiteConfig:
    return replace(SuiteConfig(kind=kind), **overrides) if overrides else SuiteConfig(kind=kind)


def save_suite(suite: SuiteConfig, path) -> None:
    data = asdict(suite)
    data["speed_range"] = list(suite.speed_range)
    Path(path).write_text(yaml.safe_dump(data, sort_keys=True))


def load_suite(path) -> SuiteConfig:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{path}: suite config must be a mapping")
    if "speed_range" in data:
        data["speed_range"] = tuple(data["speed_range"])
    try:
        return SuiteConfig(**data)
    except TypeError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    label: str          # "benign" | "poisoned"
    seed: int
    template: str | None


def scenario_list(suite: SuiteConfig) -> list[Scenario]:
    out = []
    for i in range(suite.n_benign):
        out.append(Scenario(f"{suite.kind}-benign-{i:03d}", "benign", suite.seed_base + i, None))
    for i in range(suite.n_poisoned):
        tpl = "CAR" if suite.kind == "sparse" else _DENSE_TEMPLATES[i % len(_DENSE_TEMPLATES)]
        out.append(Scenario(f"{suite.kind}-poisoned-{tpl}-{i:03d}", "poisoned", suite.seed_base + i, tpl))
    return out


def _scene_spec(suite: SuiteConfig, seed: int, duration: int) -> SceneSpec:
    rng = np.random.default_rng([seed, 0x5EED])
    half = suite.ground_extent / 2 - 1.5
    positions = []
    while len(positions) < suite.n_objects:
        pos = rng.uniform(-half, half, 2)
        if all(np.hypot(*(pos - p)) > 3.0 for p in positions):
            positions.append(pos)
    objects = []
    for pos in positions:
        tpl = str(rng.choice(list(_OBJECT_BUDGETS)))
        speed = rng.uniform(*suite.speed_range)
        theta = rng.uniform(0, 2 * np.pi)
        objects.append(
            ObjectPlacement(
                template=tpl,
                position=(float(pos[0]), float(pos[1])),
                velocity=(float(speed * np.cos(theta)), float(speed * np.sin(theta))),
                budget=_OBJECT_BUDGETS[tpl],
            )
        )
    return SceneSpec(
        seed=seed,
        duration_frames=duration,
        frame_rate=suite.frame_rate,
        ground_extent=suite.ground_extent,
        ground_spacing=suite.ground_spacing,
        noise_sigma=suite.noise_sigma,
        objects=tuple(objects),
    )


def _horizontal_halfdiag(template: str) -> float:
    tpl = TEMPLATES[template]
    return float(np.hypot(tpl.length, tpl.width) / 2)


def _attack_position(rng, suite: SuiteConfig, gt, fake_template: str) -> tuple[float, float]:
    """Pick a fake-object center whose silhouette stays out of chaining range.

    The clearance to each real object is the sum of both horizontal
    half-diagonals plus the clustering eps and a safety margin, measured
    center-to-center across every frame's pose; if no candidate satisfies it,
    the one with the largest margin wins.
    """
    half = suite.ground_extent / 2 - 1.0
    eps = suite.cluster_params().eps
    clearances = np.array(
        [_horizontal_halfdiag(fake_template) + _horizontal_halfdiag(t) + eps + 0.5 for t in gt.templates]
    )
    centers = gt.object_centers
    best_margin, best = -np.inf, None
    for _ in range(300):
        pos = rng.uniform(-half, half, 2)
        if centers.size == 0:
            return float(pos[0]), float(pos[1])
        d = np.hypot(centers[..., 0] - pos[0], centers[..., 1] - pos[1])
        margin = float((d - clearances[None, :]).min())
        if margin > best_margin:
            best_margin, best = margin, pos
        if margin > 0:
            break
    return float(best[0]), float(best[1])


def build_scenario(suite: SuiteConfig, scenario: Scenario, history_length: int | None = None):
    """Materialize a scenario into frames; returns (frames, injected_indices)."""
    L = suite.history_length if history_length is None else history_length
    spec = _scene_spec(suite, scenario.seed, duration=L + 1)
    frames, gt = generate_scene(spec)
    injected = np.empty(0, dtype=np.int64)
    if scenario.label == "poisoned":
        rng = np.random.default_rng([scenario.seed, 0xA77])
        attack = AttackSpec(
            kind="DENSE" if suite.kind == "dense" else "SPARSE",
            template=scenario.template,
            point_count=DENSE_BUDGET if suite.kind == "dense" else SPARSE_BUDGET,
            position=_attack_position(rng, suite, gt, scenario.template),
            target_frame=len(frames) - 1,
        )
        frames[-1], injected = inject(frames[-1], attack, seed=scenario.seed)
    return frames, injected


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioRow:
    scenario: str
    label: str
    score: float
    decision: str
    wall_ms: float


@dataclass
class ScenarioDetail:
    """Extra per-scenario artifacts reused by sweep and ablation."""

    row: ScenarioRow
    merged_points: np.ndarray | None = None
    merged_provenance: np.ndarray | None = None
    flow_variance: float | None = None


def flow_variance_probe(frames, sfe_config: SfeConfig, radius: float = 3.0) -> float:
    """Within-cluster flow variance from per-cluster local alignment solves.

    Each coherence-mask cluster in the penultimate frame is aligned against
    the incoming points within `radius` of its centroid by one flow solve,
    and the mean within-cluster variance of the fitted flows is reported.
    Solving one cluster at a time keeps the coherence term first-order:
    disagreement between the cluster's flows is resisted directly instead of
    being diluted by the rest of the scene, so the regularizer's effect on
    flow spread is measurable above solver noise.
    """
    if len(frames) < 2:
        raise InvalidArgumentError("flow_variance_probe needs at least two frames")
    f1 = frames[-2].points
    f2 = frames[-1].points
    labeling = dbscan(f1, sfe_config.cluster_params)
    tree = cKDTree(f2)
    variances = []
    for cid in range(labeling.num_clusters):
        pts = f1[labeling.labels == cid]
        if len(pts) < 2:
            continue
        idx = tree.query_ball_point(pts.mean(axis=0), r=radius)
        if not idx:
            continue
        est = estimate_flow(pts, f2[np.asarray(idx, dtype=np.int64)], sfe_config)
        deviation = est.flow - est.flow.mean(axis=0)
        variances.append(float(np.mean(np.sum(deviation**2, axis=1))))
    return float(np.mean(variances)) if variances else 0.0


def run_one_scenario(
    suite: SuiteConfig,
    scenario: Scenario,
    beta: float | None = None,
    history_length: int | None = None,
    keep_merged: bool = False,
    measure_flow_variance: bool = False,
) -> ScenarioDetail:
    frames, _ = build_scenario(suite, scenario, history_length=history_length)
    config = suite.pipeline(beta=beta, history_length=history_length)
    start = time.perf_counter()
    buffer = config.new_buffer()
    for frame in frames[:-1]:
        buffer.advance(frame)
    outcome = detect_full(buffer, frames[-1], config)
    wall_ms = (time.perf_counter() - start) * 1000.0
    row = ScenarioRow(
        scenario=scenario.scenario_id,
        label=scenario.label,
        score=outcome.report.anomaly_score,
        decision=outcome.report.decision,
        wall_ms=wall_ms,
    )
    return ScenarioDetail(
        row=row,
        merged_points=outcome.merged.points if keep_merged else None,
        merged_provenance=outcome.merged.provenance if keep_merged else None,
        flow_variance=(
            flow_variance_probe(frames, config.sfe) if measure_flow_variance else None
        ),
    )


def _worker(args) -> ScenarioDetail:
    suite, scenario, beta, history_length, keep_merged, measure_fv = args
    return run_one_scenario(suite, scenario, beta, history_length, keep_merged, measure_fv)


def _run_all(
    suite: SuiteConfig,
    jobs: int = 1,
    beta: float | None = None,
    history_length: int | None = None,
    keep_merged: bool = False,
    measure_flow_variance: bool = False,
) -> list[ScenarioDetail]:
    scenarios = scenario_list(suite)
    tasks = [
        (suite, sc, beta, history_length, keep_merged, measure_flow_variance)
        for sc in scenarios
    ]
    if jobs <= 1:
        details = [_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            details = list(pool.map(_worker, tasks, chunksize=1))
    details.sort(key=lambda d: d.row.scenario)
    return details


def compute_rates(rows: list[ScenarioRow]) -> tuple[float | None, float | None]:
    """(FPR, TPR) from rows; None where the denominator is empty."""
    fp = sum(1 for r in rows if r.label == "benign" and r.decision == "ATTACKED")
    tn = sum(1 for r in rows if r.label == "benign" and r.decision == "BENIGN")
    tp = sum(1 for r in rows if r.label == "poisoned" and r.decision == "ATTACKED")
    fn = sum(1 for r in rows if r.label == "poisoned" and r.decision == "BENIGN")
    fpr = fp / (fp + tn) if fp + tn else None
    tpr = tp / (tp + fn) if tp + fn else None
    return fpr, tpr


def tpr_by_template(rows: list[ScenarioRow]) -> dict[str, float]:
    per: dict[str, list[ScenarioRow]] = {}
    for r in rows:
        if r.label != "poisoned":
            continue
        template = r.scenario.split("-")[2]
        per.setdefault(template, []).append(r)
    return {
        tpl: sum(1 for r in rs if r.decision == "ATTACKED") / len(rs)
        for tpl, rs in per.items()
    }


@dataclass
class BenchmarkResult:
    rows: list[ScenarioRow]
    fpr: float | None
    tpr: float | None
    tpr_by_class: dict[str, float]

    def balanced_accuracy(self) -> float:
        fpr = self.fpr if self.fpr is not None else 0.0
        tpr = self.tpr if self.tpr is not None else 1.0
        return 0.5 * ((1.0 - fpr) + tpr)


def run_benchmark(suite: SuiteConfig, jobs: int = 1, history_length: int | None = None) -> BenchmarkResult:
    details = _run_all(suite, jobs=jobs, history_length=history_length)
    rows = [d.row for d in details]
    fpr, tpr = compute_rates(rows)
    return BenchmarkResult(rows=rows, fpr=fpr, tpr=tpr, tpr_by_class=tpr_by_template(rows))


@dataclass(frozen=True)
class SweepRow:
    min_pts: int
    eps: float
    fpr: float
    tpr: float
    dist_ideal: float


def run_sweep(suite: SuiteConfig, grid: list[tuple[int, float]], jobs: int = 1) -> list[SweepRow]:
    """Re-cluster cached merged clouds for every (min_pts, eps) grid point.

    The pipeline (flow solves, synthesis, merging) runs once per scenario;
    only the detector-side DBSCAN depends on the grid. dist_ideal measures
    each operating point's distance to (FPR=0, TPR=1).
    """
    if not grid:
        raise InvalidArgumentError("sweep grid must be non-empty")
    details = _run_all(suite, jobs=jobs, keep_merged=True)
    out = []
    for min_pts, eps in grid:
        params = ClusterParams(eps=eps, min_pts=min_pts)
        decisions = []
        for d in details:
            merged = _MergedView(d.merged_points, d.merged_provenance)
            residuals = residual_clusters(merged, params)
            score = anomaly_score(residuals, suite.score_mode)
            decisions.append(
                ScenarioRow(d.row.scenario, d.row.label, score,
                            "ATTACKED" if score > suite.decision_threshold else "BENIGN", 0.0)
            )
        fpr, tpr = compute_rates(decisions)
        fpr = fpr if fpr is not None else 0.0
        tpr = tpr if tpr is not None else 1.0
        out.append(SweepRow(min_pts, eps, fpr, tpr, float(np.hypot(fpr, 1.0 - tpr))))
    return out


class _MergedView:
    """Duck-typed MergedCloud over cached arrays."""

    def __init__(self, points, provenance):
        self.points = points
        self.provenance = provenance


@dataclass
class AblationResult:
    rows: list[tuple[float, float, float, float]]  # beta, fpr, tpr, mean flow variance
    variance_by_scenario: dict[float, dict[str, float]]  # beta -> scenario -> variance
    tpr_by_beta: dict[float, float]


def run_ablation(suite: SuiteConfig, betas=(None, 0.0), jobs: int = 1) -> AblationResult:
    """Benchmark under alternative coherence weights (None = suite default)."""
    rows = []
    variance_by_scenario: dict[float, dict[str, float]] = {}
    tpr_by_beta: dict[float, float] = {}
    for beta in betas:
        eff_beta = suite.beta if beta is None else beta
        details = _run_all(suite, jobs=jobs, beta=beta, measure_flow_variance=True)
        bench_rows = [d.row for d in details]
        fpr, tpr = compute_rates(bench_rows)
        poisoned = [d for d in details if d.row.label == "poisoned"]
        mean_var = float(np.mean([d.flow_variance for d in poisoned])) if poisoned else 0.0
        rows.append((eff_beta, fpr if fpr is not None else 0.0, tpr if tpr is not None else 1.0, mean_var))
        variance_by_scenario[eff_beta] = {d.row.scenario: d.flow_variance for d in poisoned}
        tpr_by_beta[eff_beta] = tpr if tpr is not None else 1.0
    return AblationResult(rows=rows, variance_by_scenario=variance_by_scenario, tpr_by_beta=tpr_by_beta)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = row if isinstance(row, (list, tuple)) else [getattr(row, c) for c in columns]
        writer.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def write_rows_csv(rows, columns, path) -> None:
    Path(path).write_text(rows_to_csv(rows, columns))
