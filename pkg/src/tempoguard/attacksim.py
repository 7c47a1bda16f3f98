"""Synthetic road scenes and point-injection attacks.

Scenes are deliberately minimal: a jittered ground grid plus box-shaped road
objects surface-sampled on the faces visible from a fixed sensor origin. The
detector consumes only geometry and density, so cluster-scale statistics are
what matter at desk scale, not shape fidelity.

Injections mimic the two threat models: dense attacks place up to 200 points
concentrated on the sensor-facing surface of a fake object; sparse attacks
scatter up to 64 points over a thin elevated band of a fake car silhouette.
Injected points are kept clear of the ground plane, as spoofed returns float
above it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Frame
from .errors import InvalidArgumentError

__all__ = [
    "ObjectTemplate",
    "TEMPLATES",
    "ObjectPlacement",
    "SceneSpec",
    "GroundTruth",
    "AttackSpec",
    "generate_scene",
    "inject",
    "rigid_translation_instance",
    "DENSE_BUDGET",
    "SPARSE_BUDGET",
]

DENSE_BUDGET = 200
SPARSE_BUDGET = 64


@dataclass(frozen=True)
class ObjectTemplate:
    name: str
    length: float
    width: float
    height: float

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise InvalidArgumentError("template dimensions must be positive")


TEMPLATES = {
    "CAR": ObjectTemplate("CAR", 4.5, 1.8, 1.5),
    "CYCLIST": ObjectTemplate("CYCLIST", 1.8, 0.6, 1.7),
    "PEDESTRIAN": ObjectTemplate("PEDESTRIAN", 0.6, 0.6, 1.7),
}


@dataclass(frozen=True)
class ObjectPlacement:
    template: str
    position: tuple[float, float]   # box center (x, y), base on the ground
    velocity: tuple[float, float]   # m/s
    budget: int                     # sampled points per frame

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise InvalidArgumentError(f"unknown template {self.template!r}")
        if self.budget <= 0:
            raise InvalidArgumentError("object point budget must be positive")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    duration_frames: int
    frame_rate: float = 10.0
    ground_extent: float = 10.0     # square side, meters
    ground_spacing: float = 0.8
    noise_sigma: float = 0.02
    sensor_origin: tuple[float, float, float] = (0.0, -12.0, 1.8)
    objects: tuple[ObjectPlacement, ...] = ()

    def __post_init__(self):
        if self.duration_frames < 1:
            raise InvalidArgumentError("duration_frames must be >= 1")
        if self.frame_rate <= 0 or self.ground_extent <= 0 or self.ground_spacing <= 0:
            raise InvalidArgumentError("frame_rate, ground_extent, ground_spacing must be positive")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")


@dataclass
class GroundTruth:
    """Analytic object poses and per-point object ids (-1 = ground)."""

    templates: list[str]
    object_centers: np.ndarray          # (frames, objects, 3) box centers
    point_object_ids: list[np.ndarray]  # per frame, aligned with frame points

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "templates": self.templates,
                    "object_centers": self.object_centers.tolist(),
                    "point_object_ids": [ids.tolist() for ids in self.point_object_ids],
                }
            )
        )

    @classmethod
    def load(cls, path) -> "GroundTruth":
        raw = json.loads(Path(path).read_text())
        return cls(
            templates=list(raw["templates"]),
            object_centers=np.asarray(raw["object_centers"], dtype=np.float64),
            point_object_ids=[np.asarray(ids, dtype=np.int64) for ids in raw["point_object_ids"]],
        )


@dataclass(frozen=True)
class AttackSpec:
    kind: str                       # "DENSE" | "SPARSE"
    template: str
    point_count: int
    position: tuple[float, float]   # fake-object center (x, y), base on ground
    target_frame: int

    def __post_init__(self):
        if self.kind not in ("DENSE", "SPARSE"):
            raise InvalidArgumentError(f"unknown attack kind {self.kind!r}")
        if self.template not in TEMPLATES:
            raise InvalidArgumentError(f"unknown template {self.template!r}")
        budget = DENSE_BUDGET if self.kind == "DENSE" else SPARSE_BUDGET
        if not (0 <= self.point_count <= budget):
            raise InvalidArgumentError(
                f"{self.kind} attack budget is {budget} points, got {self.point_count}"
            )


def _f32(pts: np.ndarray) -> np.ndarray:
    # Round to f32 so frame-file round trips are bit-exact.
    return pts.astype(np.float32).astype(np.float64)


def _side_faces(center: np.ndarray, dims: np.ndarray):
    """The four vertical faces of an axis-aligned box: (face center, normal, tangents)."""
    cx, cy, cz = center
    lx, ly, lz = dims
    return [
        (np.array([cx + lx / 2, cy, cz]), np.array([1.0, 0, 0]), np.array([0, ly, 0]), np.array([0, 0, lz])),
        (np.array([cx - lx / 2, cy, cz]), np.array([-1.0, 0, 0]), np.array([0, ly, 0]), np.array([0, 0, lz])),
        (np.array([cx, cy + ly / 2, cz]), np.array([0, 1.0, 0]), np.array([lx, 0, 0]), np.array([0, 0, lz])),
        (np.array([cx, cy - ly / 2, cz]), np.array([0, -1.0, 0]), np.array([lx, 0, 0]), np.array([0, 0, lz])),
    ]


def _visible_faces(center, dims, sensor):
    faces = [f for f in _side_faces(center, dims) if np.dot(f[1], sensor - f[0]) > 0]
    if sensor[2] > center[2] + dims[2] / 2:
        top = (center + np.array([0, 0, dims[2] / 2]), np.array([0, 0, 1.0]),
               np.array([dims[0], 0, 0]), np.array([0, dims[1], 0]))
        faces.append(top)
    return faces or _side_faces(center, dims)[:1]


def _sample_faces_uniform(rng, faces, n) -> np.ndarray:
    areas = np.array([np.linalg.norm(u) * np.linalg.norm(v) for _, _, u, v in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    uu = rng.uniform(-0.5, 0.5, n)
    vv = rng.uniform(-0.5, 0.5, n)
    pts = np.empty((n, 3))
    for k, (c, _, u, v) in enumerate(faces):
        mask = choice == k
        pts[mask] = c + uu[mask, None] * u + vv[mask, None] * v
    return pts


def sample_box_object(rng, template: ObjectTemplate, position_xy, n: int, sensor) -> np.ndarray:
    """Sample n points on the sensor-facing surface of a ground-based box."""
    dims = np.array([template.length, template.width, template.height])
    center = np.array([position_xy[0], position_xy[1], template.height / 2])
    faces = _visible_faces(center, dims, np.asarray(sensor, dtype=np.float64))
    return _sample_faces_uniform(rng, faces, n)


def generate_scene(spec: SceneSpec) -> tuple[list[Frame], GroundTruth]:
    """Deterministically render a scene spec into frames plus ground truth."""
    half = spec.ground_extent / 2
    ticks = np.arange(-half, half + 1e-9, spec.ground_spacing)
    gx, gy = np.meshgrid(ticks, ticks)
    ground_base = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    sensor = np.asarray(spec.sensor_origin, dtype=np.float64)
    dt = 1.0 / spec.frame_rate

    frames: list[Frame] = []
    centers = np.zeros((spec.duration_frames, len(spec.objects), 3))
    point_ids: list[np.ndarray] = []
    for t in range(spec.duration_frames):
        rng = np.random.default_rng([spec.seed, t])
        clouds = []
        ids = []
        if spec.noise_sigma > 0:
            ground = ground_base + rng.normal(0.0, spec.noise_sigma, ground_base.shape)
        else:
            ground = ground_base
        clouds.append(ground)
        ids.append(np.full(len(ground), -1, dtype=np.int64))
        for oid, obj in enumerate(spec.objects):
            tpl = TEMPLATES[obj.template]
            pos = (obj.position[0] + obj.velocity[0] * t * dt, obj.position[1] + obj.velocity[1] * t * dt)
            centers[t, oid] = (pos[0], pos[1], tpl.height / 2)
            pts = sample_box_object(rng, tpl, pos, obj.budget, sensor)
            clouds.append(pts)
            ids.append(np.full(len(pts), oid, dtype=np.int64))
        cloud = _f32(np.concatenate(clouds))
        frames.append(Frame(index=t, timestamp=t * dt, points=cloud))
        point_ids.append(np.concatenate(ids))
    gt = GroundTruth(
        templates=[o.template for o in spec.objects],
        object_centers=centers,
        point_object_ids=point_ids,
    )
    return frames, gt


# Injected points stay at least this high above the ground plane so that a
# fake cluster cannot chain into ground points carrying historical support.
_GROUND_CLEARANCE_DENSE = 0.45
_SPARSE_BAND = (0.9, 1.4)


def _dense_injection(rng, template: ObjectTemplate, position_xy, n, sensor) -> np.ndarray:
    """Concentrated patch on the sensor-facing surface (spoofers hit a narrow window)."""
    dims = np.array([template.length, template.width, template.height])
    center = np.array([position_xy[0], position_xy[1], template.height / 2])
    faces = [f for f in _visible_faces(center, dims, np.asarray(sensor, dtype=np.float64)) if f[1][2] == 0]
    if not faces:
        faces = _side_faces(center, dims)[:1]
    areas = np.array([np.linalg.norm(u) * np.linalg.norm(v) for _, _, u, v in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    z_lo = _GROUND_CLEARANCE_DENSE
    z_hi = template.height
    z_center = 0.5 * (z_lo + z_hi)
    for k, (c, normal, u, v) in enumerate(faces):
        mask = choice == k
        m = int(mask.sum())
        if m == 0:
            continue
        u_len = np.linalg.norm(u)
        uu = np.clip(rng.normal(0.0, 0.35, m), -u_len / 2, u_len / 2) / u_len
        zz = np.clip(rng.normal(z_center, 0.35, m), z_lo, z_hi)
        vv = (zz - template.height / 2) / template.height
        inward = rng.uniform(0.0, 0.05, m)
        pts[mask] = c + uu[:, None] * u + vv[:, None] * v - inward[:, None] * normal
    return pts


def _sparse_injection(rng, template: ObjectTemplate, position_xy, n, sensor) -> np.ndarray:
    """Thin elevated band over the visible silhouette faces."""
    dims = np.array([template.length, template.width, template.height])
    center = np.array([position_xy[0], position_xy[1], template.height / 2])
    faces = [f for f in _visible_faces(center, dims, np.asarray(sensor, dtype=np.float64)) if f[1][2] == 0]
    if not faces:
        faces = _side_faces(center, dims)[:1]
    band_lo = _SPARSE_BAND[0]
    band_hi = min(_SPARSE_BAND[1], template.height * 0.95)
    areas = np.array([np.linalg.norm(u) for _, _, u, _ in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    for k, (c, normal, u, v) in enumerate(faces):
        mask = choice == k
        m = int(mask.sum())
        if m == 0:
            continue
        uu = rng.uniform(-0.5, 0.5, m)
        zz = rng.uniform(band_lo, band_hi, m)
        vv = (zz - template.height / 2) / template.height
        inward = rng.uniform(0.0, 0.05, m)
        pts[mask] = c + uu[:, None] * u + vv[:, None] * v - inward[:, None] * normal
    return pts


def inject(frame: Frame, attack: AttackSpec, seed: int, sensor=(0.0, -12.0, 1.8)) -> tuple[Frame, np.ndarray]:
    """Append spoofed points to a frame; original points stay verbatim.

    Returns the poisoned frame and the indices of the injected points.
    """
    if attack.point_count == 0:
        return frame, np.empty(0, dtype=np.int64)
    rng = np.random.default_rng([seed, attack.target_frame, 0xAD])
    tpl = TEMPLATES[attack.template]
    sampler = _dense_injection if attack.kind == "DENSE" else _sparse_injection
    fake = _f32(sampler(rng, tpl, attack.position, attack.point_count, sensor))
    poisoned = Frame(
        index=frame.index,
        timestamp=frame.timestamp,
        points=np.concatenate([frame.points, fake]),
    )
    injected = np.arange(len(frame.points), len(poisoned.points), dtype=np.int64)
    return poisoned, injected


def rigid_translation_instance(seed: int = 0, n_points: int = 500, translation=(0.5, 0.2, 0.0)):
    """Two dense rigid bodies plus a translated copy; ground truth by construction.

    Returns (f1, f2, translation) where f2 is f1 shifted by the translation.
    The bodies are compact enough that the dense clustering preset forms one
    cluster per body.
    """
    rng = np.random.default_rng(seed)
    n_half = n_points // 2
    body = ObjectTemplate("BODY", 1.0, 0.4, 0.4)
    sensor = np.array([0.0, -8.0, 1.5])

    def sample_body(cx, cy, n):
        dims = np.array([body.length, body.width, body.height])
        center = np.array([cx, cy, 1.0])
        return _sample_faces_uniform(rng, _side_faces(center, dims), n)

    f1 = np.concatenate([sample_body(-2.0, 0.0, n_half), sample_body(2.0, 0.5, n_points - n_half)])
    t = np.asarray(translation, dtype=np.float64)
    return f1, f1 + t, t
