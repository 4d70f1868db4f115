"""Camera start poses, trajectory families, speed easing and pose flattening.

Every trajectory family is built as a continuous path ``s -> CameraPose`` over
the path fraction ``s`` in [0, 1] (arc-length fraction for translating
families, angle fraction for rotating ones). Frames are then taken at either
uniform fractions (constant speed) or exponentially eased ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .camera import (
    WORLD_UP,
    CameraPose,
    Intrinsics,
    axis_angle,
    rotation_angle,
    look_at,
    orthonormalize,
)
from .errors import ConfigError, ShapeError

KINDS = ("pan", "tilt", "translate", "arc", "random", "static", "zoom_in", "zoom_out")
MAX_SPEED_A = 20.0


@dataclass(frozen=True)
class TrajectoryConfig:
    radius: float = 10.0
    min_distance: float = 0.5
    max_pitch_deg: float = 45.0
    # "radius": r ~ U(0, radius]; "volume": uniform in the hemisphere volume
    radius_sampling: str = "radius"
    pan_deg: tuple = (5.0, 60.0)
    tilt_deg: tuple = (5.0, 45.0)
    arc_deg: tuple = (5.0, 60.0)
    translate_frac: tuple = (0.25, 1.0)
    zoom_frac: tuple = (0.25, 0.75)
    random_points: tuple = (1, 3)
    speed_a: tuple = (0.5, 4.0)
    eased_prob: float = 0.5
    focal_mm: tuple = (35.0, 24.0)
    kinds: tuple = KINDS
    kind_probs: tuple = (0.15, 0.10, 0.20, 0.20, 0.20, 0.05, 0.05, 0.05)

    def validate(self):
        for name in ("pan_deg", "tilt_deg", "arc_deg", "translate_frac", "zoom_frac",
                     "random_points", "speed_a"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if not set(self.kinds) <= set(KINDS):
            raise ConfigError(f"unknown kinds: {set(self.kinds) - set(KINDS)}")
        if len(self.kinds) != len(self.kind_probs) or abs(sum(self.kind_probs) - 1) > 1e-9:
            raise ConfigError("kind_probs must match kinds and sum to 1")
        if self.radius_sampling not in ("radius", "volume"):
            raise ConfigError(f"radius_sampling {self.radius_sampling!r}")
        if self.speed_a[1] > MAX_SPEED_A:
            raise ConfigError(f"|a| above {MAX_SPEED_A} saturates the easing")


@dataclass
class Trajectory:
    poses: list
    intrinsics: Intrinsics
    kind: str = "custom"
    speed_a: float = 0.0
    path: Optional[Callable[[float], CameraPose]] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    def to_json_dict(self) -> dict:
        return {
            "frames": flatten_poses(self).tolist(),
            "fpx": self.intrinsics.fpx,
            "cx": self.intrinsics.cx,
            "cy": self.intrinsics.cy,
            "kind": self.kind,
            "speed_a": float(self.speed_a),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Trajectory":
        return cls(
            unflatten_poses(np.asarray(d["frames"], dtype=np.float64)),
            Intrinsics(float(d["fpx"]), float(d["cx"]), float(d["cy"])),
            kind=d.get("kind", "custom"),
            speed_a=float(d.get("speed_a", 0.0)),
        )


def ease_fraction(x, a: float):
    """Path fraction reached at normalised time ``x`` in [0, 1].

    ``(1 - exp(-a x)) / (1 - exp(-a))``; ``a > 0`` starts fast, ``a < 0`` starts
    slow, ``a == 0`` is constant speed.
    """
    if abs(a) > MAX_SPEED_A:
        raise ConfigError(f"speed parameter |a|={abs(a)} > {MAX_SPEED_A}")
    x = np.asarray(x, dtype=np.float64)
    if a == 0:
        return x
    return np.expm1(-a * x) / np.expm1(-a)


def frame_fractions(f: int, a: float = 0.0) -> np.ndarray:
    # denominator f - 1 so the last of f frames lands on the path end
    return ease_fraction(np.arange(f) / (f - 1), a)


def sample_start_pose(seed: int, subject_pos, config: TrajectoryConfig | None = None) -> CameraPose:
    """Random camera on the upper hemisphere around the subject, looking at it."""
    cfg = config or TrajectoryConfig()
    rng = np.random.default_rng([seed, 0x57A27])
    subject = np.asarray(subject_pos, dtype=np.float64)
    max_pitch = np.radians(cfg.max_pitch_deg)
    while True:
        z = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2 * np.pi)
        rho = np.sqrt(1.0 - z * z)
        direction = np.array([rho * np.cos(phi), rho * np.sin(phi), z])
        u = 1.0 - rng.uniform(0.0, 1.0)  # (0, 1]
        r = cfg.radius * (u if cfg.radius_sampling == "radius" else np.cbrt(u))
        if r <= cfg.min_distance or np.arcsin(z) > max_pitch:
            continue
        return look_at(subject + r * direction, subject)


def _valid_position(pos, subject) -> bool:
    v = subject - pos
    n = np.linalg.norm(v)
    return pos[2] > 0.05 and n > 0.2 and abs(v[2] / n) < 0.995


def _linear_path(p0, p1, subject):
    def path(s):
        return look_at(p0 + s * (p1 - p0), subject)
    return path


def centripetal_catmull_rom(points: np.ndarray, samples_per_segment: int = 64) -> np.ndarray:
    """Dense polyline through ``points`` (n >= 2) along a centripetal Catmull-Rom spline."""
    pts = np.asarray(points, dtype=np.float64)
    ext = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    out = [pts[:1]]
    for i in range(1, len(ext) - 2):
        p0, p1, p2, p3 = ext[i - 1], ext[i], ext[i + 1], ext[i + 2]
        t0 = 0.0
        t1 = t0 + max(np.linalg.norm(p1 - p0), 1e-9) ** 0.5
        t2 = t1 + max(np.linalg.norm(p2 - p1), 1e-9) ** 0.5
        t3 = t2 + max(np.linalg.norm(p3 - p2), 1e-9) ** 0.5
        t = np.linspace(t1, t2, samples_per_segment + 1)[1:, None]
        a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1
        a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2
        a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3
        b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2
        b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3
        out.append((t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2)
    return np.vstack(out)


def _arclength_path(curve: np.ndarray, subject):
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]

    def path(s):
        target = s * total
        pos = np.array([np.interp(target, cum, curve[:, j]) for j in range(3)])
        return look_at(pos, subject)
    return path, total


def _build_path(kind, start: CameraPose, subject, rng, cfg: TrajectoryConfig):
    """Return (path, meta) for one trajectory family."""
    p0 = start.translation
    d2s = float(np.linalg.norm(p0 - subject))
    meta = {"d2s": d2s}
    if kind == "static":
        return (lambda s: start), meta
    if kind in ("pan", "tilt"):
        lo, hi = cfg.pan_deg if kind == "pan" else cfg.tilt_deg
        theta = np.radians(rng.uniform(lo, hi)) * rng.choice([-1.0, 1.0])
        # camera-frame y is "down", x is "right"
        local_axis = np.array([0.0, 1.0, 0.0]) if kind == "pan" else np.array([1.0, 0.0, 0.0])
        meta["angle_deg"] = float(np.degrees(abs(theta)))

        def path(s):
            return CameraPose(orthonormalize(start.rotation @ axis_angle(local_axis, s * theta)), p0)
        return path, meta
    if kind == "arc":
        theta = np.radians(rng.uniform(*cfg.arc_deg)) * rng.choice([-1.0, 1.0])
        v0 = p0 - subject
        vh = v0 / np.linalg.norm(v0)
        axis = WORLD_UP - (WORLD_UP @ vh) * vh
        axis = axis / np.linalg.norm(axis)
        meta["angle_deg"] = float(np.degrees(abs(theta)))

        def path(s):
            return look_at(subject + axis_angle(axis, s * theta) @ v0, subject)
        return path, meta
    for _ in range(1000):
        if kind == "translate":
            axis = np.zeros(3)
            axis[rng.integers(3)] = rng.choice([-1.0, 1.0])
            dist = rng.uniform(*cfg.translate_frac) * d2s
            p1 = p0 + dist * axis
            curve = np.linspace(p0, p1, 33)
            path = _linear_path(p0, p1, subject)
            meta.update(distance=float(dist), axis=axis.tolist())
        elif kind in ("zoom_in", "zoom_out"):
            sign = 1.0 if kind == "zoom_in" else -1.0
            dist = rng.uniform(*cfg.zoom_frac) * d2s
            p1 = p0 + sign * dist * start.forward
            curve = np.linspace(p0, p1, 33)
            path = _linear_path(p0, p1, subject)
            meta.update(distance=float(dist))
        elif kind == "random":
            k = int(rng.integers(cfg.random_points[0], cfg.random_points[1] + 1))
            length = rng.uniform(*cfg.translate_frac) * d2s
            dirs = rng.normal(size=(k, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            split = rng.dirichlet(np.ones(k))
            pts = np.vstack([p0, p0 + np.cumsum(dirs * split[:, None], axis=0)])
            curve = centripetal_catmull_rom(pts)
            # uniform scaling about p0 scales the spline, so rescale to the exact length
            clen = np.linalg.norm(np.diff(curve, axis=0), axis=1).sum()
            scale = length / clen
            curve = p0 + (curve - p0) * scale
            path, total = _arclength_path(curve, subject)
            meta.update(path_length=float(total), n_points=k)
        else:
            raise ConfigError(f"unknown trajectory kind {kind!r}")
        if all(_valid_position(p, subject) for p in curve):
            return path, meta
    raise RuntimeError(f"could not place a valid {kind} trajectory")


def gen_trajectory(kind: str, start: CameraPose, subject_pos, seed: int, f: int,
                   config: TrajectoryConfig | None = None,
                   intrinsics: Intrinsics | None = None,
                   speed_a: float = 0.0) -> Trajectory:
    """Generate an ``f``-frame trajectory of the given family from ``start``."""
    cfg = config or TrajectoryConfig()
    if kind not in KINDS:
        raise ConfigError(f"unknown trajectory kind {kind!r}")
    if f < 2:
        raise ConfigError("trajectories need f >= 2 frames")
    rng = np.random.default_rng([seed, 0x7247, KINDS.index(kind)])
    subject = np.asarray(subject_pos, dtype=np.float64)
    path, meta = _build_path(kind, start, subject, rng, cfg)
    intr = intrinsics or Intrinsics.from_focal_mm(35.0, 48, 48)
    traj = Trajectory([], intr, kind=kind, speed_a=0.0, path=path, meta=meta)
    return apply_speed_profile(traj, speed_a, f)


def apply_speed_profile(traj: Trajectory, a: float, f: int | None = None) -> Trajectory:
    """Re-sample the trajectory's path at eased fractions (``a == 0``: constant speed)."""
    if traj.path is None:
        raise ConfigError("trajectory has no underlying path to re-sample")
    f = f or len(traj.poses)
    fr = frame_fractions(f, a)
    poses = [traj.path(float(s)) for s in fr]
    return replace(traj, poses=poses, speed_a=float(a))


def sample_trajectory(seed: int, subject_pos, f: int, config: TrajectoryConfig | None = None,
                      width: int = 48, height: int = 48, start: CameraPose | None = None,
                      kind: str | None = None) -> Trajectory:
    """Dataset-style draw: family, start pose, speed profile and focal length."""
    cfg = config or TrajectoryConfig()
    rng = np.random.default_rng([seed, 0xD47A])
    if kind is None:
        kind = str(rng.choice(cfg.kinds, p=cfg.kind_probs))
    if start is None:
        start = sample_start_pose(int(rng.integers(2**31)), subject_pos, cfg)
    a = 0.0
    if rng.uniform() < cfg.eased_prob:
        a = float(rng.uniform(*cfg.speed_a) * rng.choice([-1.0, 1.0]))
    focal = float(rng.choice(cfg.focal_mm))
    intr = Intrinsics.from_focal_mm(focal, width, height)
    return gen_trajectory(kind, start, subject_pos, int(rng.integers(2**31)), f, cfg, intr, a)


def flatten_poses(traj) -> np.ndarray:
    """Row-major 3x4 [R|t] per frame, shape (f, 12)."""
    poses = traj.poses if isinstance(traj, Trajectory) else traj
    return np.stack([np.hstack([p.rotation, p.translation[:, None]]).reshape(12) for p in poses])


def unflatten_poses(flat) -> list:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 2 or flat.shape[1] != 12:
        raise ShapeError(f"expected (f, 12) poses, got {flat.shape}")
    return [CameraPose.from_matrix(row.reshape(3, 4)) for row in flat]


def normalize_to_reference(traj: Trajectory, ref: CameraPose) -> Trajectory:
    """Express every pose in the frame where ``ref`` is the identity."""
    inv = ref.inverse()
    poses = [inv @ p for p in traj.poses]
    path = None if traj.path is None else (lambda s, _p=traj.path: inv @ _p(s))
    return replace(traj, poses=poses, path=path)


def constraint_violations(traj: Trajectory, subject_pos, config: TrajectoryConfig | None = None,
                          tol: float = 1e-6) -> list:
    """Names of the sampling bounds a generated trajectory breaks (empty if none)."""
    cfg = config or TrajectoryConfig()
    subject = np.asarray(subject_pos, dtype=np.float64)
    poses = traj.poses
    p0, p1 = poses[0].translation, poses[-1].translation
    d2s = float(np.linalg.norm(p0 - subject))
    bad = []
    if not all(p.is_valid(tol) for p in poses):
        bad.append("rotation")
    if not cfg.min_distance < d2s <= cfg.radius + tol:
        bad.append("start_distance")
    if np.degrees(np.arcsin(np.clip((p0 - subject)[2] / d2s, -1, 1))) > cfg.max_pitch_deg + tol:
        bad.append("start_pitch")

    def within(x, lo, hi):
        return lo - tol <= x <= hi + tol

    kind = traj.kind
    moved = float(np.linalg.norm(p1 - p0))
    if kind in ("pan", "tilt"):
        lo, hi = cfg.pan_deg if kind == "pan" else cfg.tilt_deg
        ang = np.degrees(rotation_angle(poses[0].rotation, poses[-1].rotation))
        if not within(ang, lo, hi):
            bad.append(f"{kind}_angle")
        if np.ptp(traj.positions, axis=0).max() > tol:
            bad.append(f"{kind}_moved")
    elif kind == "arc":
        v0, v1 = p0 - subject, p1 - subject
        ang = np.degrees(np.arccos(np.clip(v0 @ v1 / (np.linalg.norm(v0) * np.linalg.norm(v1)), -1, 1)))
        if not within(ang, *cfg.arc_deg):
            bad.append("arc_angle")
        radii = np.linalg.norm(traj.positions - subject, axis=1)
        if np.ptp(radii) > tol * max(1.0, d2s):
            bad.append("arc_radius")
    elif kind == "translate":
        lo, hi = cfg.translate_frac
        if not within(moved, lo * d2s, hi * d2s):
            bad.append("translate_distance")
        if np.sort(np.abs(p1 - p0))[1] > tol:
            bad.append("translate_axis")
    elif kind in ("zoom_in", "zoom_out"):
        lo, hi = cfg.zoom_frac
        if not within(moved, lo * d2s, hi * d2s):
            bad.append("zoom_distance")
        sign = 1.0 if kind == "zoom_in" else -1.0
        if moved > 0 and sign * (p1 - p0) @ poses[0].forward < moved * (1 - tol):
            bad.append("zoom_direction")
    elif kind == "random":
        lo, hi = cfg.translate_frac
        length = traj.meta.get("path_length", float("nan"))
        if not within(length, lo * d2s, hi * d2s):
            bad.append("random_length")
    elif kind == "static":
        if any(not np.array_equal(p.matrix(), poses[0].matrix()) for p in poses):
            bad.append("static_moved")
    return bad
