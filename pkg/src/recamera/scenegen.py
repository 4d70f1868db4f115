"""Procedural dynamic scenes and a z-buffered software renderer.

Scenes are a checkered ground plane, a solid sky, and one to four flat-coloured
spheres or axis-aligned boxes moving along piecewise-linear waypoint paths.
Every camera of a scene sees the same animated world state at frame ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .camera import CameraPose, Intrinsics, pixel_rays, project_many, project  # noqa: F401
from .errors import BoundsError, ConfigError, ShapeError

SHAPES = ("sphere", "box")
MOTIONS = ("static", "linear", "zigzag")

# Saturated colours, pairwise far apart and far from the background greys/sky so
# nearest-colour segmentation at tolerance 0.25 is unambiguous.
PALETTE = (
    (0.90, 0.15, 0.10),
    (0.10, 0.80, 0.20),
    (0.15, 0.25, 0.95),
    (0.95, 0.85, 0.10),
    (0.85, 0.15, 0.85),
    (0.10, 0.85, 0.90),
)
GROUND_COLORS = ((0.35, 0.35, 0.35), (0.50, 0.50, 0.50))
SKY_COLOR = (0.55, 0.70, 0.85)

PAD_TOKEN = 0
_SHAPE_BASE = 1
_COLOR_BASE = _SHAPE_BASE + len(SHAPES)
_MOTION_BASE = _COLOR_BASE + len(PALETTE)
VOCAB_SIZE = _MOTION_BASE + len(MOTIONS)
MAX_PRIMITIVES = 4
DESCRIPTOR_LEN = 3 * MAX_PRIMITIVES


@dataclass(frozen=True)
class PrimitiveSpec:
    shape: str
    half_size: float
    color: tuple
    waypoints: tuple
    waypoint_frames: tuple
    color_index: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.half_size <= 0:
            raise ConfigError("half_size must be positive")
        if not self.waypoints or len(self.waypoints) != len(self.waypoint_frames):
            raise ConfigError("need one frame index per waypoint")
        if any(b <= a for a, b in zip(self.waypoint_frames, self.waypoint_frames[1:])):
            raise ConfigError("waypoint frames must be strictly increasing")
        if self.waypoint_frames[0] != 0:
            raise ConfigError("first waypoint frame must be 0")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ConfigError("colour components must lie in [0, 1]")

    @property
    def motion(self) -> str:
        return MOTIONS[min(len(self.waypoints), 3) - 1]


@dataclass(frozen=True)
class SceneSpec:
    scene_id: int
    frames: int
    primitives: tuple
    ground_colors: tuple = GROUND_COLORS
    sky_color: tuple = SKY_COLOR
    checker_size: float = 1.0

    def __post_init__(self):
        if self.frames < 2:
            raise ConfigError("a scene needs at least 2 frames")
        if not 1 <= len(self.primitives) <= MAX_PRIMITIVES:
            raise ConfigError(f"scenes hold 1..{MAX_PRIMITIVES} primitives")
        for p in self.primitives:
            if len(p.waypoints) > 1 and p.waypoint_frames[-1] != self.frames - 1:
                raise ConfigError("last waypoint frame must be frames - 1")

    @property
    def subject_position(self) -> np.ndarray:
        return animate(self, 0).mean(axis=0)

    @property
    def descriptor(self) -> np.ndarray:
        return encode_descriptor(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primitives"] = [asdict(p) for p in self.primitives]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        prims = tuple(
            PrimitiveSpec(
                shape=p["shape"],
                half_size=float(p["half_size"]),
                color=tuple(p["color"]),
                waypoints=tuple(tuple(w) for w in p["waypoints"]),
                waypoint_frames=tuple(int(i) for i in p["waypoint_frames"]),
                color_index=int(p.get("color_index", 0)),
            )
            for p in d["primitives"]
        )
        return cls(
            scene_id=int(d["scene_id"]),
            frames=int(d["frames"]),
            primitives=prims,
            ground_colors=tuple(tuple(c) for c in d["ground_colors"]),
            sky_color=tuple(d["sky_color"]),
            checker_size=float(d["checker_size"]),
        )


def encode_descriptor(scene: SceneSpec) -> np.ndarray:
    """Fixed-length token codes (shape, colour, motion) per primitive, zero padded."""
    tokens = np.full(DESCRIPTOR_LEN, PAD_TOKEN, dtype=np.int64)
    for k, p in enumerate(scene.primitives):
        tokens[3 * k] = _SHAPE_BASE + SHAPES.index(p.shape)
        tokens[3 * k + 1] = _COLOR_BASE + p.color_index
        tokens[3 * k + 2] = _MOTION_BASE + MOTIONS.index(p.motion)
    return tokens


@dataclass(frozen=True)
class SceneConfig:
    frames: int = 16
    n_primitives: tuple = (1, 4)
    half_size: tuple = (0.3, 0.7)
    # metres per frame
    speed: tuple = (0.02, 0.1)
    # |x|, |y| of primitive centres stays below this (keeps bodies in a 4 m cube)
    extent: float = 1.5
    motion_probs: tuple = (0.2, 0.5, 0.3)
    checker_size: float = 1.0

    def validate(self):
        for name in ("n_primitives", "half_size", "speed"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        lo, hi = self.n_primitives
        if lo < 1 or hi > MAX_PRIMITIVES:
            raise ConfigError(f"n_primitives must lie within [1, {MAX_PRIMITIVES}]")
        if self.half_size[0] <= 0 or self.speed[0] < 0:
            raise ConfigError("half_size must be positive and speed non-negative")
        if self.frames < 2:
            raise ConfigError("frames must be >= 2")
        if self.half_size[1] > 2.0 - self.extent + 0.5 or self.extent > 2.0:
            raise ConfigError("extent/half_size would leave the 4 m cube")
        if len(self.motion_probs) != 3 or abs(sum(self.motion_probs) - 1) > 1e-9:
            raise ConfigError("motion_probs must be 3 probabilities summing to 1")


def _sample_path(rng, start, n_way, frames, cfg: SceneConfig):
    if n_way == 1:
        return (tuple(start),), (0,)
    if n_way == 2 or frames < 3:
        wf = [0, frames - 1]
    else:
        wf = [0, int(rng.integers(1, frames - 1)), frames - 1]
    pts = [np.asarray(start, dtype=np.float64)]
    for a, b in zip(wf, wf[1:]):
        for _ in range(100):
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(*cfg.speed) * (b - a)
            nxt = pts[-1] + dist * np.array([np.cos(ang), np.sin(ang), 0.0])
            if np.all(np.abs(nxt[:2]) <= cfg.extent):
                break
        else:
            nxt = pts[-1].copy()
        pts.append(nxt)
    return tuple(tuple(float(x) for x in p) for p in pts), tuple(int(i) for i in wf)


def sample_scene(seed: int, config: SceneConfig | None = None, scene_id: int | None = None) -> SceneSpec:
    """Draw a random dynamic scene; deterministic in ``seed``."""
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng([seed, 0x5CE7E])
    n = int(rng.integers(cfg.n_primitives[0], cfg.n_primitives[1] + 1))
    color_ids = rng.choice(len(PALETTE), size=n, replace=False)
    prims = []
    for k in range(n):
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        half = float(rng.uniform(*cfg.half_size))
        xy = rng.uniform(-cfg.extent, cfg.extent, size=2)
        start = (float(xy[0]), float(xy[1]), half)
        n_way = 1 + int(rng.choice(3, p=cfg.motion_probs))
        wps, wf = _sample_path(rng, start, n_way, cfg.frames, cfg)
        prims.append(
            PrimitiveSpec(
                shape=shape,
                half_size=half,
                color=PALETTE[int(color_ids[k])],
                waypoints=wps,
                waypoint_frames=wf,
                color_index=int(color_ids[k]),
            )
        )
    sid = seed if scene_id is None else scene_id
    return SceneSpec(sid, cfg.frames, tuple(prims), checker_size=cfg.checker_size)


def animate(scene: SceneSpec, frame) -> np.ndarray:
    """Primitive centres at ``frame``, shape (n_primitives, 3)."""
    if not 0 <= frame <= scene.frames - 1:
        raise BoundsError(f"frame {frame} outside [0, {scene.frames - 1}]")
    out = np.empty((len(scene.primitives), 3))
    for k, p in enumerate(scene.primitives):
        wp = np.asarray(p.waypoints, dtype=np.float64)
        if len(wp) == 1:
            out[k] = wp[0]
            continue
        for j in range(3):
            out[k, j] = np.interp(frame, p.waypoint_frames, wp[:, j])
    return out


# -- rendering ---------------------------------------------------------------


def _ray_sphere(o, d, c, r):
    oc = o - c
    b = d @ oc
    disc = b * b - (oc @ oc - r * r)
    t = np.full(disc.shape, np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0, t1 = -b - sq, -b + sq
    near = np.where(t0 > 1e-9, t0, t1)
    hit = ok & (near > 1e-9)
    t[hit] = near[hit]
    return t


def _ray_box(o, d, c, h):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (c - h - o) * inv
        tb = (c + h - o) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=-1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=-1)
    near = np.where(tmin > 1e-9, tmin, tmax)
    hit = (tmax >= tmin) & (near > 1e-9)
    return np.where(hit, near, np.inf)


def render_layers(scene: SceneSpec, pose: CameraPose, intrinsics: Intrinsics, frame: int,
                  width: int = 48, height: int = 48):
    """Render one frame and return ``(image, id_map, solo_masks)``.

    ``image`` is (3, h, w) float32 in [0, 1]; ``id_map`` holds the index of the
    primitive seen at each pixel (-1 for background); ``solo_masks`` is
    (n_primitives, h, w) giving each primitive's unoccluded silhouette.
    """
    centres = animate(scene, frame)
    d = pixel_rays(pose, intrinsics, width, height)
    o = pose.translation
    zbuf = np.full((height, width), np.inf)
    img = np.empty((height, width, 3))
    img[:] = scene.sky_color
    ids = np.full((height, width), -1, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -o[2] / d[..., 2]
    ground = (d[..., 2] < 0) & (tg > 0)
    if np.any(ground):
        hp = o[None, None, :2] + tg[..., None] * d[..., :2]
        cell = np.floor(hp / scene.checker_size).astype(np.int64).sum(axis=-1) % 2
        gcol = np.asarray(scene.ground_colors)[cell]
        img[ground] = gcol[ground]
        zbuf[ground] = tg[ground]

    solos = np.zeros((len(scene.primitives), height, width), dtype=bool)
    for k, (p, c) in enumerate(zip(scene.primitives, centres)):
        if p.shape == "sphere":
            t = _ray_sphere(o, d, c, p.half_size)
        else:
            t = _ray_box(o, d, c, p.half_size)
        solos[k] = np.isfinite(t)
        front = t < zbuf
        zbuf[front] = t[front]
        img[front] = p.color
        ids[front] = k
    image = np.clip(img, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)
    return image, ids, solos


def render_frame(scene: SceneSpec, pose: CameraPose, intrinsics: Intrinsics, frame: int,
                 width: int = 48, height: int = 48) -> np.ndarray:
    """Z-buffered render of one frame, (3, h, w) float32 in [0, 1]."""
    return render_layers(scene, pose, intrinsics, frame, width, height)[0]


@dataclass
class RenderedScene:
    scene_id: int
    videos: np.ndarray  # (n_cams, f, 3, h, w) float32
    trajectories: list
    centroids: np.ndarray  # (n_cams, f, n_prim, 2) analytic projections, pixels
    visible: np.ndarray  # (n_cams, f, n_prim) bool: in front, inside the image, unoccluded
    pixel_counts: np.ndarray = field(default=None)  # (n_cams, f, n_prim) visible pixels

    @property
    def n_cameras(self) -> int:
        return len(self.trajectories)


def visibility(ids: np.ndarray, solos: np.ndarray, depth) -> tuple:
    """Per-primitive (unoccluded flag, visible pixel count) from one frame's layers."""
    n = solos.shape[0]
    flags = np.zeros(n, dtype=bool)
    counts = np.zeros(n, dtype=np.int64)
    for k in range(n):
        solo = solos[k]
        seen = ids == k
        counts[k] = int(seen.sum())
        touches = solo[0].any() or solo[-1].any() or solo[:, 0].any() or solo[:, -1].any()
        flags[k] = bool(depth[k] > 0 and counts[k] > 0 and counts[k] == solo.sum() and not touches)
    return flags, counts


def render_scene(scene: SceneSpec, trajectories: Sequence, width: int = 48, height: int = 48) -> RenderedScene:
    """Render every camera of a scene with per-frame centroid metadata."""
    f = scene.frames
    for k, tr in enumerate(trajectories):
        if len(tr.poses) != f:
            raise ShapeError(f"trajectory {k} has {len(tr.poses)} poses, scene has {f} frames")
    n_cam, n_prim = len(trajectories), len(scene.primitives)
    videos = np.empty((n_cam, f, 3, height, width), dtype=np.float32)
    cents = np.empty((n_cam, f, n_prim, 2))
    vis = np.zeros((n_cam, f, n_prim), dtype=bool)
    counts = np.zeros((n_cam, f, n_prim), dtype=np.int64)
    for i in range(f):
        pos = animate(scene, i)
        for k, tr in enumerate(trajectories):
            pose = tr.poses[i]
            img, ids, solos = render_layers(scene, pose, tr.intrinsics, i, width, height)
            videos[k, i] = img
            uv, z = project_many(pos, pose, tr.intrinsics)
            cents[k, i] = uv
            vis[k, i], counts[k, i] = visibility(ids, solos, z)
    return RenderedScene(scene.scene_id, videos, list(trajectories), cents, vis, counts)
