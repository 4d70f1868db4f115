"""Synchronized multi-camera dataset on disk.

Layout::

    <root>/manifest.json
    <root>/scene_<id>/meta.json
    <root>/scene_<id>/cam_<k>/frames.bin     little-endian float32, f x c x h x w
    <root>/scene_<id>/cam_<k>/camera.json

Scene directories are written to a temporary name and renamed into place, so a
scene directory is either complete or absent.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import to_dict
from .errors import ConfigError, ShapeError
from .scenegen import SceneConfig, SceneSpec, render_scene, sample_scene
from .trajgen import Trajectory, TrajectoryConfig, sample_start_pose, sample_trajectory

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetConfig:
    n_scenes: int = 400
    n_cameras: int = 10
    seed: int = 0
    width: int = 48
    height: int = 48
    # probability that camera k >= 1 starts from camera 0's start pose
    shared_start_prob: float = 0.5
    scene: SceneConfig = field(default_factory=SceneConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)

    def validate(self):
        if self.n_scenes < 1 or self.n_cameras < 2:
            raise ConfigError("need >= 1 scene and >= 2 cameras")
        if not 0.0 <= self.shared_start_prob <= 1.0:
            raise ConfigError("shared_start_prob must lie in [0, 1]")
        self.scene.validate()
        self.trajectory.validate()


def split_of(scene_id: int) -> str:
    """80/10/10 train/val/test assignment from a hash of the scene id."""
    h = int(hashlib.sha256(f"scene-{scene_id}".encode()).hexdigest(), 16) % 10
    return "train" if h < 8 else ("val" if h == 8 else "test")


def scene_trajectories(scene: SceneSpec, cfg: DatasetConfig, seed: int) -> list:
    rng = np.random.default_rng([seed, 0xCA4])
    subject = scene.subject_position
    first_start = None
    trajs = []
    for k in range(cfg.n_cameras):
        start = None
        if k == 0:
            first_start = sample_start_pose(int(rng.integers(2**31)), subject, cfg.trajectory)
            start = first_start
        elif rng.uniform() < cfg.shared_start_prob:
            start = first_start
        trajs.append(
            sample_trajectory(int(rng.integers(2**31)), subject, scene.frames, cfg.trajectory,
                              cfg.width, cfg.height, start=start)
        )
    return trajs


def build_scene(cfg: DatasetConfig, index: int):
    seed = int(np.random.default_rng([cfg.seed, index]).integers(2**31))
    scene = sample_scene(seed, cfg.scene, scene_id=index)
    trajs = scene_trajectories(scene, cfg, seed)
    return scene, trajs


def write_scene(root: Path, scene: SceneSpec, rendered) -> Path:
    root = Path(root)
    final = root / f"scene_{scene.scene_id}"
    tmp = root / f".scene_{scene.scene_id}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for k, tr in enumerate(rendered.trajectories):
        cam = tmp / f"cam_{k}"
        cam.mkdir()
        rendered.videos[k].astype("<f4").tofile(cam / "frames.bin")
        (cam / "camera.json").write_text(json.dumps(tr.to_json_dict()))
    meta = {
        "scene_id": scene.scene_id,
        "descriptor": scene.descriptor.tolist(),
        "centroids": rendered.centroids.tolist(),
        "visible": rendered.visible.tolist(),
        "pixel_counts": rendered.pixel_counts.tolist(),
        "scene": scene.to_dict(),
    }
    (tmp / "meta.json").write_text(json.dumps(meta))
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def render_dataset(root, cfg: DatasetConfig, progress=None) -> dict:
    """Render ``cfg.n_scenes`` scenes with ``cfg.n_cameras`` cameras each."""
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids, splits = [], {}
    kinds = []
    for i in range(cfg.n_scenes):
        scene, trajs = build_scene(cfg, i)
        rendered = render_scene(scene, trajs, cfg.width, cfg.height)
        write_scene(root, scene, rendered)
        ids.append(i)
        splits[str(i)] = split_of(i)
        kinds += [t.kind for t in trajs]
        if progress:
            progress(i)
    manifest = {
        "scene_ids": ids,
        "splits": splits,
        "frames": cfg.scene.frames,
        "height": cfg.height,
        "width": cfg.width,
        "channels": 3,
        "n_cameras": cfg.n_cameras,
        "trajectory_kinds": kinds,
        "config": to_dict(cfg),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


@dataclass
class SceneRecord:
    scene: SceneSpec
    videos: np.ndarray  # (n_cams, f, c, h, w)
    trajectories: list
    descriptor: np.ndarray
    centroids: np.ndarray
    visible: np.ndarray


class Dataset:
    """Read access to a rendered dataset; scenes are loaded lazily and cached."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.json under {self.root}")
        self.manifest = json.loads(path.read_text())
        self.frames = self.manifest["frames"]
        self.height = self.manifest["height"]
        self.width = self.manifest["width"]
        self.channels = self.manifest["channels"]
        self.n_cameras = self.manifest["n_cameras"]
        self._cache = {}

    def ids(self, split: str | None = None) -> list:
        if split is None:
            return list(self.manifest["scene_ids"])
        return [i for i in self.manifest["scene_ids"] if self.manifest["splits"][str(i)] == split]

    def split_of(self, scene_id: int) -> str:
        return self.manifest["splits"][str(scene_id)]

    def load(self, scene_id: int) -> SceneRecord:
        if scene_id in self._cache:
            return self._cache[scene_id]
        d = self.root / f"scene_{scene_id}"
        meta = json.loads((d / "meta.json").read_text())
        shape = (self.frames, self.channels, self.height, self.width)
        vids, trajs = [], []
        for k in range(self.n_cameras):
            raw = np.fromfile(d / f"cam_{k}" / "frames.bin", dtype="<f4")
            if raw.size != np.prod(shape):
                raise ShapeError(f"{d}/cam_{k}/frames.bin has {raw.size} values, expected {np.prod(shape)}")
            vids.append(raw.reshape(shape))
            trajs.append(Trajectory.from_json_dict(json.loads((d / f"cam_{k}" / "camera.json").read_text())))
        rec = SceneRecord(
            scene=SceneSpec.from_dict(meta["scene"]),
            videos=np.stack(vids).astype(np.float32),
            trajectories=trajs,
            descriptor=np.asarray(meta["descriptor"], dtype=np.int64),
            centroids=np.asarray(meta["centroids"]),
            visible=np.asarray(meta["visible"], dtype=bool),
        )
        self._cache[scene_id] = rec
        return rec
