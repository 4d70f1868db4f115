"""Command-line entry point: ``recamera <subcommand> [--config F] [--set k=v ...] [--out D] [--seed N]``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
The effective configuration is written to ``<out>/effective_config.yaml``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgio
from .dataset import Dataset, DatasetConfig, render_dataset
from .errors import ConfigError, NumericError, ShapeError
from .evaluate import (EVAL_KINDS, AblationConfig, ablate_conditioning, ablate_training, dump_png,
                       eval_copy_source, eval_v2v, generate)
from .model import load_checkpoint
from .scenegen import SceneConfig, sample_scene
from .train import TrainConfig, relative_cams, train
from .trajgen import KINDS, Trajectory, TrajectoryConfig, gen_trajectory, sample_start_pose
from .camera import Intrinsics

log = logging.getLogger("recamera")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _check_sampling(mode: str, steps: int, cond_noise: float):
    if mode not in ("t2v", "i2v", "v2v"):
        raise ConfigError(f"unknown generation mode {mode!r}")
    if steps < 1:
        raise ConfigError("sampler steps must be >= 1")
    if not 0.0 <= cond_noise < 1.0:
        raise ConfigError("cond_noise must lie in [0, 1)")


@dataclass(frozen=True)
class SampleConfig:
    checkpoint: str = ""
    dataset: str = ""
    scene_id: int = -1  # -1: first test-split scene
    source_cam: int = 0
    # preset family name or path to a camera.json
    trajectory: str = "arc"
    mode: str = "v2v"
    steps: int = 50
    seed: int = 0
    cond_noise: float = 0.0
    latent_pool: int = 1
    # used when no dataset is given (t2v only)
    scene_seed: int = 0

    def validate(self):
        _check_sampling(self.mode, self.steps, self.cond_noise)


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str = ""
    dataset: str = ""
    split: str = "test"
    modes: tuple = ("v2v",)
    steps: int = 50
    seed: int = 0
    kinds: tuple = EVAL_KINDS
    targets: str = "presets"
    max_scenes: int = 0
    cond_noise: float = 0.0
    latent_pool: int = 1
    baseline: bool = True

    def validate(self):
        for m in self.modes:
            _check_sampling(m, self.steps, self.cond_noise)
        if self.targets not in ("presets", "dataset"):
            raise ConfigError(f"unknown target set {self.targets!r}")
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class AblateConfig:
    table: str = "conditioning"  # or "training"
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self):
        if self.table not in ("conditioning", "training"):
            raise ConfigError(f"unknown ablation table {self.table!r}")
        self.ablation.train.validate()


# -- subcommands -----------------------------------------------------------------


def cmd_render_dataset(cfg: DatasetConfig, out: Path) -> dict:
    m = render_dataset(out, cfg, progress=lambda i: log.info("scene %d", i) if i % 50 == 0 else None)
    return {"scenes": len(m["scene_ids"]), "root": str(out)}


def cmd_train(cfg: TrainConfig, out: Path) -> dict:
    return train(cfg, out)


def _load_model(path: str):
    if not path:
        raise ConfigError("checkpoint is not set")
    model, meta = load_checkpoint(path)
    return model, {**meta, "checkpoint": str(path)}


def _target_trajectory(spec: str, start, subject, seed: int, f: int, intr) -> Trajectory:
    if spec in KINDS:
        return gen_trajectory(spec, start, subject, seed, f, intrinsics=intr)
    p = Path(spec)
    if not p.exists():
        raise ConfigError(f"trajectory {spec!r} is neither a preset {KINDS} nor an existing camera.json")
    traj = Trajectory.from_json_dict(json.loads(p.read_text()))
    if len(traj.poses) != f:
        raise ShapeError(f"{spec}: trajectory has {len(traj.poses)} poses, model expects {f}")
    return traj


def cmd_sample(cfg: SampleConfig, out: Path) -> dict:
    model, meta = _load_model(cfg.checkpoint)
    mc = model.cfg
    f, h, w = mc.frames, mc.height * cfg.latent_pool, mc.width * cfg.latent_pool
    if cfg.dataset:
        ds = Dataset(cfg.dataset)
        sid = cfg.scene_id if cfg.scene_id >= 0 else (ds.ids("test") or ds.ids())[0]
        rec = ds.load(sid)
        scene, source_traj, source = rec.scene, rec.trajectories[cfg.source_cam], rec.videos[cfg.source_cam]
        desc = rec.descriptor
    else:
        if cfg.mode != "t2v":
            raise ConfigError(f"mode {cfg.mode} needs a source video; set dataset")
        scene = sample_scene(cfg.scene_seed, SceneConfig(frames=f))
        intr = Intrinsics.from_focal_mm(35.0, w, h)
        start = sample_start_pose(cfg.seed, scene.subject_position, TrajectoryConfig())
        source_traj = gen_trajectory("static", start, scene.subject_position, cfg.seed, f, intrinsics=intr)
        source = np.zeros((f, 3, h, w), np.float32)  # replaced by noise in t2v
        desc = scene.descriptor
    target = _target_trajectory(cfg.trajectory, source_traj.poses[0], scene.subject_position, cfg.seed, f,
                                source_traj.intrinsics)
    cams = relative_cams(source_traj, target)[None]
    video = generate(model, source[None], cams, desc[None], cfg.steps, cfg.seed, cfg.mode, cfg.latent_pool,
                     cfg.cond_noise)[0]
    trained = meta.get("trained_modes")
    untrained = trained is not None and cfg.mode not in trained
    if untrained:
        log.warning("checkpoint was not trained for mode %s (trained: %s)", cfg.mode, trained)
    out.mkdir(parents=True, exist_ok=True)
    dump_png(video, out / "frames")
    video.astype("<f4").tofile(out / "frames.bin")
    (out / "camera.json").write_text(json.dumps(target.to_json_dict()))
    info = {"mode": cfg.mode, "untrained_mode": untrained, "shape": list(video.shape), "scene_id": scene.scene_id,
            "checkpoint": cfg.checkpoint}
    (out / "sample.json").write_text(json.dumps(info, indent=1))
    return info


def cmd_eval(cfg: EvalConfig, out: Path) -> dict:
    model, meta = _load_model(cfg.checkpoint)
    ds = Dataset(cfg.dataset)
    if cfg.split == "train":
        raise ConfigError("refusing to evaluate on the training split")
    ids = ds.ids(cfg.split)
    if cfg.max_scenes:
        ids = ids[: cfg.max_scenes]
    out.mkdir(parents=True, exist_ok=True)
    result = {}
    for mode in cfg.modes:
        rep = eval_v2v(model, ds, ids, cfg.kinds, cfg.steps, cfg.seed, mode, meta, cfg.latent_pool,
                       targets=cfg.targets, cond_noise=cfg.cond_noise)
        rep.to_json(out / f"report_{mode}.json")
        rep.to_csv(out / f"report_{mode}.csv")
        result[mode] = rep.aggregates
    if cfg.baseline:
        rep = eval_copy_source(ds, ids, cfg.kinds, cfg.seed, targets=cfg.targets)
        rep.to_json(out / "report_copy_source.json")
        rep.to_csv(out / "report_copy_source.csv")
        result["copy_source"] = rep.aggregates
    return result


def cmd_ablate(cfg: AblateConfig, out: Path) -> dict:
    if cfg.table == "conditioning":
        return ablate_conditioning(cfg.ablation, out)
    if cfg.table == "training":
        return ablate_training(cfg.ablation, out)
    raise ConfigError(f"unknown ablation table {cfg.table!r}")


COMMANDS = {
    "render-dataset": (DatasetConfig, cmd_render_dataset),
    "train": (TrainConfig, cmd_train),
    "sample": (SampleConfig, cmd_sample),
    "eval": (EvalConfig, cmd_eval),
    "ablate": (AblateConfig, cmd_ablate),
}


def _set_seed(cfg, seed: int):
    if isinstance(cfg, AblateConfig):
        return dataclasses.replace(cfg, ablation=dataclasses.replace(cfg.ablation, seeds=(seed,)))
    return dataclasses.replace(cfg, seed=seed)


def build_config(command: str, config_path: str | None, overrides, seed: int | None):
    cls, _ = COMMANDS[command]
    data = cfgio.load_yaml(config_path) if config_path else {}
    data = cfgio.apply_overrides(data, overrides or [])
    cfg = cfgio.from_dict(cls, data)
    if seed is not None:
        cfg = _set_seed(cfg, seed)
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recamera", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = build_config(args.command, args.config, args.set, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        cfgio.dump_yaml(cfg, out / "effective_config.yaml")
        result = COMMANDS[args.command][1](cfg, out)
    except (ConfigError, ShapeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=1, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
