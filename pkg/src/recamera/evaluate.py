"""Oracle-based evaluation and ablation harness.

Generated videos are scored against the renderer's ground truth:

* PSNR against the ground-truth render under the target trajectory;
* centroid reprojection error: each primitive is located in the generated
  frame by nearest-colour segmentation and compared with the analytic
  projection of its animated centre (a proxy for camera accuracy);
* sync error: per frame, the source-view and generated-view detections are
  triangulated and the residual of the triangulated point is measured in both
  views (a proxy for cross-view synchronization).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .camera import backproject_ray, project_many, triangulate_midpoint
from .dataset import Dataset
from .errors import ConfigError
from .flow import euler_sample
from .model import VideoDiT, decode_latent, encode_latent, load_checkpoint
from .scenegen import render_scene
from .train import TrainConfig, relative_cams, train
from .trajgen import gen_trajectory

PSNR_CAP = 99.0
COLOR_TOL = 0.25
EVAL_KINDS = ("pan", "tilt", "translate", "zoom_in", "zoom_out", "arc")
METRICS = ("psnr", "reproj_err", "sync_err")


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def detect_centroids(frame: np.ndarray, colors, tol: float = COLOR_TOL):
    """Centroid (u, v) of the pixels nearest to each colour within ``tol``.

    ``frame`` is (3, h, w). Returns ``(centroids, counts)``; undetected
    primitives get NaN centroids and a zero count.
    """
    colors = np.asarray(colors, dtype=np.float64)
    img = np.asarray(frame, dtype=np.float64).transpose(1, 2, 0)
    dist = np.linalg.norm(img[:, :, None, :] - colors[None, None], axis=-1)
    nearest = dist.argmin(-1)
    ok = dist.min(-1) < tol
    h, w = nearest.shape
    vv, uu = np.mgrid[0:h, 0:w] + 0.5
    cents = np.full((len(colors), 2), np.nan)
    counts = np.zeros(len(colors), dtype=np.int64)
    for k in range(len(colors)):
        m = ok & (nearest == k)
        counts[k] = int(m.sum())
        if counts[k]:
            cents[k] = (uu[m].mean(), vv[m].mean())
    return cents, counts


def detect_video(video: np.ndarray, colors, tol: float = COLOR_TOL):
    out = [detect_centroids(fr, colors, tol) for fr in video]
    return np.stack([c for c, _ in out]), np.stack([n for _, n in out])


def reprojection_errors(video, scene, traj, visible) -> np.ndarray:
    """Per (frame, primitive) pixel error vs the analytic projection.

    NaN where the primitive is not unoccluded in the ground truth; ``inf`` where
    it should be visible but was not detected.
    """
    from .scenegen import animate

    colors = [p.color for p in scene.primitives]
    det, _ = detect_video(video, colors)
    f, n = visible.shape
    err = np.full((f, n), np.nan)
    for i in range(f):
        uv, _ = project_many(animate(scene, i), traj.poses[i], traj.intrinsics)
        for k in range(n):
            if not visible[i, k]:
                continue
            err[i, k] = np.inf if np.isnan(det[i, k, 0]) else float(np.linalg.norm(det[i, k] - uv[k]))
    return err


def sync_errors(src_video, src_traj, src_visible, gen_video, tgt_traj, tgt_visible, scene) -> np.ndarray:
    """Triangulation residual (pixels) of per-frame detections across the two views."""
    colors = [p.color for p in scene.primitives]
    ds_, _ = detect_video(src_video, colors)
    dg, _ = detect_video(gen_video, colors)
    f, n = src_visible.shape
    err = np.full((f, n), np.nan)
    for i in range(f):
        ps, pt = src_traj.poses[i], tgt_traj.poses[i]
        for k in range(n):
            if not (src_visible[i, k] and tgt_visible[i, k]):
                continue
            if np.isnan(ds_[i, k, 0]) or np.isnan(dg[i, k, 0]):
                err[i, k] = np.inf
                continue
            o1, d1 = backproject_ray(ds_[i, k], ps, src_traj.intrinsics)
            o2, d2 = backproject_ray(dg[i, k], pt, tgt_traj.intrinsics)
            x = triangulate_midpoint(o1, d1, o2, d2)
            r1 = project_many(x, ps, src_traj.intrinsics)[0]
            r2 = project_many(x, pt, tgt_traj.intrinsics)[0]
            err[i, k] = 0.5 * (np.linalg.norm(r1 - ds_[i, k]) + np.linalg.norm(r2 - dg[i, k]))
    return err


def _summ(err: np.ndarray):
    vals = err[np.isfinite(err)]
    n_und = int(np.isinf(err).sum())
    return (float(vals.mean()) if vals.size else float("nan")), int(vals.size), n_und


@dataclass
class EvalReport:
    rows: list
    meta: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> dict:
        return aggregate(self.rows)

    def to_json(self, path):
        Path(path).write_text(json.dumps({"rows": self.rows, "aggregates": self.aggregates, "meta": self.meta},
                                         indent=1, default=float))

    def to_csv(self, path):
        keys = sorted({k for r in self.rows for k in r})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.rows)


def aggregate(rows) -> dict:
    agg = {"n_videos": len(rows)}
    for key in METRICS + ("first_frame_psnr",):
        vals = np.array([r[key] for r in rows if key in r and r[key] is not None], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            agg[f"{key}_mean"] = float(vals.mean())
            agg[f"{key}_median"] = float(np.median(vals))
    agg["undetected"] = int(sum(r.get("undetected", 0) for r in rows))
    return agg


# -- generation ----------------------------------------------------------------


def condition_for_mode(source: torch.Tensor, mode: str, seed: int) -> torch.Tensor:
    """Inference-time condition latent: the source (v2v), its first frame (i2v) or noise (t2v)."""
    gen = torch.Generator().manual_seed(int(seed) + 104729)
    noise = torch.randn(source.shape, generator=gen, dtype=source.dtype)
    if mode == "v2v":
        return source
    if mode == "i2v":
        out = noise.clone()
        out[:, 0] = source[:, 0]
        return out
    if mode == "t2v":
        return noise
    raise ConfigError(f"unknown generation mode {mode!r}")


@torch.no_grad()
def generate(model: VideoDiT, source_pixels, cams, descriptor, steps: int = 50, seed: int = 0,
             mode: str = "v2v", pool: int = 1, cond_noise: float = 0.0) -> np.ndarray:
    """Sample target videos; inputs are batched numpy arrays, output pixels (b, f, 3, h, w)."""
    model.eval()
    src = encode_latent(torch.as_tensor(np.asarray(source_pixels, dtype=np.float32)), pool)
    if cond_noise > 0:
        g = torch.Generator().manual_seed(int(seed) + 7)
        src = (1 - cond_noise) * src + cond_noise * torch.randn(src.shape, generator=g)
    cond = condition_for_mode(src, mode, seed)
    cams_t = torch.as_tensor(np.asarray(cams, dtype=np.float32))
    desc = torch.as_tensor(np.asarray(descriptor, dtype=np.int64))

    def fn(z, t):
        return model(z, cond, cams_t, desc, t)

    z = euler_sample(fn, {}, steps, seed, tuple(src.shape))
    return decode_latent(z, pool).numpy()


def eval_targets(rec, kinds, seed: int, source_cam: int = 0):
    """Held-out target trajectories starting from the source camera's first pose."""
    src_traj = rec.trajectories[source_cam]
    subject = rec.scene.subject_position
    out = []
    for k, kind in enumerate(kinds):
        tr = gen_trajectory(kind, src_traj.poses[0], subject, seed * 1000 + k, rec.scene.frames,
                            intrinsics=src_traj.intrinsics)
        out.append(tr)
    return out


def targets_for(rec, targets: str, seed: int, source_cam: int, width: int, height: int, kinds=EVAL_KINDS):
    """Target trajectories with their ground-truth videos and visibility.

    ``"presets"``: held-out preset trajectories from the source start pose,
    rendered on the fly. ``"dataset"``: the scene's other recorded cameras.
    """
    if targets == "presets":
        trajs = eval_targets(rec, kinds, seed, source_cam)
        gt = render_scene(rec.scene, trajs, width, height)
        return trajs, gt.videos, gt.visible
    if targets == "dataset":
        keep = [k for k in range(len(rec.trajectories)) if k != source_cam]
        return [rec.trajectories[k] for k in keep], rec.videos[keep], rec.visible[keep]
    raise ConfigError(f"unknown target set {targets!r}")


def evaluate_videos(rec, gen_videos, targets, gt_videos, gt_visible, source_cam: int, mode: str) -> list:
    rows = []
    src_traj = rec.trajectories[source_cam]
    src_video = rec.videos[source_cam]
    src_vis = rec.visible[source_cam]
    for v, tr, k in zip(gen_videos, targets, range(len(targets))):
        rep = reprojection_errors(v, rec.scene, tr, gt_visible[k])
        syn = sync_errors(src_video, src_traj, src_vis, v, tr, gt_visible[k], rec.scene)
        rm, rn, ru = _summ(rep)
        sm, _, su = _summ(syn)
        rows.append({
            "scene_id": rec.scene.scene_id,
            "kind": tr.kind,
            "mode": mode,
            "psnr": psnr(v, gt_videos[k]),
            "reproj_err": rm,
            "sync_err": sm,
            "n_prim_frames": rn,
            "undetected": ru + su,
        })
    return rows


def check_split(ds: Dataset, scene_ids, train_split: str = "train"):
    leaked = [s for s in scene_ids if ds.split_of(s) == train_split]
    if leaked:
        raise ConfigError(f"evaluation scenes {leaked[:5]} belong to the training split")


def eval_v2v(model: VideoDiT, ds: Dataset, scene_ids, kinds=EVAL_KINDS, steps: int = 50, seed: int = 0,
             mode: str = "v2v", meta: dict | None = None, pool: int = 1, allow_train: bool = False,
             source_cam: int = 0, targets: str = "presets", cond_noise: float = 0.0) -> EvalReport:
    """Generate each (scene, target trajectory) pair and score it against ground truth."""
    if not allow_train:
        check_split(ds, scene_ids)
    trained = (meta or {}).get("trained_modes")
    rows = []
    for sid in scene_ids:
        rec = ds.load(sid)
        trajs, gt_v, gt_vis = targets_for(rec, targets, seed + sid, source_cam, ds.width, ds.height, kinds)
        src = np.repeat(rec.videos[source_cam][None], len(trajs), axis=0)
        cams = np.stack([relative_cams(rec.trajectories[source_cam], tr) for tr in trajs])
        desc = np.repeat(rec.descriptor[None], len(trajs), axis=0)
        vids = generate(model, src, cams, desc, steps, seed + 31 * sid, mode, pool, cond_noise)
        rs = evaluate_videos(rec, vids, trajs, gt_v, gt_vis, source_cam, mode)
        for r, v in zip(rs, vids):
            if mode == "i2v":
                r["first_frame_psnr"] = psnr(v[0], rec.videos[source_cam][0])
            r["untrained_mode"] = bool(trained is not None and mode not in trained)
        rows += rs
    info = {"mode": mode, "sampler_steps": steps, "seed": seed, "conditioning": model.cfg.mode, "targets": targets}
    info.update({k: v for k, v in (meta or {}).items() if k in ("checkpoint", "step")})
    return EvalReport(rows, info)


def eval_copy_source(ds: Dataset, scene_ids, kinds=EVAL_KINDS, seed: int = 0, source_cam: int = 0,
                     targets: str = "presets") -> EvalReport:
    """Trivial baseline: return the source video unchanged for every target trajectory."""
    rows = []
    for sid in scene_ids:
        rec = ds.load(sid)
        trajs, gt_v, gt_vis = targets_for(rec, targets, seed + sid, source_cam, ds.width, ds.height, kinds)
        vids = np.repeat(rec.videos[source_cam][None], len(trajs), axis=0)
        rows += evaluate_videos(rec, vids, trajs, gt_v, gt_vis, source_cam, "copy_source")
    return EvalReport(rows, {"mode": "copy_source", "seed": seed, "targets": targets})


def eval_ground_truth(ds: Dataset, scene_ids, kinds=EVAL_KINDS, seed: int = 0, source_cam: int = 0):
    """Score the ground-truth renders themselves (oracle soundness); returns raw error arrays."""
    reps, syns = [], []
    for sid in scene_ids:
        rec = ds.load(sid)
        targets = eval_targets(rec, kinds, seed + sid)
        gt = render_scene(rec.scene, targets, ds.width, ds.height)
        for k, tr in enumerate(targets):
            reps.append(reprojection_errors(gt.videos[k], rec.scene, tr, gt.visible[k]).ravel())
            syns.append(sync_errors(rec.videos[source_cam], rec.trajectories[source_cam], rec.visible[source_cam],
                                    gt.videos[k], tr, gt.visible[k], rec.scene).ravel())
    return np.concatenate(reps), np.concatenate(syns)


def eval_modes(model: VideoDiT, ds: Dataset, scene_ids, meta: dict | None = None, **kw) -> dict:
    """t2v / i2v / v2v reports for the same scenes and trajectories."""
    return {m: eval_v2v(model, ds, scene_ids, mode=m, meta=meta, **kw) for m in ("t2v", "i2v", "v2v")}


# -- ablations -----------------------------------------------------------------


@dataclass(frozen=True)
class AblationConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (0,)
    eval_steps: int = 50
    eval_split: str = "test"
    max_eval_scenes: int = 0  # 0 = all
    kinds: tuple = EVAL_KINDS


TRAINING_VARIANTS = (
    ("Baseline", False, False),
    ("+ 3D-Attn. tuning", True, False),
    ("+ Drop latent", False, True),
    ("+ Both", True, True),
)


def _eval_ids(ds: Dataset, cfg: AblationConfig):
    ids = ds.ids(cfg.eval_split)
    return ids[: cfg.max_eval_scenes] if cfg.max_eval_scenes else ids


def _train_and_eval(tc: TrainConfig, out: Path, ds: Dataset, cfg: AblationConfig, seed: int, modes=("v2v",)):
    summary = train(tc, out, ds)
    model, meta = load_checkpoint(summary["checkpoint"])
    meta = {**meta, "checkpoint": summary["checkpoint"]}
    ids = _eval_ids(ds, cfg)
    reports = {m: eval_v2v(model, ds, ids, cfg.kinds, cfg.eval_steps, seed, m, meta, tc.latent_pool)
               for m in modes}
    return summary, reports


def ablate_conditioning(cfg: AblationConfig, out_dir, ds: Dataset | None = None) -> dict:
    """Train frame/channel/view-dim variants with identical budgets; compare per seed."""
    ds = ds or Dataset(cfg.train.dataset)
    out = Path(out_dir)
    copy = eval_copy_source(ds, _eval_ids(ds, cfg), cfg.kinds)
    per_seed = []
    for seed in cfg.seeds:
        rows = []
        for mode in ("frame_dim", "channel_dim", "view_dim"):
            tc = replace(cfg.train, mode=mode, seed=seed, stage="recam_finetune")
            summary, reps = _train_and_eval(tc, out / f"seed{seed}" / mode, ds, cfg, seed)
            agg = reps["v2v"].aggregates
            reps["v2v"].to_json(out / f"seed{seed}" / mode / "report.json")
            rows.append({"variant": mode, "steps": summary["steps"], **{k: agg.get(f"{k}_mean") for k in METRICS}})
        if len({r["steps"] for r in rows}) != 1:
            raise ConfigError("training budgets differ across conditioning variants")
        by = {r["variant"]: r for r in rows}
        fd = by["frame_dim"]
        others = [by["channel_dim"], by["view_dim"]]
        # a metric with no finite value (nothing detected) ranks last
        ps = lambda r: -math.inf if r["psnr"] is None else r["psnr"]  # noqa: E731
        se = lambda r: math.inf if r["sync_err"] is None else r["sync_err"]  # noqa: E731
        per_seed.append({
            "seed": seed,
            "rows": rows,
            "ranking_psnr": [r["variant"] for r in sorted(rows, key=lambda r: -ps(r))],
            "frame_dim_best_psnr": all(ps(fd) >= ps(o) for o in others),
            "frame_dim_best_sync": all(se(fd) <= se(o) for o in others) and fd["sync_err"] is not None,
        })
    result = {"seeds": per_seed, "copy_source": copy.aggregates}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablate_conditioning.json").write_text(json.dumps(result, indent=1, default=float))
    return result


def ablate_training(cfg: AblationConfig, out_dir, ds: Dataset | None = None) -> dict:
    """Freeze policy on/off x mode dropping on/off, evaluated on t2v/i2v/v2v."""
    ds = ds or Dataset(cfg.train.dataset)
    out = Path(out_dir)
    seed = cfg.seeds[0]
    rows = []
    for label, freeze, drop in TRAINING_VARIANTS:
        p = (0.2, 0.2) if drop else (0.0, 0.0)
        tc = replace(cfg.train, freeze=freeze, p_t2v=p[0], p_i2v=p[1], seed=seed, stage="recam_finetune")
        slug = label.strip("+ ").replace(" ", "_").replace(".", "").lower()
        summary, reps = _train_and_eval(tc, out / slug, ds, cfg, seed, modes=("t2v", "i2v", "v2v"))
        row = {"variant": label, "steps": summary["steps"], "freeze": freeze, "drop_latent": drop,
               "checkpoint": summary["checkpoint"]}
        for m, rep in reps.items():
            agg = rep.aggregates
            for k in METRICS:
                row[f"{m}_{k}"] = agg.get(f"{k}_mean")
            row[f"{m}_untrained"] = any(r["untrained_mode"] for r in rep.rows)
        rows.append(row)
    if len({r["steps"] for r in rows}) != 1:
        raise ConfigError("training budgets differ across variants")
    result = {"rows": rows}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablate_training.json").write_text(json.dumps(result, indent=1, default=float))
    return result


def dump_png(video: np.ndarray, directory):
    """Write a (f, 3, h, w) [0, 1] video as frame_000.png, ..."""
    from PIL import Image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(video):
        img = (np.clip(fr.transpose(1, 2, 0), 0, 1) * 255 + 0.5).astype(np.uint8)
        Image.fromarray(img).save(d / f"frame_{i:03d}.png")
