"""Base-model pretraining and camera-controlled fine-tuning.

Batches are a pure function of ``(seed, step)`` so a run can be resumed from
any checkpoint and reproduce the same parameter trajectory.
"""
from __future__ import annotations

import json
import math
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .config import to_dict
from .dataset import Dataset
from .errors import ConfigError, NumericError
from .flow import cfm_loss, forward_noise
from .model import MODES, ModelConfig, VideoDiT, encode_latent, group_of, load_checkpoint, save_checkpoint
from .scenegen import DESCRIPTOR_LEN, VOCAB_SIZE
from .trajgen import flatten_poses, normalize_to_reference

log = logging.getLogger(__name__)

STAGES = ("pretrain_base", "recam_finetune")
TRAIN_MODES = ("t2v", "i2v", "v2v")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "recam_finetune"
    lr: float = 1e-4
    # "constant" or "cosine" (decays to zero at ``steps``)
    lr_schedule: str = "constant"
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    # condition-latent noise level, in steps of a nominal 1000-step schedule
    cond_noise_steps: tuple = (200, 500)
    p_t2v: float = 0.2
    p_i2v: float = 0.2
    mode: str = "frame_dim"
    dataset: str = ""
    base_checkpoint: str = ""
    checkpoint_every: int = 500
    freeze: bool = True
    grad_clip: float = 1.0
    latent_pool: int = 1
    val_batches: int = 4
    # restrict training to the first N training-split scenes (0 = all)
    train_subset: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if not (0 <= self.p_t2v and 0 <= self.p_i2v and self.p_t2v + self.p_i2v <= 1):
            raise ConfigError("need 0 <= p_t2v + p_i2v <= 1")
        lo, hi = self.cond_noise_steps
        if not 0 <= lo <= hi <= 1000:
            raise ConfigError("need 0 <= n_lo <= n_hi <= 1000")
        if self.mode not in MODES:
            raise ConfigError(f"unknown conditioning mode {self.mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")

    def trained_modes(self) -> list:
        if self.stage == "pretrain_base":
            return ["base"]
        modes = [m for m, p in (("t2v", self.p_t2v), ("i2v", self.p_i2v)) if p > 0]
        if self.p_t2v + self.p_i2v < 1:
            modes.append("v2v")
        return modes


@dataclass
class TrainBatch:
    source: torch.Tensor | None  # clean source latents (b, f, c, h, w)
    target: torch.Tensor
    cams: torch.Tensor | None  # (b, f, 12), relative to the source camera's first frame
    descriptor: torch.Tensor
    mode: str
    t: torch.Tensor
    eps: torch.Tensor
    cond: torch.Tensor | None = None  # source after condition noising / mode dropping
    scene_ids: list = field(default_factory=list)
    cam_pairs: list = field(default_factory=list)


# -- mode dropping and condition noising ------------------------------------


def select_mode(u: float, p_t2v: float = 0.2, p_i2v: float = 0.2) -> str:
    if u < p_t2v:
        return "t2v"
    if u < p_t2v + p_i2v:
        return "i2v"
    return "v2v"


def noise_condition_latent(z_s: np.ndarray, rng: np.random.Generator, steps=(200, 500)):
    """Lightly noise a condition latent; returns ``(z, t_c)`` with t_c = n / 1000."""
    n = int(rng.integers(steps[0], steps[1] + 1))
    t_c = n / 1000.0
    eps = rng.standard_normal(z_s.shape).astype(z_s.dtype)
    return forward_noise(z_s, eps, t_c).z_t, t_c


def apply_mode(batch: TrainBatch, u: float, rng: np.random.Generator, cfg: TrainConfig) -> TrainBatch:
    """Pick t2v / i2v / v2v from ``u`` and build the condition latent accordingly.

    v2v keeps the (condition-noised) source, i2v keeps only its first frame and
    replaces the rest with N(0, 1) noise, t2v replaces every frame.
    """
    mode = select_mode(u, cfg.p_t2v, cfg.p_i2v)
    src = batch.source.numpy()
    cond = np.empty_like(src)
    for k in range(src.shape[0]):
        cond[k], _ = noise_condition_latent(src[k], rng, cfg.cond_noise_steps)
    if mode == "t2v":
        cond = rng.standard_normal(src.shape).astype(src.dtype)
    elif mode == "i2v":
        cond[:, 1:] = rng.standard_normal(cond[:, 1:].shape).astype(src.dtype)
    return replace(batch, mode=mode, cond=torch.from_numpy(cond))


# -- batches -----------------------------------------------------------------


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, step, stream])


def batch_mode_draw(seed: int, step: int) -> float:
    """The uniform draw that decides a step's mode (its own stream, so it is cheap to replay)."""
    return float(step_rng(seed, step, 1).uniform())


def relative_cams(src_traj, tgt_traj) -> np.ndarray:
    ref = src_traj.poses[0]
    return flatten_poses(normalize_to_reference(tgt_traj, ref)).astype(np.float32)


def make_batch(ds: Dataset, cfg: TrainConfig, step: int, split: str = "train", seed: int | None = None) -> TrainBatch:
    seed = cfg.seed if seed is None else seed
    rng = step_rng(seed, step)
    ids = ds.ids(split)
    if split == "train" and cfg.train_subset:
        ids = ids[: cfg.train_subset]
    if not ids:
        raise ConfigError(f"dataset has no {split!r} scenes")
    src, tgt, cams, desc, sids, pairs = [], [], [], [], [], []
    for _ in range(cfg.batch_size):
        sid = int(ids[rng.integers(len(ids))])
        rec = ds.load(sid)
        i, j = (int(x) for x in rng.choice(ds.n_cameras, size=2, replace=False))
        src.append(rec.videos[i])
        tgt.append(rec.videos[j])
        cams.append(relative_cams(rec.trajectories[i], rec.trajectories[j]))
        desc.append(rec.descriptor)
        sids.append(sid)
        pairs.append((i, j))
    to_lat = lambda v: encode_latent(torch.from_numpy(np.stack(v)), cfg.latent_pool)  # noqa: E731
    target = to_lat(tgt)
    t = torch.from_numpy(rng.uniform(0.0, 1.0, size=cfg.batch_size).astype(np.float32))
    eps = torch.from_numpy(rng.standard_normal(target.shape).astype(np.float32))
    pretrain = cfg.stage == "pretrain_base"
    batch = TrainBatch(
        source=None if pretrain else to_lat(src),
        target=target,
        cams=None if pretrain else torch.from_numpy(np.stack(cams)),
        descriptor=torch.from_numpy(np.stack(desc)),
        mode="base" if pretrain else "v2v",
        t=t,
        eps=eps,
        scene_ids=sids,
        cam_pairs=pairs,
    )
    if not pretrain:
        batch = apply_mode(batch, batch_mode_draw(seed, step), step_rng(seed, step, 2), cfg)
    return batch


# -- model setup ---------------------------------------------------------------


def freeze_policy(model: VideoDiT, stage: str, freeze: bool = True) -> dict:
    """Map parameter name -> trainable flag."""
    mode = model.cfg.mode
    mask = {}
    for name, _ in model.named_parameters():
        g = group_of(name)
        if stage == "pretrain_base":
            # descriptor-to-video base: no source, no camera
            mask[name] = g in ("other", "attn_3d")
        elif not freeze:
            mask[name] = True
        else:
            trainable = {"camera_encoder", "attn_3d"}
            if mode == "view_dim":
                trainable.add("attn_view")
            if mode == "channel_dim":
                trainable.add("cond_input")
            mask[name] = g in trainable
    return mask


def model_config_for(ds: Dataset, cfg: TrainConfig) -> ModelConfig:
    pool = cfg.latent_pool
    return replace(
        cfg.model,
        frames=ds.frames,
        channels=ds.channels,
        height=ds.height // pool,
        width=ds.width // pool,
        mode=cfg.mode,
        vocab_size=VOCAB_SIZE,
        descriptor_len=DESCRIPTOR_LEN,
    )


def build_model(ds: Dataset, cfg: TrainConfig) -> VideoDiT:
    torch.manual_seed(cfg.seed)
    if cfg.stage == "pretrain_base":
        return VideoDiT(model_config_for(ds, cfg))
    if not cfg.base_checkpoint or not Path(cfg.base_checkpoint).exists():
        raise FileNotFoundError(
            f"fine-tuning needs a base checkpoint; {cfg.base_checkpoint!r} not found "
            "(run the pretrain_base stage first)"
        )
    torch.manual_seed(cfg.seed)
    model, _ = load_checkpoint(cfg.base_checkpoint, mode=cfg.mode)
    return model


def make_optimizer(model: VideoDiT, mask: dict, lr: float):
    params = []
    for name, p in model.named_parameters():
        p.requires_grad_(mask[name])
        if mask[name]:
            params.append(p)
    return torch.optim.Adam(params, lr=lr)


def predict(model: VideoDiT, batch: TrainBatch, z_t=None, t=None):
    z_t = z_t if z_t is not None else forward_noise(batch.target, batch.eps, batch.t).z_t
    t = batch.t if t is None else t
    return model(z_t, batch.cond, batch.cams, batch.descriptor, t)


def batch_loss(model: VideoDiT, batch: TrainBatch):
    v = predict(model, batch)
    return cfm_loss(v, batch.target, batch.eps)


def lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_schedule == "cosine" and cfg.steps > 0:
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))
    return cfg.lr


def train_step(model: VideoDiT, optimizer, batch: TrainBatch, grad_clip: float = 1.0, step: int = -1) -> dict:
    optimizer.zero_grad(set_to_none=True)
    try:
        loss = batch_loss(model, batch)
    except NumericError as err:
        raise NumericError(f"step {step}, mode {batch.mode}, t={batch.t.tolist()}: {err}") from err
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}, mode {batch.mode}, t={batch.t.tolist()}")
    loss.backward()
    params = [p for g in optimizer.param_groups for p in g["params"]]
    gn = torch.nn.utils.clip_grad_norm_(params, grad_clip if grad_clip > 0 else float("inf"))
    optimizer.step()
    return {"loss": float(loss.detach()), "grad_norm": float(gn), "mode": batch.mode}


@torch.no_grad()
def validation_loss(model: VideoDiT, ds: Dataset, cfg: TrainConfig, split: str = "val") -> float:
    """CFM loss over a fixed set of held-out batches (independent of the step)."""
    split = split if ds.ids(split) else "train"
    losses = [float(batch_loss(model, make_batch(ds, cfg, k, split, seed=cfg.seed + 7919))) for k in range(cfg.val_batches)]
    return float(np.mean(losses))


# -- checkpoints -----------------------------------------------------------------


def save_training_state(out: Path, model, optimizer, step: int, cfg: TrainConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"ckpt_{step:06d}.safetensors"
    meta = {"step": step, "stage": cfg.stage, "trained_modes": cfg.trained_modes(), "train_config": to_dict(cfg)}
    save_checkpoint(path, model, meta=meta)
    torch.save(optimizer.state_dict(), out / f"optim_{step:06d}.pt")
    (out / "latest.json").write_text(json.dumps({"step": step, "checkpoint": path.name}))
    return path


def latest_checkpoint(out: Path):
    p = Path(out) / "latest.json"
    if not p.exists():
        return None
    d = json.loads(p.read_text())
    return Path(out) / d["checkpoint"], int(d["step"])


def train(cfg: TrainConfig, out_dir, dataset: Dataset | None = None, resume: bool = True,
          stop_at: int | None = None) -> dict:
    """Run (or resume) a training stage; returns a summary dict.

    ``stop_at`` ends the run early (used to test resumption); the configured
    step count still defines the schedule.
    """
    cfg.validate()
    out = Path(out_dir)
    ds = dataset or Dataset(cfg.dataset)
    model = build_model(ds, cfg)
    mask = freeze_policy(model, cfg.stage, cfg.freeze)
    start = 0
    found = latest_checkpoint(out) if resume else None
    if found:
        ck, start = found
        model, _ = load_checkpoint(ck)
    optimizer = make_optimizer(model, mask, cfg.lr)
    if found:
        optimizer.load_state_dict(torch.load(out / f"optim_{start:06d}.pt"))
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    summary = {"start_step": start}
    if start == 0:
        metrics_path.write_text("")
        summary["val_loss_start"] = validation_loss(model, ds, cfg)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    model.train()
    with metrics_path.open("a") as fh:
        for step in range(start, end):
            batch = make_batch(ds, cfg, step)
            for g in optimizer.param_groups:
                g["lr"] = lr_at(cfg, step)
            m = train_step(model, optimizer, batch, cfg.grad_clip, step)
            rec = {"step": step, "stage": cfg.stage, **m}
            fh.write(json.dumps(rec) + "\n")
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == end:
                save_training_state(out, model, optimizer, step + 1, cfg)
            if step % 100 == 0:
                log.info("step %d %s loss %.4f", step, m["mode"], m["loss"])
    if end == start:
        save_training_state(out, model, optimizer, end, cfg)
    model.eval()
    summary["val_loss_end"] = validation_loss(model, ds, cfg)
    summary["checkpoint"] = str(latest_checkpoint(out)[0])
    summary["steps"] = end
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
