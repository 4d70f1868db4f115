"""Video diffusion transformer with camera injection and source-video conditioning.

Each block runs, in order: timestep-scaled RMSNorm -> spatial attention (within
a frame) -> camera injection -> 3D self-attention over every token ->
[per-frame view attention, view_dim only] -> cross-attention to the scene
descriptor -> feed-forward.

Source video conditioning modes:

``frame_dim``
    source and target tokens are concatenated along the frame axis (2f frame
    slots); the 3D attention couples them.
``channel_dim``
    source and noised target latents are stacked along channels before patch
    embedding; sequence length stays f * s.
``view_dim``
    source and target run as two token streams through shared weights, coupled
    by an extra per-frame attention across the two views.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError, ShapeError

MODES = ("frame_dim", "channel_dim", "view_dim")
GROUPS = ("camera_encoder", "attn_3d", "attn_view", "cond_input", "other")

_GROUP_PATTERNS = (
    (re.compile(r"^blocks\.\d+\.cam_enc\."), "camera_encoder"),
    (re.compile(r"^blocks\.\d+\.attn3d\."), "attn_3d"),
    (re.compile(r"^blocks\.\d+\.(attn_view|norm_view|mod_view)\."), "attn_view"),
    (re.compile(r"^patch_embed_source\."), "cond_input"),
    (
        re.compile(
            r"^(patch_embed\.|t_embed\.|desc_embed\.|desc_pos$|role_embed$|norm_out\.|mod_out\.|proj_out\."
            r"|blocks\.\d+\.(norm_s|attn_s|norm_3d|norm_c|attn_c|norm_f|ffn|mod)\.)"
        ),
        "other",
    ),
)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    depth: int = 4
    heads: int = 4
    patch: int = 8
    frames: int = 16
    channels: int = 3
    height: int = 48
    width: int = 48
    mode: str = "frame_dim"
    vocab_size: int = 12
    descriptor_len: int = 12
    mlp_ratio: int = 4
    # "aligned": source frame i and target frame i share temporal index i;
    # "offset": target frames use indices f..2f-1
    temporal_index: str = "aligned"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown conditioning mode {self.mode!r}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"latent {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.temporal_index not in ("aligned", "offset"):
            raise ConfigError(f"temporal_index {self.temporal_index!r}")

    @property
    def spatial_tokens(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    def sequence_length(self) -> int:
        """Tokens seen by one 3D-attention call."""
        n = self.frames * self.spatial_tokens
        return 2 * n if self.mode == "frame_dim" else n


def group_of(name: str) -> str:
    for pat, group in _GROUP_PATTERNS:
        if pat.search(name):
            return group
    raise ConfigError(f"parameter {name!r} has no group tag")


def encode_latent(pixels: torch.Tensor, pool: int = 1) -> torch.Tensor:
    """Identity 'VAE': [0, 1] pixels -> [-1, 1] latents, optionally average-pooled."""
    z = pixels * 2.0 - 1.0
    if pool > 1:
        lead = z.shape[:-3]
        z = F.avg_pool2d(z.reshape(-1, *z.shape[-3:]), pool)
        z = z.reshape(*lead, *z.shape[-3:])
    return z


def decode_latent(z: torch.Tensor, pool: int = 1) -> torch.Tensor:
    x = ((z + 1.0) / 2.0).clamp(0.0, 1.0)
    if pool > 1:
        lead = x.shape[:-3]
        x = F.interpolate(x.reshape(-1, *x.shape[-3:]), scale_factor=pool, mode="nearest")
        x = x.reshape(*lead, *x.shape[-3:])
    return x


def sinusoid(pos: torch.Tensor, n: int, base: float = 10000.0) -> torch.Tensor:
    """(..., ) positions -> (..., n) sin/cos features; n must be even."""
    half = n // 2
    freqs = torch.exp(-math.log(base) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    ang = pos.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def position_table(frame_idx: torch.Tensor, rows: int, cols: int, dim: int) -> torch.Tensor:
    """Fixed (frame, row, col) encoding summed over disjoint channel slices; (F, s, dim)."""
    n = 2 * (dim // 6)
    out = torch.zeros(len(frame_idx), rows * cols, dim, dtype=torch.float64)
    if n == 0:
        return out
    r, c = torch.meshgrid(torch.arange(rows), torch.arange(cols), indexing="ij")
    out[:, :, :n] += sinusoid(frame_idx, n)[:, None, :]
    out[:, :, n:2 * n] += sinusoid(r.reshape(-1), n)[None]
    out[:, :, 2 * n:3 * n] += sinusoid(c.reshape(-1), n)[None]
    return out


class ScaledRMSNorm(nn.Module):
    """RMSNorm whose output is multiplied by ``1 + scale`` from the timestep."""

    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x, scale):
        x = x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight
        return x * (1.0 + scale)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, zero_out: bool = False):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, dim)
        if zero_out:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, x, ctx=None):
        ctx = x if ctx is None else ctx
        b, n, d = x.shape
        h = self.heads
        q = self.q(x).reshape(b, n, h, d // h).transpose(1, 2)
        k, v = self.kv(ctx).reshape(b, ctx.shape[1], 2, h, d // h).permute(2, 0, 3, 1, 4)
        o = F.scaled_dot_product_attention(q, k, v)
        return self.out(o.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    N_MOD = 4  # spatial, 3d, cross, ffn

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.dim
        self.norm_s = ScaledRMSNorm(d)
        self.attn_s = Attention(d, cfg.heads)
        self.cam_enc = nn.Linear(12, d)
        nn.init.zeros_(self.cam_enc.weight)
        nn.init.zeros_(self.cam_enc.bias)
        self.norm_3d = ScaledRMSNorm(d)
        self.attn3d = Attention(d, cfg.heads)
        self.view = cfg.mode == "view_dim"
        if self.view:
            self.norm_view = ScaledRMSNorm(d)
            self.attn_view = Attention(d, cfg.heads, zero_out=True)
            self.mod_view = nn.Linear(d, d)
            nn.init.zeros_(self.mod_view.weight)
            nn.init.zeros_(self.mod_view.bias)
        self.norm_c = ScaledRMSNorm(d)
        self.attn_c = Attention(d, cfg.heads)
        self.norm_f = ScaledRMSNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, cfg.mlp_ratio * d), nn.GELU(), nn.Linear(cfg.mlp_ratio * d, d))
        self.mod = nn.Linear(d, self.N_MOD * d)
        nn.init.zeros_(self.mod.weight)
        nn.init.zeros_(self.mod.bias)

    def camera_embedding(self, cams):
        """(b, f, 12) flattened poses -> (b, f, d)."""
        return self.cam_enc(cams)

    def forward(self, x, temb, cam_emb, ctx, n_views: int = 1):
        """x: (B, F, s, d); temb: (B, d); cam_emb: (B, F, d) or None; ctx: (B, L, d)."""
        B, Fr, s, d = x.shape
        act = F.silu(temb)
        sc = self.mod(act).reshape(B, self.N_MOD, 1, 1, d).unbind(1)

        h = self.norm_s(x, sc[0]).reshape(B * Fr, s, d)
        x = x + self.attn_s(h).reshape(B, Fr, s, d)

        if cam_emb is not None:
            x = x + cam_emb[:, :, None, :]

        h = self.norm_3d(x, sc[1]).reshape(B, Fr * s, d)
        x = x + self.attn3d(h).reshape(B, Fr, s, d)

        if self.view and n_views == 2:
            b = B // 2
            x = torch.cat(attn_view(self, x[:b], x[b:], temb[:b]), dim=0)

        h = self.norm_c(x, sc[2]).reshape(B, Fr * s, d)
        x = x + self.attn_c(h, ctx).reshape(B, Fr, s, d)

        h = self.norm_f(x, sc[3])
        return x + self.ffn(h)


class VideoDiT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d, p, c = cfg.dim, cfg.patch, cfg.channels
        self.patch_embed = nn.Linear(c * p * p, d)
        if cfg.mode == "channel_dim":
            # source half of the widened input projector; zero so training starts from the base model
            self.patch_embed_source = nn.Linear(c * p * p, d, bias=False)
            nn.init.zeros_(self.patch_embed_source.weight)
        self.t_embed = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.desc_embed = nn.Embedding(cfg.vocab_size, d)
        self.desc_pos = nn.Parameter(torch.randn(cfg.descriptor_len, d) * 0.02)
        self.role_embed = nn.Parameter(torch.randn(2, d) * 0.5)
        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.depth)])
        self.norm_out = ScaledRMSNorm(d)
        self.mod_out = nn.Linear(d, d)
        nn.init.zeros_(self.mod_out.weight)
        nn.init.zeros_(self.mod_out.bias)
        self.proj_out = nn.Linear(d, c * p * p)
        nn.init.zeros_(self.proj_out.weight)
        nn.init.zeros_(self.proj_out.bias)
        rows, cols = cfg.height // p, cfg.width // p
        f = cfg.frames
        tgt_idx = torch.arange(f) + (f if cfg.temporal_index == "offset" else 0)
        self.register_buffer("pos_src", position_table(torch.arange(f), rows, cols, d).float(), persistent=False)
        self.register_buffer("pos_tgt", position_table(tgt_idx, rows, cols, d).float(), persistent=False)
        for name, _ in self.named_parameters():
            group_of(name)

    # -- groups / freezing -------------------------------------------------

    def parameter_groups(self) -> dict:
        return {name: group_of(name) for name, _ in self.named_parameters()}

    # -- tokens --------------------------------------------------------------

    def patchify_raw(self, z):
        """(b, f, c, h, w) -> (b, f, s, c*p*p) without projection."""
        cfg = self.cfg
        b, f, c, h, w = z.shape
        p = cfg.patch
        if h % p or w % p:
            raise ShapeError(f"latent {h}x{w} not divisible by patch {p}")
        z = z.reshape(b, f, c, h // p, p, w // p, p).permute(0, 1, 3, 5, 2, 4, 6)
        return z.reshape(b, f, (h // p) * (w // p), c * p * p)

    def unpatchify_raw(self, x):
        cfg = self.cfg
        b, f = x.shape[:2]
        p, c = cfg.patch, cfg.channels
        hp, wp = cfg.height // p, cfg.width // p
        x = x.reshape(b, f, hp, wp, c, p, p).permute(0, 1, 4, 2, 5, 3, 6)
        return x.reshape(b, f, c, hp * p, wp * p)

    def patchify(self, z):
        return self.patch_embed(self.patchify_raw(z))

    def _check(self, z, name):
        cfg = self.cfg
        want = (cfg.frames, cfg.channels, cfg.height, cfg.width)
        if z.ndim != 5 or tuple(z.shape[1:]) != want:
            raise ShapeError(f"{name}: expected (b, {', '.join(map(str, want))}), got {tuple(z.shape)}")
        if not torch.isfinite(z).all():
            raise NumericError(f"non-finite values in {name}")

    def time_embedding(self, t, b, dtype):
        t = torch.as_tensor(t, dtype=torch.float64)
        if t.ndim == 0:
            t = t.expand(b)
        if not torch.isfinite(t).all():
            raise NumericError("non-finite timestep")
        return self.t_embed(sinusoid(t * 1000.0, self.cfg.dim).to(dtype))

    def context(self, descriptor):
        return self.desc_embed(descriptor) + self.desc_pos

    def camera_embeddings(self, cams, b, dtype):
        if cams is None:
            return [None] * len(self.blocks)
        if cams.ndim != 3 or cams.shape[1:] != (self.cfg.frames, 12):
            raise ShapeError(f"cams must be (b, {self.cfg.frames}, 12), got {tuple(cams.shape)}")
        if not torch.isfinite(cams).all():
            raise NumericError("non-finite camera poses")
        cams = cams.to(dtype)
        return [blk.camera_embedding(cams) for blk in self.blocks]

    def run_blocks(self, x, temb, cam_embs, ctx, n_views=1):
        for blk, ce in zip(self.blocks, cam_embs):
            x = blk(x, temb, ce, ctx, n_views)
        return x

    def head(self, x, temb):
        sc = self.mod_out(F.silu(temb))[:, None, None, :]
        return self.unpatchify_raw(self.proj_out(self.norm_out(x, sc)))

    # -- forward -------------------------------------------------------------

    def forward(self, noised_target, source, cams, descriptor, t):
        """Predict the target velocity, shape (b, f, c, h, w).

        ``source`` may be None for the plain descriptor-to-video base model.
        ``cams`` is the (b, f, 12) target trajectory or None (treated as zero).
        """
        cfg = self.cfg
        self._check(noised_target, "noised_target")
        b, f = noised_target.shape[:2]
        dtype = noised_target.dtype
        if source is not None:
            self._check(source, "source")
            if source.shape != noised_target.shape:
                raise ShapeError("source and target latents differ in shape")
        temb = self.time_embedding(t, b, dtype)
        ctx = self.context(descriptor)
        cam_embs = self.camera_embeddings(cams, b, dtype)
        role = self.role_embed.to(dtype)
        pos_t = self.pos_tgt.to(dtype)
        pos_s = self.pos_src.to(dtype)

        if source is None:
            x = self.patchify(noised_target) + pos_t + role[1]
            x = self.run_blocks(x, temb, cam_embs, ctx)
            return self.head(x, temb)

        if cfg.mode == "frame_dim":
            xs = self.patchify(source) + pos_s + role[0]
            xt = self.patchify(noised_target) + pos_t + role[1]
            x = condition_frame_dim(xs, xt)
            # source-half frames get no camera signal
            cam_embs = [None if ce is None else torch.cat([torch.zeros_like(ce), ce], dim=1) for ce in cam_embs]
            x = self.run_blocks(x, temb, cam_embs, ctx)
            return self.head(x[:, f:], temb)

        if cfg.mode == "channel_dim":
            x = self.condition_channel_dim(source, noised_target) + pos_t + role[1]
            x = self.run_blocks(x, temb, cam_embs, ctx)
            return self.head(x, temb)

        xs = self.patchify(source) + pos_s + role[0]
        xt = self.patchify(noised_target) + pos_t + role[1]
        x = torch.cat([xs, xt], dim=0)
        cam_embs = [None if ce is None else torch.cat([torch.zeros_like(ce), ce], dim=0) for ce in cam_embs]
        x = self.run_blocks(x, temb.repeat(2, 1), cam_embs, ctx.repeat(2, 1, 1), n_views=2)
        return self.head(x[b:], temb)

    def condition_channel_dim(self, z_s, z_t):
        """Patch-embed the channel concatenation [z_s, z_t] with the widened projector."""
        if self.cfg.mode != "channel_dim":
            raise ConfigError("channel conditioning requires mode='channel_dim'")
        if z_s.shape != z_t.shape:
            raise ShapeError(f"shape mismatch {tuple(z_s.shape)} vs {tuple(z_t.shape)}")
        # a linear map of the 2c-channel patch splits into a source part and a target part
        return self.patch_embed(self.patchify_raw(z_t)) + self.patch_embed_source(self.patchify_raw(z_s))


def condition_frame_dim(x_s: torch.Tensor, x_t: torch.Tensor) -> torch.Tensor:
    """Concatenate (b, f, s, d) source and target tokens into (b, 2f, s, d), source first."""
    if x_s.shape != x_t.shape:
        raise ShapeError(f"shape mismatch {tuple(x_s.shape)} vs {tuple(x_t.shape)}")
    return torch.cat([x_s, x_t], dim=1)


def inject_camera(F_o: torch.Tensor, emb: torch.Tensor, mode: str = "frame_dim") -> torch.Tensor:
    """Add a per-frame camera embedding to every spatial token.

    ``F_o`` is (b, F, s, d) and ``emb`` is (b, f, d). In ``frame_dim`` mode with
    ``F == 2f`` only the target half is shifted.
    """
    f = emb.shape[1]
    Fr = F_o.shape[1]
    if mode == "frame_dim" and Fr == 2 * f:
        emb = torch.cat([torch.zeros_like(emb), emb], dim=1)
    elif Fr != f:
        raise ShapeError(f"camera embedding has {f} frames, tokens have {Fr}")
    return F_o + emb[:, :, None, :]


def attn_view(block: Block, F_s: torch.Tensor, F_t: torch.Tensor, temb: torch.Tensor):
    """Per-frame joint attention across the two views (residual), returns updated (F_s, F_t)."""
    if not block.view:
        raise ConfigError("block was not built for view_dim conditioning")
    if F_s.shape != F_t.shape:
        raise ShapeError("view streams differ in shape")
    b, Fr, s, d = F_s.shape
    scv = block.mod_view(F.silu(temb)).reshape(b, 1, 1, d)
    joint = torch.cat([block.norm_view(F_s, scv), block.norm_view(F_t, scv)], dim=2).reshape(b * Fr, 2 * s, d)
    upd = block.attn_view(joint).reshape(b, Fr, 2 * s, d)
    return F_s + upd[:, :, :s], F_t + upd[:, :, s:]


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path, model: VideoDiT, extra_tensors: dict | None = None, meta: dict | None = None):
    """Write parameters plus a header with the model config and group tags."""
    from safetensors.torch import save_file

    tensors = {k: v.detach().contiguous() for k, v in model.state_dict().items()}
    for k, v in (extra_tensors or {}).items():
        tensors[k] = v.detach().contiguous()
    header = {
        "model_config": json.dumps(asdict(model.cfg)),
        "groups": json.dumps(model.parameter_groups()),
        "meta": json.dumps(meta or {}),
    }
    save_file(tensors, str(path), metadata=header)


def read_checkpoint(path):
    """Return (config, state tensors, meta dict); tensors include any extras."""
    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as fh:
        header = fh.metadata()
        tensors = {k: fh.get_tensor(k) for k in fh.keys()}
    cfg = ModelConfig(**json.loads(header["model_config"]))
    return cfg, tensors, json.loads(header.get("meta", "{}"))


def load_checkpoint(path, mode: str | None = None, **overrides) -> tuple:
    """Build a model from a checkpoint, optionally switching conditioning mode.

    Parameters that only exist in the new mode keep their initialisation.
    Returns ``(model, meta)``.
    """
    cfg, tensors, meta = read_checkpoint(path)
    changes = dict(overrides)
    if mode is not None:
        changes["mode"] = mode
    if changes:
        cfg = ModelConfig(**{**asdict(cfg), **changes})
    model = VideoDiT(cfg)
    own = model.state_dict()
    state = {k: v for k, v in tensors.items() if k in own}
    missing = set(own) - set(state)
    bad = [k for k in missing if group_of(k) not in ("attn_view", "cond_input")]
    if bad:
        raise ConfigError(f"checkpoint lacks parameters {sorted(bad)[:5]}")
    model.load_state_dict(state, strict=False)
    return model, meta
