import hashlib
import json
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from recamera.camera import CameraPose, axis_angle
from recamera.errors import ConfigError
from recamera.flow import cfm_loss
from recamera.model import encode_latent, group_of, load_checkpoint
from recamera.trajgen import Trajectory, unflatten_poses
from recamera.train import (TrainConfig, apply_mode, batch_loss, batch_mode_draw, build_model, freeze_policy,
                            lr_at, make_batch, make_optimizer, noise_condition_latent, relative_cams,
                            select_mode, train, train_step)


def _sha(t):
    return hashlib.sha256(t.detach().contiguous().numpy().tobytes()).hexdigest()


# -- config ------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(p_t2v=0.7, p_i2v=0.4), dict(p_t2v=-0.1), dict(cond_noise_steps=(500, 200)),
                                dict(cond_noise_steps=(0, 1001)), dict(stage="pretrain"),
                                dict(lr_schedule="step"), dict(batch_size=0)])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_trained_modes():
    assert TrainConfig().trained_modes() == ["t2v", "i2v", "v2v"]
    assert TrainConfig(p_t2v=0, p_i2v=0).trained_modes() == ["v2v"]
    assert TrainConfig(stage="pretrain_base").trained_modes() == ["base"]


def test_cosine_schedule():
    cfg = TrainConfig(lr=1e-3, steps=100, lr_schedule="cosine")
    assert lr_at(cfg, 0) == pytest.approx(1e-3)
    assert lr_at(cfg, 50) == pytest.approx(5e-4)
    assert lr_at(cfg, 100) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(replace(cfg, lr_schedule="constant"), 70) == 1e-3


# -- mode dropping ------------------------------------------------------------------


def test_mode_mix_over_10k_draws():
    modes = [select_mode(batch_mode_draw(0, s)) for s in range(10_000)]
    freq = {m: modes.count(m) / len(modes) for m in ("t2v", "i2v", "v2v")}
    assert abs(freq["t2v"] - 0.2) <= 0.03
    assert abs(freq["i2v"] - 0.2) <= 0.03
    assert abs(freq["v2v"] - 0.6) <= 0.03


@pytest.mark.parametrize("u,mode", [(0.0, "t2v"), (0.1, "t2v"), (0.2, "i2v"), (0.3, "i2v"), (0.4, "v2v"), (0.9, "v2v")])
def test_select_mode_boundaries(u, mode):
    assert select_mode(u) == mode


def test_noise_condition_latent_zero_range_is_identity():
    z = np.random.default_rng(0).standard_normal((4, 3, 8, 8)).astype(np.float32)
    out, t_c = noise_condition_latent(z, np.random.default_rng(1), (0, 0))
    assert t_c == 0.0 and np.array_equal(out, z)


def test_noise_condition_latent_range_and_variance():
    rng = np.random.default_rng(0)
    z = np.zeros((8, 3, 16, 16), np.float32)
    for _ in range(200):
        out, t_c = noise_condition_latent(z, rng)
        assert 0.2 <= t_c <= 0.5
        # var of t_c * eps over 6144 samples: relative standard error ~ 1.8%
        assert out.var() == pytest.approx(t_c**2, rel=0.1)


def _batch(tiny_ds, ft_config, step=0):
    return make_batch(tiny_ds, ft_config, step)


def _replay_noise(src, seed_rng, cfg):
    return np.stack([noise_condition_latent(s, seed_rng, cfg.cond_noise_steps)[0] for s in src])


def test_apply_mode_t2v_independent_of_source(tiny_ds, ft_config):
    b = _batch(tiny_ds, ft_config)
    a = apply_mode(b, 0.1, np.random.default_rng(5), ft_config)
    other = replace(b, source=torch.rand_like(b.source))
    c = apply_mode(other, 0.1, np.random.default_rng(5), ft_config)
    assert a.mode == "t2v" and torch.equal(a.cond, c.cond)


def test_apply_mode_i2v_keeps_noised_first_frame(tiny_ds, ft_config):
    b = _batch(tiny_ds, ft_config)
    a = apply_mode(b, 0.3, np.random.default_rng(5), ft_config)
    expect = _replay_noise(b.source.numpy(), np.random.default_rng(5), ft_config)
    assert a.mode == "i2v"
    assert np.array_equal(a.cond[:, 0].numpy(), expect[:, 0])
    c = apply_mode(replace(b, source=torch.rand_like(b.source)), 0.3, np.random.default_rng(5), ft_config)
    assert torch.equal(a.cond[:, 1:], c.cond[:, 1:])  # later frames carry no source information


def test_apply_mode_v2v_is_condition_noised_source(tiny_ds, ft_config):
    b = _batch(tiny_ds, ft_config)
    a = apply_mode(b, 0.9, np.random.default_rng(5), ft_config)
    expect = _replay_noise(b.source.numpy(), np.random.default_rng(5), ft_config)
    assert a.mode == "v2v" and np.array_equal(a.cond.numpy(), expect)
    assert not torch.equal(a.cond, b.source)


# -- batches ------------------------------------------------------------------------


def test_batches_deterministic_and_pair_invariants(tiny_ds, ft_config):
    for step in range(6):
        a, b = make_batch(tiny_ds, ft_config, step), make_batch(tiny_ds, ft_config, step)
        assert torch.equal(a.cond, b.cond) and torch.equal(a.target, b.target) and a.mode == b.mode
        for k, (sid, (i, j)) in enumerate(zip(a.scene_ids, a.cam_pairs)):
            assert i != j and tiny_ds.split_of(sid) == "train"
            rec = tiny_ds.load(sid)
            assert torch.equal(a.target[k], encode_latent(torch.from_numpy(rec.videos[j])))
            np.testing.assert_array_equal(a.cams[k].numpy(), relative_cams(rec.trajectories[i], rec.trajectories[j]))


def test_target_cams_relative_to_source_first_frame(tiny_ds, ft_config):
    b = make_batch(tiny_ds, replace(ft_config, batch_size=8), 0)
    for k, (sid, (i, j)) in enumerate(zip(b.scene_ids, b.cam_pairs)):
        rec = tiny_ds.load(sid)
        poses = unflatten_poses(b.cams[k].numpy().astype(np.float64))
        ref = rec.trajectories[i].poses[0]
        for p, raw in zip(poses, rec.trajectories[j].poses):
            world = ref @ p
            np.testing.assert_allclose(world.rotation, raw.rotation, atol=1e-5)
            np.testing.assert_allclose(world.translation, raw.translation, atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(ax=st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1),
       ang=st.floats(-3.0, 3.0), shift=st.tuples(*[st.floats(-5, 5)] * 3))
def test_relative_cams_gauge_invariant(tiny_ds, ax, ang, shift):
    rec = tiny_ds.load(tiny_ds.ids("train")[0])
    src, tgt = rec.trajectories[0], rec.trajectories[1]
    g = CameraPose(axis_angle(np.asarray(ax), ang), np.asarray(shift))

    def moved(tr):
        return Trajectory([g @ p for p in tr.poses], tr.intrinsics, kind=tr.kind)

    np.testing.assert_allclose(relative_cams(moved(src), moved(tgt)), relative_cams(src, tgt), atol=1e-5)


def test_train_subset_restricts_scenes(tiny_ds, ft_config):
    cfg = replace(ft_config, train_subset=2, batch_size=8)
    allowed = set(tiny_ds.ids("train")[:2])
    for step in range(5):
        assert set(make_batch(tiny_ds, cfg, step).scene_ids) <= allowed


# -- freezing -------------------------------------------------------------------------


def test_freeze_policy_groups(tiny_ds, ft_config):
    for mode, extra in (("frame_dim", set()), ("view_dim", {"attn_view"}), ("channel_dim", {"cond_input"})):
        model = build_model(tiny_ds, replace(ft_config, mode=mode))
        mask = freeze_policy(model, "recam_finetune")
        trainable = {group_of(n) for n, on in mask.items() if on}
        assert trainable == {"camera_encoder", "attn_3d"} | extra
        assert all(freeze_policy(model, "recam_finetune", freeze=False).values())
        pre = {group_of(n) for n, on in freeze_policy(model, "pretrain_base").items() if on}
        assert "camera_encoder" not in pre


def test_frozen_gradients_never_computed(tiny_ds, ft_config):
    model = build_model(tiny_ds, ft_config)
    mask = freeze_policy(model, ft_config.stage)
    opt = make_optimizer(model, mask, 1e-3)
    train_step(model, opt, make_batch(tiny_ds, ft_config, 0))
    for name, p in model.named_parameters():
        assert (p.grad is None) == (not mask[name]), name


def test_freeze_contract_100_steps(tiny_ds, ft_config, tmp_path):
    cfg = replace(ft_config, steps=100, checkpoint_every=1000)
    before, _ = load_checkpoint(cfg.base_checkpoint, mode=cfg.mode)
    after, _ = load_checkpoint(train(cfg, tmp_path, tiny_ds)["checkpoint"])
    mask = freeze_policy(after, cfg.stage)
    b, a = dict(before.named_parameters()), dict(after.named_parameters())
    changed = 0
    for name in a:
        if mask[name]:
            changed += _sha(a[name]) != _sha(b[name])
        else:
            assert _sha(a[name]) == _sha(b[name]), name
    assert changed > 0


# -- training loop ------------------------------------------------------------------------


def test_missing_base_checkpoint_is_actionable(tiny_ds, ft_config, tmp_path):
    with pytest.raises(FileNotFoundError, match="pretrain_base"):
        train(replace(ft_config, base_checkpoint=str(tmp_path / "nope.safetensors")), tmp_path, tiny_ds)


def test_metrics_stream(tiny_ds, ft_config, tmp_path):
    train(ft_config, tmp_path, tiny_ds)
    rows = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    assert [r["step"] for r in rows] == list(range(10))
    for r in rows:
        assert set(r) == {"step", "stage", "mode", "loss", "grad_norm"}
        assert r["mode"] == select_mode(batch_mode_draw(ft_config.seed, r["step"]))


def test_resume_is_bit_identical(tiny_ds, ft_config, tmp_path):
    cfg = replace(ft_config, steps=6, checkpoint_every=3, lr_schedule="cosine")
    train(cfg, tmp_path / "full", tiny_ds)
    train(cfg, tmp_path / "split", tiny_ds, stop_at=3)
    train(cfg, tmp_path / "split", tiny_ds)
    read = lambda d: [json.loads(x) for x in (d / "metrics.jsonl").read_text().splitlines()]  # noqa: E731
    full, split = read(tmp_path / "full"), read(tmp_path / "split")
    assert [r["loss"] for r in full] == [r["loss"] for r in split]
    a, _ = load_checkpoint(tmp_path / "full" / "ckpt_000006.safetensors")
    b, _ = load_checkpoint(tmp_path / "split" / "ckpt_000006.safetensors")
    for (n, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), n


def test_step0_loss_equals_zero_predictor(tiny_ds, tmp_path):
    from conftest import TINY_MODEL

    cfg = TrainConfig(stage="pretrain_base", steps=0, batch_size=4, model=TINY_MODEL, dataset=str(tiny_ds.root))
    model = build_model(tiny_ds, cfg)
    losses, baseline = [], []
    for step in range(8):
        b = make_batch(tiny_ds, cfg, step)
        with torch.no_grad():
            losses.append(float(batch_loss(model, b)))
        baseline.append(float(cfm_loss(torch.zeros_like(b.target), b.target, b.eps)))
    # zero-initialised output projection: the untrained model is the zero predictor
    assert np.mean(losses) == pytest.approx(np.mean(baseline), rel=0.3)


def test_single_batch_overfit(tiny_ds, ft_config):
    cfg = replace(ft_config, freeze=False)
    model = build_model(tiny_ds, cfg)
    opt = make_optimizer(model, freeze_policy(model, cfg.stage, False), 3e-3)
    batch = make_batch(tiny_ds, cfg, 0)
    losses = [train_step(model, opt, batch, grad_clip=0)["loss"] for _ in range(200)]
    assert losses[-1] <= losses[0] / 10
