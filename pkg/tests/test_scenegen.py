import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recamera.camera import CameraPose, Intrinsics, look_at, project
from recamera.errors import BoundsError, ConfigError, ShapeError
from recamera.scenegen import (DESCRIPTOR_LEN, GROUND_COLORS, PALETTE, SKY_COLOR, VOCAB_SIZE, PrimitiveSpec,
                               SceneConfig, SceneSpec, animate, render_frame, render_layers, render_scene,
                               sample_scene)
from recamera.trajgen import Trajectory, gen_trajectory

K48 = Intrinsics(50.0, 24.0, 24.0)


def _ball(pos, r=0.5, color=0, frames=2):
    return PrimitiveSpec("sphere", r, PALETTE[color], (tuple(pos),), (0,), color)


def _static_traj(pose, f, intr=K48):
    return Trajectory([pose] * f, intr, kind="static")


def test_sample_scene_deterministic():
    assert sample_scene(0) == sample_scene(0)


def test_sample_scene_seed_sensitive():
    assert sample_scene(0) != sample_scene(1)


def test_sample_scene_ranges_over_many_seeds():
    cfg = SceneConfig()
    for seed in range(1000):
        s = sample_scene(seed, cfg)
        assert 1 <= len(s.primitives) <= 4
        for p in s.primitives:
            assert all(0 <= c <= 1 for c in p.color)
            wp = np.asarray(p.waypoints)
            assert np.all(np.abs(wp) <= 2.0)  # centres inside the 4 m cube
            assert p.waypoint_frames[0] == 0
            assert len(p.waypoints) == 1 or p.waypoint_frames[-1] == s.frames - 1


@pytest.mark.parametrize("field,value", [("half_size", (0.7, 0.3)), ("n_primitives", (3, 1)),
                                         ("speed", (0.2, 0.1)), ("n_primitives", (0, 2))])
def test_sample_scene_rejects_bad_ranges(field, value):
    with pytest.raises(ConfigError):
        sample_scene(0, SceneConfig(**{field: value}))


def test_descriptor_deterministic_and_in_vocab():
    for seed in range(50):
        s = sample_scene(seed)
        d = s.descriptor
        assert d.shape == (DESCRIPTOR_LEN,)
        assert np.array_equal(d, SceneSpec.from_dict(s.to_dict()).descriptor)
        assert d.min() >= 0 and d.max() < VOCAB_SIZE
        assert np.count_nonzero(d) == 3 * len(s.primitives)


def test_subject_position_is_mean_of_start_positions():
    s = sample_scene(3)
    np.testing.assert_allclose(s.subject_position, animate(s, 0).mean(axis=0))


def test_scene_dict_round_trip():
    s = sample_scene(11)
    assert SceneSpec.from_dict(s.to_dict()) == s


def test_animate_midpoint():
    p = PrimitiveSpec("box", 0.5, PALETTE[0], ((0, 0, 0), (2, 0, 0)), (0, 10), 0)
    s = SceneSpec(0, 11, (p,))
    np.testing.assert_allclose(animate(s, 5)[0], [1, 0, 0])
    np.testing.assert_allclose(animate(s, 0)[0], [0, 0, 0])
    np.testing.assert_allclose(animate(s, 10)[0], [2, 0, 0])


@pytest.mark.parametrize("frame", [-1, 16, 100])
def test_animate_bounds(frame):
    with pytest.raises(BoundsError):
        animate(sample_scene(0), frame)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_animate_speed_bound(seed):
    cfg = SceneConfig()
    s = sample_scene(seed, cfg)
    pos = np.stack([animate(s, i) for i in range(s.frames)])
    step = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
    assert np.all(step <= cfg.speed[1] + 1e-9)


def test_primitive_invariants():
    with pytest.raises(ConfigError):
        PrimitiveSpec("sphere", 0.0, PALETTE[0], ((0, 0, 0),), (0,))
    with pytest.raises(ConfigError):
        PrimitiveSpec("cone", 0.5, PALETTE[0], ((0, 0, 0),), (0,))
    with pytest.raises(ConfigError):
        PrimitiveSpec("box", 0.5, PALETTE[0], ((0, 0, 0), (1, 0, 0)), (0, 0))
    with pytest.raises(ConfigError):
        PrimitiveSpec("box", 0.5, (1.2, 0, 0), ((0, 0, 0),), (0,))


def test_render_centre_pixel_has_sphere_colour():
    s = SceneSpec(0, 2, (_ball((0, 0, 0.5)),))
    pose = look_at([5, 0, 0.5 + 1e-3], [0, 0, 0.5])
    img = render_frame(s, pose, K48, 0)
    np.testing.assert_allclose(img[:, 24, 24], PALETTE[0], atol=1e-6)


def test_render_zbuffer_nearer_wins():
    near = _ball((2, 0, 0.5), 0.4, color=1)
    far = _ball((-1, 0, 0.5), 0.8, color=2)
    s = SceneSpec(0, 2, (far, near))  # draw order must not matter
    pose = look_at([5, 0, 0.5 + 1e-3], [0, 0, 0.5])
    img = render_frame(s, pose, K48, 0)
    np.testing.assert_allclose(img[:, 24, 24], PALETTE[1], atol=1e-6)
    s2 = SceneSpec(0, 2, (near, far))
    assert np.array_equal(render_frame(s2, pose, K48, 0), img)


def test_render_background_colours_and_range():
    s = sample_scene(5)
    pose = look_at([6, -4, 3], s.subject_position)
    img = render_frame(s, pose, K48, 0)
    assert img.dtype == np.float32 and img.min() >= 0 and img.max() <= 1
    cols = {tuple(np.round(c, 6)) for c in img.reshape(3, -1).T}
    allowed = {tuple(np.round(np.float32(c), 6)) for c in (*PALETTE, *GROUND_COLORS, SKY_COLOR)}
    assert cols <= allowed
    assert tuple(np.round(np.float32(SKY_COLOR), 6)) in cols


def test_render_deterministic():
    s = sample_scene(9)
    pose = look_at([4, 4, 2], s.subject_position)
    assert np.array_equal(render_frame(s, pose, K48, 3), render_frame(s, pose, K48, 3))


def test_render_layers_ids_consistent_with_colours():
    s = sample_scene(2)
    pose = look_at([5, -3, 2.5], s.subject_position)
    img, ids, solos = render_layers(s, pose, K48, 0)
    for k, p in enumerate(s.primitives):
        m = ids == k
        if m.any():
            np.testing.assert_allclose(img[:, m].T, np.tile(p.color, (m.sum(), 1)), atol=1e-6)
        assert np.all(solos[k] | ~m)


def test_render_scene_static_scene_two_cameras_constant():
    s = SceneSpec(0, 4, (_ball((0, 0, 0.5)),))
    trajs = [_static_traj(look_at([5, 0, 2], [0, 0, 0.5]), 4), _static_traj(look_at([0, 5, 3], [0, 0, 0.5]), 4)]
    r = render_scene(s, trajs)
    assert r.videos.shape == (2, 4, 3, 48, 48)
    for k in range(2):
        assert all(np.array_equal(r.videos[k, 0], r.videos[k, i]) for i in range(4))


def test_render_scene_ten_cameras_and_length_mismatch():
    s = sample_scene(1, SceneConfig(frames=4))
    start = look_at([6, 0, 3], s.subject_position)
    trajs = [gen_trajectory("static", start, s.subject_position, k, 4) for k in range(10)]
    r = render_scene(s, trajs, 16, 16)
    assert r.videos.shape[0] == 10 and r.n_cameras == 10
    with pytest.raises(ShapeError):
        render_scene(s, trajs[:2] + [gen_trajectory("static", start, s.subject_position, 0, 3)], 16, 16)


def test_render_scene_centroids_match_projection_for_moving_primitive():
    p = PrimitiveSpec("sphere", 0.4, PALETTE[3], ((-1, 0, 0.4), (1, 0.5, 0.4)), (0, 7), 3)
    s = SceneSpec(0, 8, (p,))
    traj = _static_traj(look_at([0, -6, 2], [0, 0, 0.4]), 8)
    r = render_scene(s, [traj])
    for i in range(8):
        uv, _ = project(animate(s, i)[0], traj.poses[i], traj.intrinsics)
        np.testing.assert_allclose(r.centroids[0, i, 0], uv, atol=1e-9)
        assert r.visible[0, i, 0]
        ys, xs = np.nonzero(r.videos[0, i, 0] == np.float32(PALETTE[3][0]))
        # rasterised silhouette centroid within 1 px of the analytic projection
        assert np.hypot(xs.mean() + 0.5 - uv[0], ys.mean() + 0.5 - uv[1]) <= 1.0


def test_visibility_flags_occlusion_and_border():
    front = _ball((2, 0, 1.0), 0.6, color=1)
    back = _ball((-1, 0, 1.0), 0.3, color=2)
    edge = _ball((0, 2.2, 1.0), 0.5, color=4)  # straddles the image border
    s = SceneSpec(0, 2, (front, back, edge))
    traj = _static_traj(look_at([5, 0, 1.0 + 1e-3], [0, 0, 1.0]), 2)
    r = render_scene(s, [traj])
    assert r.visible[0, 0, 0]
    assert not r.visible[0, 0, 1]  # hidden behind the front sphere
    assert not r.visible[0, 0, 2]


def test_synchronised_world_state_across_cameras():
    s = sample_scene(4, SceneConfig(frames=6))
    subj = s.subject_position
    trajs = [_static_traj(look_at(e, subj), 6) for e in ([6, 0, 3], [0, 6, 2], [-5, -3, 4])]
    r = render_scene(s, trajs, 24, 24)
    # every camera's metadata is the projection of the same animated state
    for i in range(6):
        pos = animate(s, i)
        for k, tr in enumerate(trajs):
            pc = tr.poses[i].world_to_camera(pos)
            uv = tr.intrinsics.cx + tr.intrinsics.fpx * pc[:, :2] / pc[:, 2:]
            uv[:, 1] = tr.intrinsics.cy + tr.intrinsics.fpx * pc[:, 1] / pc[:, 2]
            np.testing.assert_allclose(r.centroids[k, i], uv, atol=1e-9)


def test_identity_pose_camera_looks_along_z():
    # a camera at the origin looking along +z sees a sphere placed on that axis
    s = SceneSpec(0, 2, (_ball((0, 0, 5), 0.5, color=5),))
    img = render_frame(s, CameraPose.identity(), K48, 0)
    np.testing.assert_allclose(img[:, 24, 24], PALETTE[5], atol=1e-6)
