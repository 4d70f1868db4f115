#!/usr/bin/env python
# coding: utf-8

# # Scoring generated videos without a learned judge
#
# The renderer knows where every primitive is, so camera accuracy and
# cross-view synchronization can be measured directly from coloured blobs.

# In[ ]:
import numpy as np

from recamera.evaluate import eval_targets, psnr, reprojection_errors, sync_errors
from recamera.scenegen import SceneConfig, render_scene, sample_scene
from recamera.trajgen import sample_trajectory

scene = sample_scene(11, SceneConfig(frames=8))
src_traj = sample_trajectory(1, scene.subject_position, scene.frames, kind="static")
src = render_scene(scene, [src_traj])

class Rec:  # the fields eval_targets needs from a dataset record
    trajectories = [src_traj]
    videos = src.videos
    visible = src.visible

Rec.scene = scene
targets = eval_targets(Rec, ("arc", "zoom_in"), seed=0)
gt = render_scene(scene, targets)


# ### 1. a perfect generation

# In[ ]:
def score(video, k):
    rep = reprojection_errors(video, scene, targets[k], gt.visible[k])
    syn = sync_errors(src.videos[0], src_traj, src.visible[0], video, targets[k], gt.visible[k], scene)
    fin = lambda e: e[np.isfinite(e)]  # noqa: E731
    return psnr(video, gt.videos[k]), fin(rep).mean(), fin(syn).mean(), int(np.isinf(rep).sum())


print("truth:       psnr %.1f  reproj %.2f px  sync %.2f px  undetected %d" % score(gt.videos[0], 0))


# ### 2. ignoring the camera (copy the source)

# In[ ]:
print("copy source: psnr %.1f  reproj %.2f px  sync %.2f px  undetected %d" % score(src.videos[0], 0))


# ### 3. right camera, wrong time

# In[ ]:
print("reversed:    psnr %.1f  reproj %.2f px  sync %.2f px  undetected %d" % score(gt.videos[0][::-1], 0))


# ### 4. noise degrades everything monotonically

# In[ ]:
rng = np.random.default_rng(0)
eps = rng.standard_normal(gt.videos[1].shape)
for sigma in (0.0, 0.05, 0.2, 0.8):
    print("sigma %.2f:  psnr %.1f  reproj %.2f px  sync %.2f px  undetected %d" % ((sigma,) + score(gt.videos[1] + sigma * eps, 1)))
