#!/usr/bin/env python
# coding: utf-8

# # Scenes, cameras and synchronized renders
#
# A scene is a handful of coloured spheres and boxes moving over a checkered
# floor. Every camera sees the same animated state at every frame.

# In[ ]:
import numpy as np

from recamera.camera import look_at, project
from recamera.scenegen import SceneConfig, animate, render_scene, sample_scene
from recamera.trajgen import KINDS, constraint_violations, gen_trajectory, sample_start_pose


# ### 1. sample a scene

# In[ ]:
scene = sample_scene(7, SceneConfig(frames=8))
print(len(scene.primitives), "primitives")
for p in scene.primitives:
    print(p.shape, round(p.half_size, 2), "waypoints:", len(p.waypoints))
print("descriptor tokens:", scene.descriptor)
print("subject at", scene.subject_position.round(2))


# ### 2. a start pose on the hemisphere and one trajectory per family

# In[ ]:
subject = scene.subject_position
start = sample_start_pose(3, subject)
print("start distance %.2f m" % np.linalg.norm(start.translation - subject))

trajs = [gen_trajectory(kind, start, subject, seed=k, f=scene.frames) for k, kind in enumerate(KINDS)]
for tr in trajs:
    moved = np.linalg.norm(tr.positions[-1] - tr.positions[0])
    print("%-9s moved %.2f m  violations: %s" % (tr.kind, moved, constraint_violations(tr, subject) or "none"))


# ### 3. render all cameras at once

# In[ ]:
r = render_scene(scene, trajs, 48, 48)
print("videos", r.videos.shape)          # (cameras, frames, 3, h, w)
print("visible primitive-frames per camera", r.visible.sum(axis=(1, 2)))


# ### 4. metadata agrees with the pinhole projection

# In[ ]:
cam, frame, k = 0, 4, 0
uv, depth = project(animate(scene, frame)[k], trajs[cam].poses[frame], trajs[cam].intrinsics)
print("analytic centroid", np.round(uv, 3), "stored", np.round(r.centroids[cam, frame, k], 3), "depth %.2f" % depth)

# a camera five metres down the x axis looking at the origin
pose = look_at([5.0, 0.0, 1.0], [0.0, 0.0, 1.0])
print("camera forward axis", pose.forward.round(3))
