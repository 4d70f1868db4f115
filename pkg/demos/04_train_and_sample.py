#!/usr/bin/env python
# coding: utf-8

# # Pretrain, fine-tune and sample on a toy dataset
#
# Small enough to run on one CPU core in about a minute. The numbers are only a
# smoke test; see the acceptance suite for the real budgets.

# In[ ]:
import tempfile
from pathlib import Path

import numpy as np

from recamera.dataset import Dataset, DatasetConfig, render_dataset
from recamera.evaluate import generate, psnr
from recamera.model import ModelConfig, load_checkpoint
from recamera.scenegen import SceneConfig
from recamera.train import TrainConfig, relative_cams, train

work = Path(tempfile.mkdtemp())


# ### 1. render 16 scenes x 3 cameras at 16x16

# In[ ]:
render_dataset(work / "ds", DatasetConfig(n_scenes=16, n_cameras=3, width=16, height=16,
                                          scene=SceneConfig(frames=4)))
ds = Dataset(work / "ds")
print({s: len(ds.ids(s)) for s in ("train", "val", "test")})


# ### 2. base model: descriptor -> video

# In[ ]:
model_cfg = ModelConfig(dim=48, depth=2, heads=4, patch=4)
base = train(TrainConfig(stage="pretrain_base", steps=150, lr=1e-3, batch_size=4, model=model_cfg,
                         dataset=str(ds.root)), work / "base", ds)
print("held-out loss %.3f -> %.3f" % (base["val_loss_start"], base["val_loss_end"]))


# ### 3. camera-controlled fine-tuning (frame_dim, mode dropping on)

# In[ ]:
ft = train(TrainConfig(stage="recam_finetune", steps=150, lr=1e-3, batch_size=4, model=model_cfg,
                       dataset=str(ds.root), base_checkpoint=base["checkpoint"]), work / "ft", ds)
print("fine-tune loss %.3f -> %.3f" % (ft["val_loss_start"], ft["val_loss_end"]))


# ### 4. re-render a scene from another camera in all three modes

# In[ ]:
model, meta = load_checkpoint(ft["checkpoint"])
rec = ds.load(ds.ids("train")[0])
cams = relative_cams(rec.trajectories[0], rec.trajectories[1])[None]
for mode in ("t2v", "i2v", "v2v"):
    out = generate(model, rec.videos[0][None], cams, rec.descriptor[None], steps=20, mode=mode)[0]
    print(mode, "PSNR vs target %.2f dB" % psnr(out, rec.videos[1]), " range", out.min().round(2), out.max().round(2))
# 150 steps is far too few to beat simply copying the source; compare with:
print("copy-source PSNR %.2f dB" % psnr(rec.videos[0], rec.videos[1]))
