#!/usr/bin/env python
# coding: utf-8

# # Three ways to feed a source video to the model
#
# frame_dim appends source tokens along the frame axis, channel_dim stacks the
# two latents before patchifying, view_dim keeps two streams and links them with
# a per-frame attention layer.

# In[ ]:
import torch

from recamera.model import ModelConfig, VideoDiT, group_of

cfg = dict(dim=32, depth=2, heads=4, patch=4, frames=4, height=16, width=16)
zt = torch.randn(1, 4, 3, 16, 16)
src = torch.randn(1, 4, 3, 16, 16)
cams = torch.randn(1, 4, 12)
desc = torch.zeros(1, 12, dtype=torch.long)


# ### 1. sequence length seen by 3D attention

# In[ ]:
for mode in ("frame_dim", "channel_dim", "view_dim"):
    m = ModelConfig(mode=mode, **cfg)
    print("%-12s tokens per 3D attention: %d" % (mode, m.sequence_length()))


# ### 2. parameter groups and what fine-tuning trains

# In[ ]:
for mode in ("frame_dim", "channel_dim", "view_dim"):
    torch.manual_seed(0)
    model = VideoDiT(ModelConfig(mode=mode, **cfg))
    counts = {}
    for name, p in model.named_parameters():
        counts[group_of(name)] = counts.get(group_of(name), 0) + p.numel()
    print(mode, counts)


# ### 3. the camera path starts switched off
# The camera encoders are zero-initialised, so before fine-tuning the output does
# not depend on the target camera at all.

# In[ ]:
torch.manual_seed(0)
model = VideoDiT(ModelConfig(**cfg))
with torch.no_grad():
    model.proj_out.weight.normal_(0, 0.1)   # make the output non-trivial
    a = model(zt, src, cams, desc, 0.5)
    b = model(zt, src, cams * 10, desc, 0.5)
print("identical outputs:", torch.equal(a, b), " output std %.4f" % a.std().item())
