#!/usr/bin/env python
# coding: utf-8

# # Rectified flow in a few lines
#
# Data and noise are joined by straight lines; the network regresses the
# constant velocity along each line and sampling integrates it back from noise.

# In[ ]:
import torch

from recamera.flow import cfm_loss, cfm_target, euler_sample, forward_noise


# ### 1. the straight path

# In[ ]:
g = torch.Generator().manual_seed(0)
z0 = torch.randn(2, 4, 3, 8, 8, generator=g, dtype=torch.float64)
eps = torch.randn(2, 4, 3, 8, 8, generator=g, dtype=torch.float64)
for t in (0.0, 0.25, 0.5, 1.0):
    zt = forward_noise(z0, eps, t).z_t
    print(t, "distance to data %.3f" % (zt - z0).norm().item(), "to noise %.3f" % (zt - eps).norm().item())


# ### 2. the velocity target is the path derivative

# In[ ]:
h = 1e-4
fd = (forward_noise(z0, eps, 0.4 + h).z_t - forward_noise(z0, eps, 0.4 - h).z_t) / (2 * h)
print("max |fd - (eps - z0)|:", (fd - cfm_target(z0, eps)).abs().max().item())
print("loss of the exact field:", cfm_loss(eps - z0, z0, eps).item())
print("loss with a unit offset:", cfm_loss(eps - z0 + 1, z0, eps).item())


# ### 3. Euler sampling with an oracle field
# With the exact field the sampler lands on z0 for any step count.

# In[ ]:
def oracle(z, t):
    return eps - z0


for n in (1, 5, 50):
    out = euler_sample(oracle, {}, n, seed=0, shape=tuple(z0.shape), z_init=eps)
    print(n, "steps, max error", (out - z0).abs().max().item())
