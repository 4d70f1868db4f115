"""Rectified-flow forward process, flow-matching target/loss and Euler sampler.

Time runs from data (t = 0) to standard normal noise (t = 1). Functions accept
torch tensors or numpy arrays unless noted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import torch

from .errors import NumericError, ShapeError


@dataclass
class NoisedSample:
    z_t: Any
    t: Any
    eps: Any


def _check_shapes(*xs):
    shapes = {tuple(x.shape) for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def _all_finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(x).all())


def _bcast_t(t, like):
    """Scalar t, or one t per batch item broadcast over the remaining dims."""
    if isinstance(t, torch.Tensor) and t.ndim == 1 and like.ndim > 1:
        return t.reshape(-1, *([1] * (like.ndim - 1))).to(like.dtype)
    if isinstance(t, np.ndarray) and t.ndim == 1 and like.ndim > 1:
        return t.reshape(-1, *([1] * (like.ndim - 1)))
    return t


def forward_noise(z0, eps, t) -> NoisedSample:
    """Straight-line interpolation ``z_t = (1 - t) z0 + t eps``."""
    _check_shapes(z0, eps)
    tt = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    if np.any(tt < 0) or np.any(tt > 1):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    tb = _bcast_t(t, z0)
    return NoisedSample((1 - tb) * z0 + tb * eps, t, eps)


def cfm_target(z0, eps):
    """Velocity of the straight path, d z_t / dt = eps - z0."""
    _check_shapes(z0, eps)
    return eps - z0


def cfm_loss(v_pred, z0, eps):
    """Mean squared error between the predicted and target velocity."""
    _check_shapes(v_pred, z0, eps)
    for name, x in (("v_pred", v_pred), ("z0", z0), ("eps", eps)):
        if not _all_finite(x):
            raise NumericError(f"non-finite values in {name}")
    return ((v_pred - cfm_target(z0, eps)) ** 2).mean()


def sample_timesteps(n: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """Training timesteps, uniform on [0, 1]."""
    return torch.rand(n, generator=generator, dtype=torch.float64)


@torch.no_grad()
def euler_sample(model_fn: Callable, conditions: dict, steps: int, seed: int, shape,
                 dtype=torch.float32, z_init=None) -> torch.Tensor:
    """Integrate dz = v dt from pure noise at t = 1 down to t = 0.

    ``model_fn(z, t, **conditions)`` returns the velocity; ``t`` is passed as a
    float. Uses ``steps`` uniform steps of size ``-1/steps``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if z_init is None:
        gen = torch.Generator().manual_seed(int(seed))
        z = torch.randn(*shape, generator=gen, dtype=dtype)
    else:
        z = z_init.clone()
    dt = -1.0 / steps
    for k in range(steps):
        t = 1.0 - k / steps
        v = model_fn(z, t, **conditions)
        z = z + v * dt
        if not torch.isfinite(z).all():
            raise NumericError(f"non-finite sampler state at step {k}")
    return z
