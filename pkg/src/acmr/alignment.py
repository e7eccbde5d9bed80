"""Cross-modal alignment loss: closed-form 2-Wasserstein distance between
paired diagonal Gaussians, averaged over the batch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import DimensionError
from .vae import GaussianLatent

# keeps sqrt differentiable at zero distance
SQRT_EPS = 1e-12


@dataclass(frozen=True)
class AlignmentLoss:
    value: float
    per_sample: np.ndarray


def _check(lx: GaussianLatent, la: GaussianLatent) -> None:
    if lx.mu.shape != la.mu.shape:
        raise DimensionError(f"latent shapes differ: {lx.mu.shape} vs {la.mu.shape}")


def wasserstein_gaussian(lx: GaussianLatent, la: GaussianLatent, eps: float = SQRT_EPS) -> AlignmentLoss:
    """Per pair ``sqrt(|mu_x - mu_a|^2 + |sigma_x - sigma_a|^2)`` with sigma = exp(logvar/2).

    ``eps`` is added under the root; pass ``eps=0`` for the exact distance.
    """
    _check(lx, la)
    sq = np.sum((lx.mu - la.mu) ** 2, axis=1) + np.sum((lx.std - la.std) ** 2, axis=1)
    per = np.sqrt(sq + eps)
    return AlignmentLoss(float(per.mean()), per)


def wasserstein_backward(lx: GaussianLatent, la: GaussianLatent, eps: float = SQRT_EPS):
    """Gradients of the batch value w.r.t. ``(mu_x, logvar_x, mu_a, logvar_a)``."""
    _check(lx, la)
    B = lx.mu.shape[0]
    sx, sa = lx.std, la.std
    per = np.sqrt(np.sum((lx.mu - la.mu) ** 2, axis=1) + np.sum((sx - sa) ** 2, axis=1) + eps)
    scale = (1.0 / (B * per))[:, None]
    d_mu = (lx.mu - la.mu) * scale
    d_std = (sx - sa) * scale
    return d_mu, d_std * 0.5 * sx, -d_mu, -d_std * 0.5 * sa
