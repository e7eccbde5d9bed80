"""Vision-semantic alignment heads: linear classifiers on each modality's
latents whose cross-entropy steers both latent spaces toward the same
class structure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import DenseLayer, DimensionError, as_matrix, log_softmax


class VsaHeads:
    def __init__(self, head_x: DenseLayer, head_a: DenseLayer):
        if head_x.W.shape != head_a.W.shape:
            raise DimensionError("visual and semantic heads must have the same shape")
        self.head_x = head_x
        self.head_a = head_a

    @classmethod
    def init(cls, latent_dim: int, num_classes: int, rng: np.random.Generator) -> "VsaHeads":
        return cls(DenseLayer.init(latent_dim, num_classes, "identity", rng),
                   DenseLayer.init(latent_dim, num_classes, "identity", rng))

    @property
    def num_classes(self) -> int:
        return self.head_x.n_out

    def zero_grad(self) -> None:
        self.head_x.zero_grad()
        self.head_a.zero_grad()

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.x.W": self.head_x.W, f"{prefix}.x.b": self.head_x.b,
                f"{prefix}.a.W": self.head_a.W, f"{prefix}.a.b": self.head_a.b}

    def named_gradients(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.x.W": self.head_x.dW, f"{prefix}.x.b": self.head_x.db,
                f"{prefix}.a.W": self.head_a.dW, f"{prefix}.a.b": self.head_a.db}


def latent_classify(z: np.ndarray, head: DenseLayer) -> np.ndarray:
    """Raw logits; softmax lives inside the loss."""
    z = as_matrix(z, "latent")
    if z.shape[1] != head.n_in:
        raise DimensionError(f"latent width {z.shape[1]} vs head input {head.n_in}")
    return head(z)


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy; stable for large-magnitude logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    lp = log_softmax(logits)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


def cross_entropy_backward(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = _check_labels(labels, logits.shape[1])
    grad = np.exp(log_softmax(logits))
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / logits.shape[0]


@dataclass
class RepLoss:
    total: float
    visual: float
    semantic: float


def rep_loss(z_x: np.ndarray, z_a: np.ndarray, labels: np.ndarray, heads: VsaHeads,
             backward: bool = False):
    """Cross-entropy of each head on its modality's latents, summed.

    With ``backward=True`` head gradients are accumulated and the gradients
    w.r.t. ``(z_x, z_a)`` are returned alongside the loss.
    """
    if np.shape(z_x) != np.shape(z_a):
        raise DimensionError(f"paired latents differ: {np.shape(z_x)} vs {np.shape(z_a)}")
    _check_labels(labels, heads.num_classes)
    out_x, cache_x = heads.head_x.forward(z_x)
    out_a, cache_a = heads.head_a.forward(z_a)
    lx, la = cross_entropy(out_x, labels), cross_entropy(out_a, labels)
    result = RepLoss(lx + la, lx, la)
    if not backward:
        return result
    dzx = heads.head_x.backward(cross_entropy_backward(out_x, labels), cache_x)
    dza = heads.head_a.backward(cross_entropy_backward(out_a, labels), cache_a)
    return result, (dzx, dza)
