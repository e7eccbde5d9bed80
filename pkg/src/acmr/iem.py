"""Information enhancement: a joint-score discriminator between inputs and
their latents, trained against within-batch shuffled pairs, plus
latent-collapse diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import MLP, DimensionError, as_matrix, sigmoid, softplus
from .vae import GaussianLatent

IEM_HIDDEN = 99


class IemNet:
    """Scores an ``(input, latent)`` pair: ``MLP(concat(input, z)) -> scalar``."""

    def __init__(self, score_mlp: MLP, input_dim: int, modality: str):
        if score_mlp.layers[-1].n_out != 1:
            raise DimensionError("score network must emit one value per pair")
        self.score_mlp = score_mlp
        self.input_dim = input_dim
        self.modality = modality

    @classmethod
    def init(cls, input_dim: int, latent_dim: int, modality: str, rng: np.random.Generator,
             hidden: int = IEM_HIDDEN) -> "IemNet":
        return cls(MLP.init([input_dim + latent_dim, hidden, 1], rng), input_dim, modality)

    @property
    def latent_dim(self) -> int:
        return self.score_mlp.layers[0].n_in - self.input_dim

    def zero_grad(self) -> None:
        self.score_mlp.zero_grad()

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return self.score_mlp.named_parameters(prefix)

    def named_gradients(self, prefix: str) -> dict[str, np.ndarray]:
        return self.score_mlp.named_gradients(prefix)

    def score_with_cache(self, inputs: np.ndarray, z: np.ndarray):
        inputs = as_matrix(inputs, "iem input")
        z = as_matrix(z, "iem latent")
        if inputs.shape[0] != z.shape[0]:
            raise DimensionError(f"{inputs.shape[0]} inputs vs {z.shape[0]} latents")
        if inputs.shape[1] != self.input_dim or z.shape[1] != self.latent_dim:
            raise DimensionError(
                f"pair widths ({inputs.shape[1]}, {z.shape[1]}) vs net ({self.input_dim}, {self.latent_dim})")
        out, caches = self.score_mlp.forward(np.hstack([inputs, z]))
        return out[:, 0], caches

    def score_backward(self, d_scores: np.ndarray, caches) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. ``z``."""
        d_pair = self.score_mlp.backward(d_scores.reshape(-1, 1), caches)
        return d_pair[:, self.input_dim:]


def joint_score(inputs: np.ndarray, z: np.ndarray, net: IemNet) -> np.ndarray:
    return net.score_with_cache(inputs, z)[0]


def shuffle_latents(z: np.ndarray, perm) -> np.ndarray:
    """Row ``i`` of the result is row ``perm[i]`` of ``z``."""
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != z.shape[0]:
        raise DimensionError(f"permutation of length {perm.shape} for {z.shape[0]} rows")
    if not np.array_equal(np.sort(perm), np.arange(z.shape[0])):
        raise ValueError("perm is not a permutation")
    return z[perm]


def draw_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation, rerolled a few times to avoid fixed points."""
    perm = rng.permutation(n)
    for _ in range(8):
        if n < 2 or not np.any(perm == np.arange(n)):
            break
        perm = rng.permutation(n)
    return perm


def iem_loss(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Jensen-Shannon discriminator loss: mean of ``-log s(pos) - log(1 - s(neg))``."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    # -log s(t) = softplus(-t);  -log(1 - s(t)) = softplus(t)
    return float(np.mean(softplus(-pos)) + np.mean(softplus(neg)))


def iem_loss_backward(pos_scores: np.ndarray, neg_scores: np.ndarray):
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    return -sigmoid(-pos) / pos.shape[0], sigmoid(neg) / neg.shape[0]


@dataclass
class CollapseReport:
    active_units: int
    kl_per_dim: np.ndarray


def collapse_diagnostics(lat: GaussianLatent, threshold: float = 0.01) -> CollapseReport:
    """Batch-mean KL per latent dimension and how many exceed ``threshold``."""
    kl = np.mean(0.5 * (lat.mu ** 2 + (np.expm1(lat.logvar) - lat.logvar)), axis=0)
    return CollapseReport(int(np.sum(kl > threshold)), kl)
