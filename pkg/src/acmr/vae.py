"""Gaussian-encoder / deterministic-decoder branches and the VAE loss terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import MLP, DimensionError, as_matrix, check_finite

LOGVAR_CLAMP = 10.0

DEFAULT_HIDDEN = {
    # (encoder, decoder) hidden widths
    "visual": (1560, 1680),
    "semantic": (1450, 665),
}


@dataclass(frozen=True)
class GaussianLatent:
    """Diagonal Gaussian posterior for a batch; ``logvar`` is already clamped."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise DimensionError(f"mu {self.mu.shape} vs logvar {self.logvar.shape}")

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar)


class VaeBranch:
    """One modality: encoder ``D -> hidden -> 2*latent`` and decoder ``latent -> hidden -> D``."""

    def __init__(self, encoder: MLP, decoder: MLP, modality: str):
        if modality not in ("visual", "semantic"):
            raise ValueError(f"unknown modality {modality!r}")
        self.encoder = encoder
        self.decoder = decoder
        self.modality = modality
        out = encoder.layers[-1].n_out
        if out % 2:
            raise DimensionError("encoder output width must be 2 * latent_dim")
        if decoder.layers[0].n_in != out // 2:
            raise DimensionError("decoder input width must equal latent_dim")

    @classmethod
    def init(cls, input_dim: int, latent_dim: int, modality: str, rng: np.random.Generator,
             enc_hidden: int | None = None, dec_hidden: int | None = None,
             hidden_activation: str = "relu") -> "VaeBranch":
        default_enc, default_dec = DEFAULT_HIDDEN[modality]
        enc_hidden = default_enc if enc_hidden is None else enc_hidden
        dec_hidden = default_dec if dec_hidden is None else dec_hidden
        encoder = MLP.init([input_dim, enc_hidden, 2 * latent_dim], rng, hidden_activation)
        decoder = MLP.init([latent_dim, dec_hidden, input_dim], rng, hidden_activation)
        return cls(encoder, decoder, modality)

    @property
    def input_dim(self) -> int:
        return self.encoder.layers[0].n_in

    @property
    def latent_dim(self) -> int:
        return self.encoder.layers[-1].n_out // 2

    def zero_grad(self) -> None:
        self.encoder.zero_grad()
        self.decoder.zero_grad()

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {**self.encoder.named_parameters(f"{prefix}.enc"),
                **self.decoder.named_parameters(f"{prefix}.dec")}

    def named_gradients(self, prefix: str) -> dict[str, np.ndarray]:
        return {**self.encoder.named_gradients(f"{prefix}.enc"),
                **self.decoder.named_gradients(f"{prefix}.dec")}

    def encode_with_cache(self, inputs: np.ndarray):
        inputs = as_matrix(inputs, f"{self.modality} input")
        if inputs.shape[1] != self.input_dim:
            raise DimensionError(
                f"{self.modality} input has {inputs.shape[1]} columns, expected {self.input_dim}")
        out, caches = self.encoder.forward(inputs)
        d = self.latent_dim
        raw_logvar = out[:, d:]
        in_range = np.abs(raw_logvar) <= LOGVAR_CLAMP
        lat = GaussianLatent(out[:, :d], np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))
        return lat, (caches, in_range)

    def encode_backward(self, d_mu: np.ndarray, d_logvar: np.ndarray, cache) -> None:
        caches, in_range = cache
        self.encoder.backward(np.hstack([d_mu, d_logvar * in_range]), caches)

    def forward(self, inputs: np.ndarray, noise: np.ndarray) -> "BranchPass":
        lat, enc_cache = self.encode_with_cache(inputs)
        z = reparameterize(lat, noise)
        recon, dec_caches = self.decoder.forward(z)
        return BranchPass(inputs, lat, np.asarray(noise, dtype=np.float64), z, recon,
                          enc_cache, dec_caches)

    def backward(self, bp: "BranchPass", d_recon: np.ndarray | None, d_mu: np.ndarray,
                 d_logvar: np.ndarray, d_z: np.ndarray) -> None:
        """Accumulate parameter gradients given upstream gradients.

        ``d_mu`` / ``d_logvar`` are the direct gradients on the latent
        statistics, ``d_z`` the direct gradient on the sample.
        """
        d_z = d_z.copy()
        if d_recon is not None:
            d_z += self.decoder.backward(d_recon, bp.dec_caches)
        dm, dlv = reparameterize_backward(bp.latent, bp.noise, d_z)
        self.encode_backward(d_mu + dm, d_logvar + dlv, bp.enc_cache)


@dataclass
class BranchPass:
    inputs: np.ndarray
    latent: GaussianLatent
    noise: np.ndarray
    z: np.ndarray
    recon: np.ndarray
    enc_cache: tuple
    dec_caches: list


def encode(inputs: np.ndarray, branch: VaeBranch) -> GaussianLatent:
    return branch.encode_with_cache(inputs)[0]


def reparameterize(lat: GaussianLatent, noise: np.ndarray) -> np.ndarray:
    """``mu + exp(logvar / 2) * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != lat.mu.shape:
        raise DimensionError(f"noise {noise.shape} vs latent {lat.mu.shape}")
    check_finite(noise, "noise")
    return lat.mu + lat.std * noise


def reparameterize_backward(lat: GaussianLatent, noise: np.ndarray, d_z: np.ndarray):
    return d_z, d_z * noise * 0.5 * lat.std


def kl_per_sample(lat: GaussianLatent) -> np.ndarray:
    # expm1 keeps the variance term non-negative when logvar is tiny
    return 0.5 * np.sum(lat.mu ** 2 + (np.expm1(lat.logvar) - lat.logvar), axis=1)


def kl_diag_gaussian(lat: GaussianLatent) -> float:
    """Batch-mean KL(N(mu, diag(exp(logvar))) || N(0, I))."""
    return float(np.mean(kl_per_sample(lat)))


def kl_backward(lat: GaussianLatent):
    B = lat.mu.shape[0]
    return lat.mu / B, 0.5 * (np.exp(lat.logvar) - 1.0) / B


def reconstruction_loss(x: np.ndarray, x_hat: np.ndarray, kind: str = "l1") -> float:
    """Batch mean of the per-sample L1 (default) or squared-L2 distance."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"target {x.shape} vs reconstruction {x_hat.shape}")
    diff = x_hat - x
    if kind == "l1":
        per = np.abs(diff).sum(axis=1)
    elif kind == "l2":
        per = (diff ** 2).sum(axis=1)
    else:
        raise ValueError(f"unknown reconstruction kind {kind!r}")
    return float(per.mean())


def reconstruction_backward(x: np.ndarray, x_hat: np.ndarray, kind: str = "l1") -> np.ndarray:
    """Gradient of :func:`reconstruction_loss` with respect to ``x_hat``."""
    B = x.shape[0]
    diff = x_hat - x
    if kind == "l1":
        return np.sign(diff) / B
    return 2.0 * diff / B


@dataclass
class VaeLoss:
    total: float
    recon_x: float
    recon_a: float
    kl_x: float
    kl_a: float


def vae_loss(x_batch: np.ndarray, a_batch: np.ndarray, branches: tuple[VaeBranch, VaeBranch],
             alpha: float, noise: tuple[np.ndarray, np.ndarray], recon_kind: str = "l1",
             backward: bool = False) -> VaeLoss:
    """Two-branch negative ELBO ``recon_x + recon_a + alpha * (KL_x + KL_a)``.

    With ``backward=True`` parameter gradients are accumulated into both
    branches (callers zero them first).
    """
    if np.shape(x_batch)[0] != np.shape(a_batch)[0]:
        raise DimensionError("visual and semantic batches must have the same number of rows")
    parts = {}
    for key, branch, inputs, eps in (("x", branches[0], x_batch, noise[0]),
                                     ("a", branches[1], a_batch, noise[1])):
        bp = branch.forward(inputs, eps)
        parts[key] = (reconstruction_loss(bp.inputs, bp.recon, recon_kind), kl_diag_gaussian(bp.latent))
        if backward:
            d_recon = reconstruction_backward(bp.inputs, bp.recon, recon_kind)
            dm, dlv = kl_backward(bp.latent)
            branch.backward(bp, d_recon, alpha * dm, alpha * dlv, np.zeros_like(bp.z))
    (rx, kx), (ra, ka) = parts["x"], parts["a"]
    return VaeLoss(rx + ra + alpha * (kx + ka), rx, ra, kx, ka)
