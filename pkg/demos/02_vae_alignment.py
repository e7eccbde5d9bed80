# Two Gaussian encoders, their KL terms, and the closed-form Wasserstein distance
# that pulls the visual and semantic posteriors together.
import math

import numpy as np

from acmr.alignment import wasserstein_gaussian
from acmr.vae import GaussianLatent, VaeBranch, encode, kl_diag_gaussian, vae_loss

rng = np.random.default_rng(1)

# KL to the standard normal, by hand: 0.5 * (mu^2 + var - 1 - log var)
print("KL(mu=1, var=1)  =", kl_diag_gaussian(GaussianLatent(np.ones((1, 1)), np.zeros((1, 1)))))
print("KL(mu=0, var=4)  =", kl_diag_gaussian(GaussianLatent(np.zeros((1, 1)), np.full((1, 1), math.log(4)))))

# for diagonal Gaussians W2 is the euclidean distance between (mu, sigma) stacks
p = GaussianLatent(np.array([[3.0, 4.0, 0.0]]), np.zeros((1, 3)))
q = GaussianLatent(np.zeros((1, 3)), np.zeros((1, 3)))
print("W2, mean gap (3,4):", wasserstein_gaussian(p, q, eps=0.0).value)

# small visual and semantic branches sharing a 4-d latent
vis = VaeBranch.init(10, 4, "visual", rng, 16, 16)
sem = VaeBranch.init(6, 4, "semantic", rng, 12, 12)
x, a = rng.normal(size=(8, 10)), rng.normal(size=(8, 6))
noise = (rng.standard_normal((8, 4)), rng.standard_normal((8, 4)))
loss = vae_loss(x, a, (vis, sem), 2.0, noise)
print(f"recon x {loss.recon_x:.3f}  recon a {loss.recon_a:.3f}  KL x {loss.kl_x:.3f}  KL a {loss.kl_a:.3f}")

# untrained encoders disagree; the alignment loss measures by how much
ma = wasserstein_gaussian(encode(x, vis), encode(a, sem))
print("alignment loss:", ma.value, "per sample:", np.round(ma.per_sample, 3))
