# The information-enhancement discriminator and the collapse diagnostics it is
# meant to improve.
import math

import numpy as np

from acmr.iem import IemNet, collapse_diagnostics, draw_permutation, iem_loss, joint_score, shuffle_latents
from acmr.vae import GaussianLatent

rng = np.random.default_rng(2)

# a discriminator that cannot tell pairs apart scores everything 0: loss 2 ln 2
print("iem loss at zero scores:", iem_loss(np.zeros(6), np.zeros(6)), "=", 2 * math.log(2))

# real pairs (x_i, z_i) against shuffled pairs (x_i, z_perm(i))
net = IemNet.init(5, 3, "visual", rng, hidden=16)
x, z = rng.normal(size=(6, 5)), rng.normal(size=(6, 3))
perm = draw_permutation(6, rng)
print("permutation:", perm)
pos = joint_score(x, z, net)
neg = joint_score(x, shuffle_latents(z, perm), net)
print("untrained loss:", iem_loss(pos, neg))

# collapse: a dimension whose posterior equals the prior carries no information
mu = np.zeros((20, 4))
mu[:, 0] = rng.normal(size=20)
mu[:, 1] = 0.05 * rng.normal(size=20)
report = collapse_diagnostics(GaussianLatent(mu, np.zeros((20, 4))), threshold=0.01)
print("KL per dim:", np.round(report.kl_per_dim, 4), "active units:", report.active_units)
