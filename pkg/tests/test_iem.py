import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acmr.iem import (IemNet, collapse_diagnostics, draw_permutation, iem_loss, iem_loss_backward,
                      joint_score, shuffle_latents)
from acmr.ndcore import DimensionError, gradient_check
from acmr.trainer import LossWeights, total_loss
from acmr.vae import GaussianLatent


def test_default_hidden_width(rng):
    net = IemNet.init(10, 64, "visual", rng)
    assert net.score_mlp.layers[0].n_out == 99
    assert net.score_mlp.layers[0].n_in == 74


class TestJointScore:
    def test_zero_net(self, rng):
        net = IemNet.init(3, 2, "visual", rng, hidden=5)
        for layer in net.score_mlp.layers:
            layer.W[:] = 0.0
        np.testing.assert_array_equal(joint_score(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), net), 0.0)

    def test_deterministic(self, rng):
        net = IemNet.init(3, 2, "visual", rng, hidden=5)
        x, z = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        assert joint_score(x, z, net).tobytes() == joint_score(x, z, net).tobytes()

    def test_loop_oracle(self, rng):
        net = IemNet.init(3, 2, "visual", rng, hidden=5)
        net.score_mlp.layers[0].b[:] = rng.normal(size=5)
        net.score_mlp.layers[1].b[:] = rng.normal(size=1)
        x, z = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        W1, b1 = net.score_mlp.layers[0].W, net.score_mlp.layers[0].b
        W2, b2 = net.score_mlp.layers[1].W, net.score_mlp.layers[1].b
        expected = []
        for i in range(4):
            pair = list(x[i]) + list(z[i])
            hidden = [max(0.0, sum(pair[k] * W1[k, j] for k in range(5)) + b1[j]) for j in range(5)]
            expected.append(sum(hidden[j] * W2[j, 0] for j in range(5)) + b2[0])
        np.testing.assert_allclose(joint_score(x, z, net), expected, rtol=0, atol=1e-12)

    def test_row_mismatch(self, rng):
        net = IemNet.init(3, 2, "visual", rng, hidden=5)
        with pytest.raises(DimensionError):
            joint_score(np.zeros((4, 3)), np.zeros((3, 2)), net)


class TestShuffle:
    def test_identity(self, rng):
        z = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(shuffle_latents(z, np.arange(5)), z)

    def test_swap(self):
        z = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(shuffle_latents(z, [1, 0]), [[3.0, 4.0], [1.0, 2.0]])

    def test_multiset_preserved(self, rng):
        z = rng.normal(size=(7, 3))
        out = shuffle_latents(z, rng.permutation(7))
        assert sorted(map(tuple, out)) == sorted(map(tuple, z))

    def test_length_mismatch(self, rng):
        with pytest.raises(DimensionError):
            shuffle_latents(rng.normal(size=(3, 2)), [0, 1])

    def test_draw_prefers_derangements(self):
        rng = np.random.default_rng(0)
        fixed = sum(np.any(draw_permutation(6, rng) == np.arange(6)) for _ in range(200))
        assert fixed < 10


class TestIemLoss:
    def test_zero_scores(self):
        assert iem_loss(np.zeros(5), np.zeros(5)) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_saturated(self):
        assert iem_loss(np.full(4, 20.0), np.full(4, -20.0)) < 1e-8

    def test_loop_oracle(self, rng):
        pos, neg = rng.normal(scale=3, size=6), rng.normal(scale=3, size=6)
        expected = sum(-math.log(1 / (1 + math.exp(-p))) - math.log(1 - 1 / (1 + math.exp(-n)))
                       for p, n in zip(pos, neg)) / 6
        assert iem_loss(pos, neg) == pytest.approx(expected, abs=1e-12)

    def test_extreme_scores_stay_finite(self):
        assert math.isfinite(iem_loss(np.array([-1e4, 1e4]), np.array([1e4, -1e4])))

    @settings(max_examples=200, deadline=None)
    @given(pos=arrays(np.float64, 6, elements=st.floats(-50, 50)),
           neg=arrays(np.float64, 6, elements=st.floats(-50, 50)), seed=st.integers(0, 1000))
    def test_non_negative_and_order_invariant(self, pos, neg, seed):
        rng = np.random.default_rng(seed)
        value = iem_loss(pos, neg)
        assert value >= 0.0
        assert iem_loss(rng.permutation(pos), rng.permutation(neg)) == pytest.approx(value, rel=1e-12, abs=1e-15)

    def test_gradient(self, rng):
        params = {"pos": rng.normal(size=5), "neg": rng.normal(size=5)}

        def loss_fn():
            dp, dn = iem_loss_backward(params["pos"], params["neg"])
            return iem_loss(params["pos"], params["neg"]), {"pos": dp, "neg": dn}

        assert gradient_check(loss_fn, params).max_relative_error < 1e-7


def test_gradient_through_net_and_encoder(tiny):
    model, batch, noise, perm = tiny
    params = {**model.iem_x.named_parameters("iem_x"), **model.iem_a.named_parameters("iem_a"),
              **model.vae_x.named_parameters("vae_x"), **model.vae_a.named_parameters("vae_a")}
    weights = LossWeights()

    def loss_fn():
        model.zero_grad()
        res = total_loss(batch, model, weights, noise, perm, backward=True, terms=("iem",))
        return res.total, model.gradients()

    res = gradient_check(loss_fn, params)
    assert res.max_relative_error < 1e-4
    # the encoder actually receives signal from the discriminator
    model.zero_grad()
    total_loss(batch, model, weights, noise, perm, backward=True, terms=("iem",))
    assert np.abs(model.vae_x.encoder.layers[0].dW).max() > 0


class TestCollapseDiagnostics:
    def test_fully_collapsed(self):
        rep = collapse_diagnostics(GaussianLatent(np.zeros((5, 4)), np.zeros((5, 4))))
        assert rep.active_units == 0
        np.testing.assert_array_equal(rep.kl_per_dim, 0.0)

    def test_one_active_dimension(self):
        mu = np.zeros((5, 4))
        mu[:, 2] = 1.0
        rep = collapse_diagnostics(GaussianLatent(mu, np.zeros((5, 4))), threshold=0.01)
        assert rep.active_units == 1
        assert rep.kl_per_dim[2] == pytest.approx(0.5)

    def test_bounded_by_dimension(self, rng):
        for _ in range(20):
            lat = GaussianLatent(rng.normal(size=(6, 5)), rng.normal(size=(6, 5)))
            assert 0 <= collapse_diagnostics(lat).active_units <= 5
