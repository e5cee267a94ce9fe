"""Context CRF: messages, the message net, iteration and backward."""

import math

import numpy as np
import pytest

from guidedcrf.context_crf import (
    ContextMessageNet,
    GlobalHead,
    context_backward,
    context_forward,
    context_iterate,
    conv2d_same,
    global_message_to_local,
    high_order_message,
    indicator_mu_g,
    local_message_to_global,
    softmax_local,
)


def naive_conv(x, w, b):
    k = w.shape[0]
    p = k // 2
    h, wd, _ = x.shape
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    out = np.empty((h, wd, w.shape[3]))
    for i in range(h):
        for j in range(wd):
            out[i, j] = np.einsum("abc,abcd->d", xp[i:i + k, j:j + k], w) + b
    return out


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_local(np.zeros((1, 1, 3))), 1 / 3)

    def test_closed_form(self):
        p = softmax_local(np.array([[[0.0, -math.log(2), 0.0]]]))
        np.testing.assert_allclose(p[0, 0], [0.25, 0.5, 0.25], rtol=0, atol=1e-15)

    def test_shift_invariance(self, rng):
        phi = rng.normal(size=(4, 4, 5))
        shift = rng.normal(size=(4, 4, 1)) * 100
        np.testing.assert_allclose(softmax_local(phi + shift), softmax_local(phi), rtol=0, atol=1e-12)

    def test_large_values_stable(self):
        p = softmax_local(np.array([[[1e4, -1e4]]]))
        assert np.isfinite(p).all() and p[0, 0, 1] == 1.0


class TestGlobalMessages:
    def test_all_present(self):
        p_g = np.tile([0.0, 1.0], (4, 1))
        np.testing.assert_allclose(global_message_to_local(p_g, indicator_mu_g(4)), 1.0)

    def test_all_absent(self):
        p_g = np.tile([1.0, 0.0], (4, 1))
        assert not global_message_to_local(p_g, indicator_mu_g(4)).any()

    def test_uniform_presence(self):
        p_g = np.full((3, 2), 0.5)
        np.testing.assert_allclose(global_message_to_local(p_g, indicator_mu_g(3)), 0.5)

    def test_local_to_global_uniform(self):
        n, l = 6 * 5, 3
        msg = local_message_to_global(np.full((6, 5, l), 1 / l), indicator_mu_g(l))
        np.testing.assert_allclose(msg[:, 1], n / l, rtol=1e-12)
        assert not msg[:, 0].any()

    def test_local_to_global_one_hot(self):
        p = np.zeros((4, 4, 3))
        p[..., 0] = 1.0
        msg = local_message_to_global(p, indicator_mu_g(3))
        np.testing.assert_array_equal(msg, [[0, 16], [0, 0], [0, 0]])

    def test_local_to_global_y0_always_zero(self, rng):
        p = softmax_local(rng.normal(size=(5, 5, 4)))
        assert not local_message_to_global(p, indicator_mu_g(4))[:, 0].any()


class TestConv:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_naive(self, rng, k):
        x = rng.normal(size=(7, 6, 3))
        w, b = rng.normal(size=(k, k, 3, 2)), rng.normal(size=2)
        np.testing.assert_allclose(conv2d_same(x, w, b), naive_conv(x, w, b), rtol=0, atol=1e-10)


class TestMessageNet:
    def test_zero_net(self, rng):
        net = ContextMessageNet.zeros(3, channels=4, k1=5, k2=3)
        assert not high_order_message(softmax_local(rng.normal(size=(6, 6, 3))), net).any()

    def test_init_output_layer_zero(self):
        net = ContextMessageNet.init(4)
        assert not net.w2.any() and not net.b2.any() and net.w1.any()
        assert net.receptive_field == 29

    def test_pointwise_1x1(self, rng):
        net = ContextMessageNet(rng.normal(size=(1, 1, 3, 5)), rng.normal(size=5),
                                rng.normal(size=(1, 1, 5, 3)), rng.normal(size=3))
        p = softmax_local(rng.normal(size=(4, 5, 3)))
        m1, m2 = net.w1[0, 0], net.w2[0, 0]
        expected = np.maximum(p @ m1 + net.b1, 0) @ m2 + net.b2
        np.testing.assert_allclose(high_order_message(p, net), expected, rtol=0, atol=1e-12)

    def test_translation_equivariance(self, rng):
        net = ContextMessageNet(rng.normal(size=(3, 3, 2, 4)), rng.normal(size=4),
                                rng.normal(size=(3, 3, 4, 2)), rng.normal(size=2))
        p = softmax_local(rng.normal(size=(14, 14, 2)))
        dy, dx = 2, 1
        shifted = np.zeros_like(p)
        shifted[dy:, dx:] = p[:-dy, :-dx]
        a = high_order_message(p, net)
        b = high_order_message(shifted, net)
        # pixels whose 5x5 receptive field stays inside the unshifted data
        reach = net.receptive_field // 2
        np.testing.assert_allclose(b[dy + reach:14 - reach, dx + reach:14 - reach],
                                   a[reach:14 - reach - dy, reach:14 - reach - dx], rtol=0, atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ContextMessageNet(np.zeros((2, 2, 2, 3)), np.zeros(3), np.zeros((3, 3, 3, 2)), np.zeros(2))


class TestIterate:
    def test_no_messages_identity(self, rng):
        phi = rng.normal(size=(5, 5, 3))
        for k in (1, 2, 4):
            state = context_iterate(phi, np.zeros((3, 2)), ContextMessageNet.zeros(3, 4, 3, 3),
                                    np.zeros((3, 3, 2)), k)
            assert np.array_equal(state.phi_u, phi)
            assert state.iteration == k

    def test_zero_iterations_rejected(self, rng):
        with pytest.raises(ValueError):
            context_iterate(rng.normal(size=(3, 3, 2)), np.zeros((2, 2)), None, None, 0)

    def test_probabilities_normalised(self, rng):
        net = ContextMessageNet(rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4),
                                rng.normal(size=(3, 3, 4, 3)), rng.normal(size=3))
        state = context_iterate(rng.normal(size=(6, 6, 3)), rng.normal(size=(3, 2)), net,
                                rng.normal(size=(3, 3, 2)), 3)
        assert np.abs(state.p_hat.sum(axis=2) - 1).max() <= 1e-9
        assert np.abs(state.p_g.sum(axis=1) - 1).max() <= 1e-12

    def test_manual_trace_2x2(self):
        # L=2, 1x1 net with two hidden units, indicator mu_g
        phi = np.array([[[0.0, 1.0], [2.0, 0.0]], [[0.5, 0.5], [-1.0, 1.0]]])
        phi_g = np.array([[0.0, 1.0], [0.0, -1.0]])
        w1 = np.array([[[[1.0, -1.0], [0.5, 2.0]]]])       # (1,1,L=2,C=2)
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[[[0.3, -0.4], [1.0, 0.2]]]])       # (1,1,C=2,L=2)
        b2 = np.array([0.05, 0.0])
        net = ContextMessageNet(w1, b1, w2, b2)
        state = context_iterate(phi, phi_g, net, indicator_mu_g(2), 1)

        expected = np.empty_like(phi)
        # presence probabilities: p_g[l, 1] = e^{-phi_g[l,1]} / (e^{-phi_g[l,0]} + e^{-phi_g[l,1]})
        pres = [math.exp(-1.0) / (1 + math.exp(-1.0)), math.exp(1.0) / (1 + math.exp(1.0))]
        for i in range(2):
            for j in range(2):
                e = [math.exp(-v) for v in phi[i, j]]
                p = [v / sum(e) for v in e]
                hid = [max(p[0] * w1[0, 0, 0, c] + p[1] * w1[0, 0, 1, c] + b1[c], 0.0) for c in range(2)]
                for v in range(2):
                    msg = hid[0] * w2[0, 0, 0, v] + hid[1] * w2[0, 0, 1, v] + b2[v]
                    expected[i, j, v] = phi[i, j, v] - msg - pres[v]
        np.testing.assert_allclose(state.phi_u, expected, rtol=0, atol=1e-12)
        # global side: phi_g[l, 1] - sum_i p_hat[i, l]
        np.testing.assert_allclose(state.phi_g[:, 1], phi_g[:, 1] - state.p_hat.sum(axis=(0, 1)),
                                   rtol=0, atol=1e-12)


class TestBackward:
    def test_missing_cache(self):
        with pytest.raises(ValueError, match="cache"):
            context_backward(np.zeros((2, 2, 2)), None)

    def test_no_cache_for_multiple_iterations(self, rng):
        _, cache = context_forward(rng.normal(size=(3, 3, 2)), np.zeros((2, 2)), None, indicator_mu_g(2), 2)
        assert cache is None

    def test_zero_upstream(self, rng):
        net = ContextMessageNet(rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4),
                                rng.normal(size=(3, 3, 4, 3)), rng.normal(size=3))
        _, cache = context_forward(rng.normal(size=(5, 5, 3)), rng.normal(size=(3, 2)), net,
                                   rng.normal(size=(3, 3, 2)))
        g = context_backward(np.zeros((5, 5, 3)), cache)
        assert not g.phi.any() and not g.phi_g.any() and not g.mu_g.any()
        assert not any(v.any() for v in g.net.values())

    def test_identity_path(self, rng):
        up = rng.normal(size=(4, 4, 3))
        _, cache = context_forward(rng.normal(size=(4, 4, 3)), np.zeros((3, 2)),
                                   ContextMessageNet.zeros(3, 2, 3, 3), np.zeros((3, 3, 2)))
        assert np.array_equal(context_backward(up, cache).phi, up)


class TestGlobalHead:
    def test_zero_head(self, rng):
        phi_g, _ = GlobalHead.zeros(3).forward(rng.normal(size=(6, 6, 3)))
        assert not phi_g.any()

    def test_pooled_local_mean(self):
        phi = np.zeros((8, 8, 2))
        phi[0:5, 0:5, 1] = -2.0          # one 5x5 block of strong evidence for label 1
        head = GlobalHead.init(2, scale=1.0, bias=0.5)
        phi_g, _ = head.forward(phi)
        np.testing.assert_allclose(phi_g[:, 0], 0.0)
        assert phi_g[0, 1] == pytest.approx(-0.5)
        assert phi_g[1, 1] == pytest.approx(-(2.0 + 0.5))
