import numpy as np
import pytest

from cyclezsl import ndmath as nd
from cyclezsl.ndmath import Tensor
from cyclezsl.networks import (
    NetSpec,
    d1_forward,
    d2_forward,
    encode_text,
    g1_forward,
    g2_forward,
    init_networks,
)

SPEC = NetSpec(d_s=6, d_v=5, num_classes=3, d_embed=4, d_noise=3, d_hidden=7, d_hidden_disc=8)


def inputs(rng, b=4, spec=SPEC):
    return Tensor(rng.random((b, spec.d_s))), Tensor(rng.standard_normal((b, spec.d_noise)))


class TestInit:
    def test_same_seed_bit_identical(self):
        a, b = init_networks(SPEC, 3), init_networks(SPEC, 3)
        for pa, pb in zip(a, b):
            for x, y in zip(pa.values(), pb.values()):
                assert x.data.tobytes() == y.data.tobytes()

    def test_truncation_and_zero_bias(self):
        for p in init_networks(NetSpec(d_s=50, d_v=40, num_classes=5, d_hidden=64, d_hidden_disc=32), 0):
            for name, t in p.tensors.items():
                if name.endswith("bias"):
                    assert np.all(t.data == 0)
                else:
                    assert np.all(np.abs(t.data) <= 0.04)

    def test_distinct_seeds(self):
        a, _, _, _ = init_networks(SPEC, 1)
        b, _, _, _ = init_networks(SPEC, 2)
        assert not np.array_equal(a["layer1.weight"].data, b["layer1.weight"].data)

    def test_shapes(self):
        theta, w, delta, zeta = init_networks(SPEC, 0)
        assert theta["encoder.weight"].shape == (6, 4)
        assert theta["layer1.weight"].shape == (4 + 3, 7)
        assert theta["layer2.weight"].shape == (7, 5)
        assert w["classifier.weight"].shape == (8, 3)
        assert delta["layer2.weight"].shape == (7, SPEC.d_text_out)
        assert zeta["trunk.weight"].shape == (SPEC.d_text_out, 8)

    def test_tfidf_target_widens_inverse_output(self):
        spec = NetSpec(d_s=6, d_v=5, num_classes=3, d_embed=4, cycle_target="tfidf")
        assert spec.d_text_out == 6


class TestSpec:
    def test_default_embed_width(self):
        assert NetSpec(d_s=11083, d_v=3582, num_classes=200).d_embed == 1000
        assert NetSpec(d_s=32, d_v=64, num_classes=10).d_embed == 32

    def test_invalid(self):
        with pytest.raises(ValueError):
            NetSpec(d_s=0, d_v=5, num_classes=3)
        with pytest.raises(ValueError):
            NetSpec(d_s=6, d_v=5, num_classes=3, d_embed=4, attribute_mode=True)

    def test_digest_tracks_fields(self):
        assert SPEC.digest() == NetSpec(**SPEC.to_dict()).digest()
        assert SPEC.digest() != NetSpec(**{**SPEC.to_dict(), "d_hidden": 9}).digest()


class TestG1:
    def test_tanh_range_and_shapes(self, rng):
        theta = init_networks(SPEC, 0)[0]
        for t in theta.values():
            t.data = t.data * 100  # push into saturation
        alpha, z = inputs(rng)
        x_hat, s = g1_forward(theta, alpha, z)
        assert x_hat.shape == (4, 5) and s.shape == (4, 4)
        assert np.all(np.abs(x_hat.data) <= 1.0)

    def test_zero_inputs_give_zero(self):
        theta = init_networks(SPEC, 0)[0]
        x_hat, _ = g1_forward(theta, Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 3))))
        np.testing.assert_array_equal(x_hat.data, 0.0)

    def test_deterministic(self, rng):
        theta = init_networks(SPEC, 0)[0]
        alpha, z = inputs(rng)
        assert g1_forward(theta, alpha, z)[0].data.tobytes() == g1_forward(theta, alpha, z)[0].data.tobytes()

    def test_text_feature_equals_encoder_alone(self, rng):
        theta = init_networks(SPEC, 0)[0]
        alpha, z = inputs(rng)
        _, s = g1_forward(theta, alpha, z)
        alone = nd.leaky_relu(nd.matmul(alpha, theta["encoder.weight"]) + theta["encoder.bias"], 0.2)
        assert s.data.tobytes() == encode_text(theta, alpha).data.tobytes() == alone.data.tobytes()

    def test_attribute_mode_bypasses_encoder(self, rng):
        spec = NetSpec(d_s=6, d_v=5, num_classes=3, d_noise=3, d_hidden=7, d_hidden_disc=8, attribute_mode=True)
        theta = init_networks(spec, 0)[0]
        assert "encoder.weight" not in theta
        alpha, z = inputs(rng, spec=spec)
        x_hat, s = g1_forward(theta, alpha, z)
        assert s is alpha
        assert theta["layer1.weight"].shape[0] == 6 + 3

    def test_shape_mismatch(self, rng):
        theta = init_networks(SPEC, 0)[0]
        with pytest.raises(nd.DimensionError):
            g1_forward(theta, Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 3))))
        with pytest.raises(nd.DimensionError):
            g1_forward(theta, Tensor(np.zeros((2, 6))), Tensor(np.zeros((3, 3))))


class TestDiscriminators:
    def test_shapes(self, rng):
        _, w, _, zeta = init_networks(SPEC, 0)
        critic, logits = d1_forward(w, Tensor(rng.standard_normal((4, 5))))
        assert critic.shape == (4,) and logits.shape == (4, 3)
        critic, logits = d2_forward(zeta, Tensor(rng.standard_normal((2, SPEC.d_text_out))))
        assert critic.shape == (2,) and logits.shape == (2, 3)

    def test_doubling_weights_scales_critic_fourfold(self):
        spec = NetSpec(d_s=2, d_v=2, num_classes=2, d_hidden_disc=1)
        w = init_networks(spec, 0)[1]
        w["trunk.weight"].data = np.array([[1.0], [1.0]])
        w["critic.weight"].data = np.array([[2.0]])
        x = Tensor([[0.5, 1.5]])  # trunk activation 2 > 0
        base = d1_forward(w, x)[0].data[0]
        w["trunk.weight"].data *= 2
        w["critic.weight"].data *= 2
        assert base == pytest.approx(4.0)
        assert d1_forward(w, x)[0].data[0] == pytest.approx(4 * base)

    def test_zero_weights(self, rng):
        _, w, _, _ = init_networks(SPEC, 0)
        for t in w.values():
            t.data = np.zeros_like(t.data)
        critic, logits = d1_forward(w, Tensor(rng.standard_normal((3, 5))))
        np.testing.assert_array_equal(critic.data, 0)
        np.testing.assert_allclose(nd.softmax(logits).data, 1 / 3)

    def test_d2_zero_input_zero_critic(self):
        zeta = init_networks(SPEC, 0)[3]
        critic, _ = d2_forward(zeta, Tensor(np.zeros((2, SPEC.d_text_out))))
        np.testing.assert_array_equal(critic.data, 0)

    def test_d2_deterministic(self, rng):
        zeta = init_networks(SPEC, 0)[3]
        t = Tensor(rng.standard_normal((3, SPEC.d_text_out)))
        assert d2_forward(zeta, t)[0].data.tobytes() == d2_forward(zeta, t)[0].data.tobytes()


class TestG2:
    def test_range_shape_determinism(self, rng):
        delta = init_networks(SPEC, 0)[2]
        x = Tensor(rng.standard_normal((4, 5)) * 50)
        z = Tensor(rng.standard_normal((4, 3)))
        out = g2_forward(delta, x, z)
        assert out.shape == (4, SPEC.d_text_out)
        assert np.all(np.abs(out.data) <= 1.0)
        assert out.data.tobytes() == g2_forward(delta, x, z).data.tobytes()
