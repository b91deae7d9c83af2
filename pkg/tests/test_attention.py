import numpy as np
import pytest

from dfpn.attention import (
    AttentionParams,
    cbam,
    cbam_backward,
    channel_attention,
    channel_attention_backward,
    spatial_attention,
    spatial_attention_backward,
)
from dfpn.gradcheck import STEP, max_rel_err, numerical_grad
from dfpn.layers import ConvParams


def make_params(rng, c=8, ratio=2, k=5, zero=False):
    def arr(shape, scale=1.0):
        return np.zeros(shape) if zero else rng.standard_normal(shape) * scale

    return AttentionParams(
        mlp0=ConvParams(arr((c // ratio, c, 1, 1)), arr((c // ratio,), 0.1)),
        mlp1=ConvParams(arr((c, c // ratio, 1, 1)), arr((c,), 0.1)),
        spatial=ConvParams(arr((1, 2, k, k), 0.3), arr((1,), 0.1)),
        ratio=ratio,
    )


class TestChannelAttention:
    def test_zero_params_halve_input(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 8, 4, 4))
        out = channel_attention(x, make_params(rng, zero=True))
        assert np.allclose(out, x / 2)

    def test_identical_channels_get_equal_weights(self):
        # permutation symmetry: channel-symmetric parameters (equal output
        # rows) plus channel-identical input must gate every channel equally
        rng = np.random.default_rng(1)
        base = make_params(rng)
        p = AttentionParams(
            mlp0=base.mlp0,
            mlp1=ConvParams(np.tile(base.mlp1.weight[:1], (8, 1, 1, 1)), np.full(8, 0.3)),
            spatial=base.spatial,
            ratio=base.ratio,
        )
        plane = rng.standard_normal((1, 1, 5, 5))
        x = np.tile(plane, (1, 8, 1, 1))
        weights = channel_attention(x, p) / x
        assert np.allclose(weights, weights[:, :1], atol=1e-12)

    def test_ratio_must_divide_channels(self):
        rng = np.random.default_rng(2)
        p = make_params(rng, c=8, ratio=3)
        with pytest.raises(ValueError, match="ratio"):
            channel_attention(np.zeros((1, 8, 4, 4)), p)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        p = make_params(rng, c=8, ratio=2)
        x = rng.uniform(-4.0, 4.0, size=(1, 8, 4, 4))
        proj = rng.standard_normal(x.shape)
        loss = lambda: float((channel_attention(x, p) * proj).sum())
        g = channel_attention_backward(x, p, proj)
        assert max_rel_err(g.d_input, numerical_grad(loss, x, STEP)) < 1e-3
        assert max_rel_err(g.mlp0.d_weight, numerical_grad(loss, p.mlp0.weight, STEP)) < 1e-3
        assert max_rel_err(g.mlp1.d_weight, numerical_grad(loss, p.mlp1.weight, STEP)) < 1e-3
        assert max_rel_err(g.mlp1.d_bias, numerical_grad(loss, p.mlp1.bias, STEP)) < 1e-3

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        p = make_params(rng, c=8, ratio=2)
        x = rng.standard_normal((1, 8, 4, 4))
        perm = rng.permutation(8)
        permuted_params = AttentionParams(
            mlp0=ConvParams(p.mlp0.weight[:, perm], p.mlp0.bias),
            mlp1=ConvParams(p.mlp1.weight[perm], p.mlp1.bias[perm]),
            spatial=p.spatial,
            ratio=p.ratio,
        )
        assert np.allclose(channel_attention(x, p)[:, perm], channel_attention(x[:, perm], permuted_params))


class TestSpatialAttention:
    def test_zero_params_halve_input(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 6, 6))
        out = spatial_attention(x, make_params(rng, zero=True))
        assert np.allclose(out, x / 2)

    def test_constant_input_gets_constant_interior_map(self):
        rng = np.random.default_rng(6)
        p = make_params(rng, c=4, k=3)
        x = np.full((1, 4, 8, 8), 0.6)
        gate = spatial_attention(x, p) / x
        interior = gate[:, :, 1:-1, 1:-1]
        assert np.allclose(interior, interior[0, 0, 0, 0])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        p = make_params(rng, c=4, ratio=2, k=5)
        x = rng.uniform(-4.0, 4.0, size=(1, 4, 6, 6))
        proj = rng.standard_normal(x.shape)
        loss = lambda: float((spatial_attention(x, p) * proj).sum())
        g = spatial_attention_backward(x, p, proj)
        assert max_rel_err(g.d_input, numerical_grad(loss, x, STEP)) < 1e-3
        assert max_rel_err(g.spatial.d_weight, numerical_grad(loss, p.spatial.weight, STEP)) < 1e-3
        assert max_rel_err(g.spatial.d_bias, numerical_grad(loss, p.spatial.bias, STEP)) < 1e-3


class TestCbam:
    def test_mode_none_is_identity(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 8, 4, 4))
        assert np.array_equal(cbam(x, make_params(rng), "none"), x)

    def test_mode_both_zero_params_quarter_input(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 8, 4, 4))
        assert np.allclose(cbam(x, make_params(rng, zero=True), "both"), x / 4)

    def test_both_equals_manual_composition(self):
        rng = np.random.default_rng(10)
        p = make_params(rng)
        x = rng.standard_normal((1, 8, 5, 5))
        assert np.allclose(cbam(x, p, "both"), spatial_attention(channel_attention(x, p), p))

    def test_single_modes(self):
        rng = np.random.default_rng(11)
        p = make_params(rng)
        x = rng.standard_normal((1, 8, 5, 5))
        assert np.allclose(cbam(x, p, "channel"), channel_attention(x, p))
        assert np.allclose(cbam(x, p, "spatial"), spatial_attention(x, p))
        with pytest.raises(ValueError, match="mode"):
            cbam(x, p, "bogus")

    def test_shape_preserved_and_weights_in_unit_interval(self):
        rng = np.random.default_rng(12)
        p = make_params(rng)
        x = rng.uniform(0.5, 1.5, size=(2, 8, 6, 6))
        for mode in ("none", "channel", "spatial", "both"):
            out = cbam(x, p, mode)
            assert out.shape == x.shape
            if mode != "none":
                gates = out / x  # product of sigmoid gates applied to positive x
                assert np.all(gates > 0) and np.all(gates < 1)

    def test_backward_composition_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        p = make_params(rng, c=8, ratio=2, k=5)
        x = rng.uniform(-4.0, 4.0, size=(1, 8, 5, 5))
        proj = rng.standard_normal(x.shape)
        for mode in ("channel", "spatial", "both"):
            loss = lambda: float((cbam(x, p, mode) * proj).sum())
            g = cbam_backward(x, p, mode, proj)
            assert max_rel_err(g.d_input, numerical_grad(loss, x, STEP)) < 1e-3
