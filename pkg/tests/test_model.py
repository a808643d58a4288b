import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference_check, randomize_
from scipy.special import comb

from eat_audio.losses import bce_loss, smoothed_ce_loss
from eat_audio.model import (
    AntiAliasedDownsample,
    ChannelNorm,
    DilatedResidualStack,
    EatConfig,
    EncoderLayer,
    ModifiedResidualBlock,
    MultiHeadSelfAttention,
    PlainResidualBlock,
    TransformerEncoder,
    binomial_kernel,
    build,
    eat_m,
    eat_s,
    forward,
    min_input_length,
    param_count,
    value_and_grad,
)

D = torch.float64
TOL = 1e-4


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


def tiny(**kw):
    base = dict(base_channels=2, downsample_factors=(4, 4), dilated_stages=1, res_blocks_per_stage=1, dw_kernel=5,
                expansion=2, dilations=(1, 3), embed_dim=8, transformer_layers=1, transformer_heads=2, mlp_ratio=2,
                max_frames=64, num_classes=3)
    return EatConfig(**{**base, **kw})


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(embed_dim=10, transformer_heads=4), dict(downsample_factors=()),
                                     dict(dw_kernel=4), dict(residual="x"), dict(head="x"), dict(num_classes=0),
                                     dict(dilated_stages=5)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            EatConfig(**bad)

    def test_decimation(self):
        assert EatConfig().decimation == 256

    def test_round_trip_dict(self):
        cfg = eat_m(10, multi_label=True)
        assert EatConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            EatConfig.from_dict({"bogus": 1})

    def test_frames_5s(self):
        assert EatConfig().frames_for(110250) == 431
        assert abs(EatConfig().frames_for(110250) - 110250 / 256) < 1

    def test_min_input_length(self):
        cfg = EatConfig()
        assert min_input_length(cfg) == 256
        assert cfg.frames_for(min_input_length(cfg)) == 1


class TestParamCounts:
    def test_eat_s(self):
        assert param_count(build(eat_s())) == pytest.approx(5.3e6, rel=0.15)

    def test_eat_m(self):
        assert param_count(build(eat_m())) == pytest.approx(25.5e6, rel=0.15)

    def test_count_is_config_function(self):
        assert param_count(build(tiny(), 0)) == param_count(build(tiny(), 99))

    def test_same_seed_identical(self):
        a, b = build(tiny(), 5), build(tiny(), 5)
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), n


class TestDownsample:
    @pytest.mark.parametrize("f", [1, 2, 3, 4, 5])
    def test_binomial_closed_form(self, f):
        k = binomial_kernel(f).double().numpy()
        n = 2 * f - 2
        np.testing.assert_allclose(k, comb(n, np.arange(n + 1)) / 2**n, atol=1e-7)
        assert k.size == 2 * f - 1

    def test_impulse_response(self):
        blk = AntiAliasedDownsample(1, 1, 4).double()
        x = torch.zeros(1, 1, 64, dtype=D)
        x[0, 0, 33] = 1.0  # odd offset samples every kernel phase after decimation
        ref = comb(6, np.arange(7)) / 64
        # decimation keeps taps at indices congruent to the impulse position
        y = blk.lowpass(x)[0, 0].numpy()
        nz = y[np.abs(y) > 0]
        assert set(np.round(nz, 12)) <= set(np.round(ref, 12))
        assert nz.sum() == pytest.approx(ref[np.arange(7) % 4 == (33 + 3) % 4].sum())

    def test_dc_preserved(self):
        blk = AntiAliasedDownsample(3, 3, 4).double()
        x = torch.full((1, 3, 256), 0.7, dtype=D)
        y = blk.lowpass(x)
        assert torch.allclose(y[..., 2:-2], torch.full_like(y[..., 2:-2], 0.7), atol=1e-12)

    @given(st.integers(4, 500), st.integers(1, 5))
    @settings(max_examples=30)
    def test_output_length(self, n, f):
        if n < f:
            return
        blk = AntiAliasedDownsample(1, 2, f)
        assert blk(torch.zeros(1, 1, n)).shape[-1] == math.ceil(n / f)

    def test_too_short(self):
        with pytest.raises(ValueError):
            AntiAliasedDownsample(1, 2, 4)(torch.zeros(1, 1, 3))

    def test_gradcheck(self):
        blk = AntiAliasedDownsample(2, 3, 4).double()
        x = torch.randn(2, 2, 40, dtype=D, generator=gen())
        assert central_difference_check(lambda: blk(x).pow(2).sum(), list(blk.parameters())) < TOL


class TestResidual:
    def test_identity_at_init(self):
        blk = ModifiedResidualBlock(6, 7, 4).double()
        x = torch.randn(2, 6, 30, dtype=D, generator=gen())
        assert torch.equal(blk(x), x)

    def test_shape_and_channel_check(self):
        blk = ModifiedResidualBlock(6)
        assert blk(torch.randn(1, 6, 20)).shape == (1, 6, 20)
        with pytest.raises(ValueError):
            blk(torch.randn(1, 5, 20))

    def test_depthwise(self):
        blk = ModifiedResidualBlock(6)
        assert blk.dw.groups == 6 and blk.pw1.kernel_size == (1,) and blk.pw2.kernel_size == (1,)

    def test_gradcheck_modified(self):
        blk = ModifiedResidualBlock(3, 5, 2).double()
        randomize_(blk)
        x = torch.randn(2, 3, 16, dtype=D, generator=gen())
        assert central_difference_check(lambda: blk(x).pow(2).sum(), list(blk.parameters())) < TOL

    def test_gradcheck_plain(self):
        blk = PlainResidualBlock(3).double()
        randomize_(blk)
        x = torch.randn(2, 3, 16, dtype=D, generator=gen())
        assert central_difference_check(lambda: blk(x).pow(2).sum(), list(blk.parameters())) < TOL


class TestDilated:
    def test_receptive_field_formula(self):
        assert DilatedResidualStack(4, (1, 3, 9), 3).receptive_field == 1 + 2 * (1 + 3 + 9)

    def test_receptive_field_measured(self):
        stack = DilatedResidualStack(4, (1, 3, 9), 3).double()
        randomize_(stack)
        x = torch.randn(1, 4, 101, dtype=D, generator=gen())
        x2 = x.clone()
        # a constant across channels would be cancelled by the per-frame norm
        x2[0, :, 50] += torch.tensor([1.0, -0.5, 0.3, 2.0], dtype=D)
        changed = (stack(x2) - stack(x)).abs().sum(dim=1)[0] > 1e-12
        idx = torch.nonzero(changed).flatten()
        assert idx.min().item() == 50 - 13 and idx.max().item() == 50 + 13

    def test_identity_at_init(self):
        stack = DilatedResidualStack(4).double()
        x = torch.randn(1, 4, 50, dtype=D, generator=gen())
        assert torch.equal(stack(x), x)

    def test_gradcheck(self):
        stack = DilatedResidualStack(3, (1, 3)).double()
        randomize_(stack)
        x = torch.randn(1, 3, 20, dtype=D, generator=gen())
        assert central_difference_check(lambda: stack(x).pow(2).sum(), list(stack.parameters())) < TOL


class TestAttention:
    def test_rows_sum_to_one(self):
        att = MultiHeadSelfAttention(16, 4).double()
        w = att.attention_weights(torch.randn(3, 10, 16, dtype=D, generator=gen()))
        assert torch.allclose(w.sum(-1), torch.ones(3, 4, 10, dtype=D), atol=1e-6)

    def test_permutation_equivariance(self):
        enc = TransformerEncoder(8, 2, 2, positional=False).double()
        x = torch.randn(2, 7, 8, dtype=D, generator=gen())
        perm = torch.randperm(7, generator=gen(3))
        assert torch.allclose(enc(x)[:, perm], enc(x[:, perm]), atol=1e-12)

    def test_positional_breaks_equivariance(self):
        enc = TransformerEncoder(8, 1, 2).double()
        x = torch.randn(1, 7, 8, dtype=D, generator=gen())
        perm = torch.arange(6, -1, -1)
        assert not torch.allclose(enc(x)[:, perm], enc(x[:, perm]))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            TransformerEncoder(8, 1, 2)(torch.randn(1, 4, 6))

    def test_gradcheck_attention(self):
        att = MultiHeadSelfAttention(8, 2).double()
        randomize_(att)
        x = torch.randn(1, 4, 8, dtype=D, generator=gen())
        assert central_difference_check(lambda: att(x).pow(2).sum(), list(att.parameters())) < TOL

    def test_gradcheck_encoder_layer(self):
        layer = EncoderLayer(8, 2, 2).double()
        randomize_(layer)
        x = torch.randn(1, 4, 8, dtype=D, generator=gen())
        assert central_difference_check(lambda: layer(x).pow(2).sum(), list(layer.parameters())) < TOL


class TestPrimitiveGrads:
    def test_channel_norm(self):
        norm = ChannelNorm(5).double()
        randomize_(norm)
        x = torch.randn(2, 5, 6, dtype=D, generator=gen())
        w = torch.randn(2, 5, 6, dtype=D, generator=gen(1))
        assert central_difference_check(lambda: (norm(x) * w).sum(), list(norm.parameters())) < TOL

    def test_input_gradients(self):
        # adjoint w.r.t. the data path too: conv, GELU, pooling, linear
        model = build(tiny(), 0, D)
        randomize_(model)
        x = torch.randn(1, 300, dtype=D, generator=gen()).requires_grad_(True)
        assert central_difference_check(lambda: model(x).pow(2).sum(), [x]) < TOL

    def test_smoothed_ce(self):
        z = torch.randn(3, 4, dtype=D, generator=gen()).requires_grad_(True)
        assert central_difference_check(lambda: smoothed_ce_loss(z, [0, 3, 1]), [z]) < TOL

    def test_bce(self):
        z = torch.randn(3, 4, dtype=D, generator=gen()).requires_grad_(True)
        t = torch.rand(3, 4, dtype=D, generator=gen(1))
        assert central_difference_check(lambda: bce_loss(z, t), [z]) < TOL


class TestModel:
    @pytest.mark.parametrize("n", [256, 1000, 4097])
    def test_output_shape(self, n):
        model = build(tiny(max_frames=512))
        assert forward(model, np.zeros((2, n))).shape == (2, 3)

    @given(st.integers(16, 3000), st.sampled_from([(4, 4), (2, 3), (5,), (4, 2, 2)]))
    @settings(max_examples=20)
    def test_shape_algebra(self, n, factors):
        cfg = tiny(downsample_factors=factors, dilated_stages=1, max_frames=2048)
        model = build(cfg)
        expected = n
        for d in factors:
            expected = -(-expected // d)
        assert model.features(torch.zeros(1, n)).shape == (1, expected, 8)
        assert cfg.frames_for(n) == expected

    def test_default_frames_5s(self):
        model = build(EatConfig(base_channels=4, embed_dim=16, transformer_heads=2, transformer_layers=1,
                                res_blocks_per_stage=0))
        assert model.features(torch.zeros(1, 110250)).shape[1] == 431

    def test_identical_rows(self):
        x = np.random.default_rng(0).standard_normal(500)
        out = forward(build(tiny(), 0, D).eval(), np.stack([x, x]))
        assert torch.equal(out[0], out[1])
        # float32 batched kernels may round rows differently by an ulp
        out = forward(build(tiny()).eval(), np.stack([x, x]))
        assert torch.allclose(out[0], out[1], rtol=1e-6, atol=1e-6)

    def test_eval_deterministic(self):
        model = build(tiny()).eval()
        x = np.random.default_rng(0).standard_normal((2, 700))
        assert torch.equal(forward(model, x), forward(model, x))

    def test_trunk_is_downsampling_at_init(self):
        model = build(tiny(), 0, D)
        x = torch.randn(1, 1, 640, dtype=D, generator=gen())
        y = x
        for stage in model.stages:
            y = stage[0](y)
        z = x
        for stage in model.stages:
            z = stage(z)
        assert torch.equal(y, z)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            build(tiny(in_channels=2))(torch.zeros(1, 1, 300))

    def test_two_channel_input(self):
        assert build(tiny(in_channels=2))(torch.zeros(1, 2, 300)).shape == (1, 3)

    @pytest.mark.parametrize("kw", [dict(residual="plain"), dict(head="conv_pool"), dict(dilated=False),
                                    dict(positional=False)])
    def test_ablation_variants_run(self, kw):
        model = build(tiny(**kw))
        assert forward(model, np.zeros((1, 400))).shape == (1, 3)

    def test_ablation_structure(self):
        assert build(tiny(head="conv_pool")).encoder is None
        plain = build(tiny(residual="plain"))
        assert any(isinstance(m, PlainResidualBlock) for m in plain.modules())
        nodil = build(tiny(dilated=False))
        assert all(m.conv.dilation == (1,) for m in nodil.modules() if hasattr(m, "conv") and
                   type(m).__name__ == "DilatedResidualBlock")


class TestValueAndGrad:
    def test_full_tiny_gradcheck(self):
        model = build(tiny(), 0, D)
        randomize_(model)
        x = torch.randn(2, 1000, dtype=D, generator=gen())
        y = torch.tensor([0, 2])
        vg = value_and_grad(model, x, y)
        for name, p in model.named_parameters():
            assert vg.grads[name].shape == p.shape
        from eat_audio.losses import loss_fn

        err = central_difference_check(lambda: loss_fn("smoothed_ce", model(x), y), list(model.parameters()))
        assert err < TOL

    def test_uniform_logits_log_c(self):
        model = build(tiny(num_classes=5), 0, D)
        with torch.no_grad():
            model.classifier.weight.zero_()
            model.classifier.bias.zero_()
        vg = value_and_grad(model, np.zeros((2, 300)), [1, 4], "smoothed_ce", 0.1)
        assert vg.value == pytest.approx(math.log(5), abs=1e-12)

    def test_duplicated_rows(self):
        model = build(tiny(), 0, D)
        randomize_(model)
        x = np.random.default_rng(0).standard_normal((1, 400))
        one = value_and_grad(model, x, [1])
        two = value_and_grad(model, np.concatenate([x, x]), [1, 1])
        assert two.value == pytest.approx(one.value, rel=1e-12)
        for k in one.grads:
            assert torch.allclose(one.grads[k], two.grads[k], rtol=1e-10, atol=1e-14)

    def test_non_finite(self):
        model = build(tiny(), 0, D)
        with torch.no_grad():
            model.classifier.bias.fill_(float("inf"))
        with pytest.raises(FloatingPointError):
            value_and_grad(model, np.zeros((1, 300)), [0])
