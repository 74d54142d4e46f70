"""Network assembly: shapes, frozen parameter counts, checkpoints, optimizer."""

import numpy as np
import pytest

from mrfnln import tensor as T
from mrfnln.attention import SamplerSpec
from mrfnln.checkpoint import load_checkpoint, read_entries, save_checkpoint, write_entries
from mrfnln.errors import (
    CheckpointMagicError,
    CheckpointParamMismatchError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    ShapeMismatchError,
)
from mrfnln.gradcheck import max_rel_error
from mrfnln.network import DehazeNetwork, NetworkConfig, build_network, preset
from mrfnln.optim import Adam, cosine_lr
from mrfnln.tensor import Tensor

from dataclasses import replace

from test_blocks import conv_params, expected_params


def deconv_params(cin, cout, k):
    return cin * cout * k * k + cout


def expected_network_params(cfg: NetworkConfig) -> int:
    """Closed-form total, summed independently of the module tree."""
    c1, c2, c3 = cfg.level_widths
    d = cfg.stage_depths
    kinds = cfg.block_kinds
    total = (
        conv_params(3, c1, 3)
        + conv_params(c1, c2, 4)
        + conv_params(c2, c3, 4)
        + deconv_params(c3, c2, 4)
        + deconv_params(c2, c1, 4)
        + conv_params(c1, 3, 3)
    )
    widths = (c1, c2, c3, c2, c1)
    for kind, width, depth in zip(kinds, widths, d):
        copies = 1 if cfg.recursion == "shared" else depth
        total += copies * expected_params(kind, width, cfg.ca_reduction,
                                          cfg.sa_reduction)
    if cfg.attention in ("nlb", "cnlb"):
        e = c3 // 2
        total += 3 * conv_params(c3, e, 1) + conv_params(e, c3, 1)
    if cfg.attention == "cnlb":
        total += conv_params(c3 * d[2], c3, 1)
    return total


class TestParameterCounts:
    @pytest.mark.parametrize("name,frozen", [("B", 1200340), ("L", 1265876),
                                             ("tiny", 73784)])
    def test_presets_match_closed_form_and_frozen_constants(self, name, frozen):
        cfg = preset(name)
        model = build_network(cfg, seed=0)
        assert model.param_count() == expected_network_params(cfg) == frozen

    def test_base_analog_frozen_constant(self):
        cfg = replace(preset("B"),
                      block_kinds=("rb", "rb", "fab", "rb", "rb"),
                      attention="none")
        model = build_network(cfg, seed=0)
        assert model.param_count() == expected_network_params(cfg) == 822164

    def test_depth_growth_only_adds_fusion_width(self):
        # B -> L doubles every stage depth; with shared weights the only new
        # parameters are the wider key/value fusion conv: 4 * (4C)^2 weights.
        b = build_network(preset("B"), seed=0).param_count()
        l = build_network(preset("L"), seed=0).param_count()
        assert l - b == 4 * 128 * 128

    def test_independent_recursion_multiplies_blocks(self):
        shared = build_network(preset("tiny"), seed=0).param_count()
        indep_cfg = replace(preset("tiny"), recursion="independent")
        indep = build_network(indep_cfg, seed=0).param_count()
        # tiny depths (1,1,2,1,1): one extra level-3 block copy.
        assert indep - shared == expected_params("msfab", 32)

    def test_nlb_attention_param_count(self):
        cfg = replace(preset("B"), attention="nlb")
        model = build_network(cfg, seed=0)
        # q/k/v (128->64) plus projection (64->128), biases included.
        delta = model.param_count() - build_network(
            replace(cfg, attention="none"), seed=0).param_count()
        assert delta == 3 * (128 * 64 + 64) + (64 * 128 + 128) == 33088


class TestForward:
    @pytest.mark.parametrize("attention", ["none", "nlb", "cnlb"])
    def test_output_matches_input_shape_on_multiple_of_16(self, attention):
        cfg = replace(preset("tiny"), attention=attention)
        model = build_network(cfg, seed=1)
        x = Tensor(np.random.default_rng(0).random((2, 3, 32, 32), dtype=np.float32))
        with T.no_grad():
            y = model(x)
        assert y.shape == x.shape

    @pytest.mark.parametrize("hw", [(60, 60), (17, 23), (33, 48)])
    def test_padding_handles_awkward_sizes(self, hw):
        model = build_network(preset("tiny"), seed=1)
        x = Tensor(np.random.default_rng(0).random((1, 3) + hw, dtype=np.float32))
        with T.no_grad():
            y = model(x)
        assert y.shape == x.shape

    def test_fresh_network_outputs_zero_image(self):
        model = build_network(preset("tiny"), seed=3)
        x = Tensor(np.random.default_rng(1).random((1, 3, 32, 32), dtype=np.float32))
        with T.no_grad():
            y = model(x)
        assert np.array_equal(y.data, np.zeros_like(y.data))

    def test_global_residual_makes_fresh_network_identity(self):
        cfg = replace(preset("tiny"), global_residual=True)
        model = build_network(cfg, seed=3)
        x = Tensor(np.random.default_rng(1).random((1, 3, 30, 30), dtype=np.float32))
        with T.no_grad():
            y = model(x)
        assert np.array_equal(y.data, x.data)
        # the flag adds no parameters
        assert model.param_count() == build_network(preset("tiny")).param_count()

    def test_same_seed_same_params_different_seed_different(self):
        a = build_network(preset("tiny"), seed=7)
        b = build_network(preset("tiny"), seed=7)
        c = build_network(preset("tiny"), seed=8)
        for (ka, pa), (_, pb), (_, pc) in zip(a.named_parameters(),
                                              b.named_parameters(),
                                              c.named_parameters()):
            assert np.array_equal(pa.data, pb.data), ka
        assert any(not np.array_equal(pa.data, pc.data)
                   for (_, pa), (_, pc) in zip(a.named_parameters(),
                                               c.named_parameters()))

    def test_empty_batch_rejected(self):
        model = build_network(preset("tiny"), seed=0)
        with pytest.raises(ShapeMismatchError):
            model(Tensor(np.zeros((0, 3, 32, 32), dtype=np.float32)))

    def test_wrong_channel_count_rejected(self):
        model = build_network(preset("tiny"), seed=0)
        with pytest.raises(ShapeMismatchError):
            model(Tensor(np.zeros((1, 4, 32, 32), dtype=np.float32)))

    def test_spp_sampler_variant_runs(self):
        cfg = replace(preset("tiny"), sampler=SamplerSpec("spp"))
        model = build_network(cfg, seed=0)
        x = Tensor(np.random.default_rng(2).random((1, 3, 64, 64), dtype=np.float32))
        with T.no_grad():
            assert model(x).shape == x.shape

    def test_gradients_reach_every_parameter(self):
        model = build_network(preset("tiny"), seed=5)
        x = Tensor(np.random.default_rng(3).random((1, 3, 16, 16), dtype=np.float32))
        target = Tensor(np.random.default_rng(4).random((1, 3, 16, 16),
                                                        dtype=np.float32))
        loss = T.mean_abs_diff(model(x), target)
        loss.backward()
        grads = [(k, p.grad) for k, p in model.named_parameters()]
        missing = [k for k, g in grads if g is None]
        assert not missing, f"no gradient for {missing}"
        # The exit head is zero-initialized, so earlier layers only see signal
        # through its weight gradient; still, every array must be populated.
        assert all(g.shape == p.data.shape
                   for (_, g), (_, p) in zip(grads, model.named_parameters()))


class TestNetworkGradcheckSmoke:
    def test_sampled_finite_difference_on_micro_model(self, rng):
        cfg = NetworkConfig(base_channels=8, stage_depths=(1, 1, 1, 1, 1),
                            dtype="f64")
        model = build_network(cfg, seed=11)
        # Give the zero exit head signal, otherwise its input grads vanish.
        model.exit.weight.data = rng.standard_normal(
            model.exit.weight.shape) * 0.05
        x = Tensor(rng.random((1, 3, 16, 16)), requires_grad=True,
                   dtype=np.float64)
        target = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)
        tensors = {"input": x}
        tensors.update(dict(model.named_parameters()))
        errs = max_rel_error(lambda: T.mean_abs_diff(model(x), target), tensors,
                             component_limit=2, rng=rng)
        assert max(errs.values()) < 1e-3, errs


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            NetworkConfig(stage_depths=(1, 2, 4, 2))
        with pytest.raises(ConfigError):
            NetworkConfig(stage_depths=(1, 2, 0, 2, 1))
        with pytest.raises(ConfigError):
            NetworkConfig(attention="global")
        with pytest.raises(ConfigError):
            NetworkConfig(recursion="looped")
        with pytest.raises(ConfigError):
            NetworkConfig(block_kinds=("rb", "rb", "dense", "rb", "rb"))
        with pytest.raises(ConfigError):
            preset("XL")


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path):
        model = build_network(preset("tiny"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, step=42)
        other = build_network(preset("tiny"), seed=999)
        step = load_checkpoint(path, other)
        assert step == 42
        for (k, a), (_, b) in zip(model.named_parameters(),
                                  other.named_parameters()):
            assert np.array_equal(a.data, b.data), k

    def test_optimizer_state_round_trip(self, tmp_path, rng):
        model = build_network(preset("tiny"), seed=0)
        opt = Adam(dict(model.named_parameters()))
        x = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))
        tgt = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))
        for _ in range(2):
            model.zero_grad()
            T.mean_abs_diff(model(x), tgt).backward()
            opt.step(1e-3)
        path = tmp_path / "with_opt.ckpt"
        save_checkpoint(path, model, step=2, optimizer=opt)
        model2 = build_network(preset("tiny"), seed=5)
        opt2 = Adam(dict(model2.named_parameters()))
        assert load_checkpoint(path, model2, optimizer=opt2) == 2
        assert opt2.t == opt.t
        for k in opt.m:
            assert np.array_equal(opt.m[k], opt2.m[k])
            assert np.array_equal(opt.v[k], opt2.v[k])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"JUNKxxxxxxxxxxxx")
        with pytest.raises(CheckpointMagicError):
            read_entries(p)

    def test_unknown_version(self, tmp_path):
        p = tmp_path / "v9.ckpt"
        import struct
        p.write_bytes(b"MRFN" + struct.pack("<II", 9, 0))
        with pytest.raises(CheckpointVersionError):
            read_entries(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "trunc.ckpt"
        write_entries(p, {"a": np.zeros((4, 4), dtype=np.float32)})
        blob = p.read_bytes()
        p.write_bytes(blob[:-10])
        with pytest.raises(CheckpointTruncatedError):
            read_entries(p)

    def test_param_name_mismatch(self, tmp_path):
        model = build_network(preset("tiny"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, step=0)
        other = build_network(replace(preset("tiny"), attention="none"), seed=0)
        with pytest.raises(CheckpointParamMismatchError):
            load_checkpoint(path, other)

    def test_shape_mismatch(self, tmp_path):
        cfg_a = NetworkConfig(base_channels=8, stage_depths=(1, 1, 2, 1, 1))
        cfg_b = NetworkConfig(base_channels=16, stage_depths=(1, 1, 2, 1, 1))
        model = build_network(cfg_a, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, step=0)
        with pytest.raises(CheckpointParamMismatchError):
            load_checkpoint(path, build_network(cfg_b, seed=0))


class TestOptim:
    def test_cosine_schedule_endpoints_and_monotonicity(self):
        lrs = [cosine_lr(t, 100, 2e-4, 1e-6) for t in range(101)]
        assert lrs[0] == pytest.approx(2e-4)
        assert lrs[-1] == pytest.approx(1e-6)
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert lrs[50] == pytest.approx(0.5 * (2e-4 + 1e-6))

    def test_adam_minimizes_quadratic(self):
        w = Tensor(np.array([5.0, -3.0]), requires_grad=True, dtype=np.float64)
        opt = Adam({"w": w})
        for _ in range(400):
            w.grad = None
            loss = T.tsum(T.mul(w, w))
            loss.backward()
            opt.step(5e-2)
        assert np.abs(w.data).max() < 1e-3

    def test_resume_reproduces_training_bitwise(self, tmp_path, rng):
        def fresh():
            return build_network(preset("tiny"), seed=21)

        x = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))
        tgt = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))

        def run_steps(model, opt, n):
            for _ in range(n):
                model.zero_grad()
                T.mean_abs_diff(model(x), tgt).backward()
                opt.step(1e-3)

        straight = fresh()
        opt_a = Adam(dict(straight.named_parameters()))
        run_steps(straight, opt_a, 5)

        resumed = fresh()
        opt_b = Adam(dict(resumed.named_parameters()))
        run_steps(resumed, opt_b, 3)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(path, resumed, step=3, optimizer=opt_b)
        restored = fresh()
        opt_c = Adam(dict(restored.named_parameters()))
        load_checkpoint(path, restored, optimizer=opt_c)
        run_steps(restored, opt_c, 2)

        for (k, a), (_, b) in zip(straight.named_parameters(),
                                  restored.named_parameters()):
            assert np.array_equal(a.data, b.data), k
