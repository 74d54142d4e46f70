"""Perceptual tower structure and the hazy/clean proxy fit."""

import numpy as np
import pytest

from mrfnln.errors import ConfigError
from mrfnln.hazesynth import make_dataset, load_pairs
from mrfnln.perceptual import (
    POOL_AFTER,
    STAGE_CONV_COUNTS,
    STAGE_WIDTHS,
    TOTAL_CONVS,
    PerceptualExtractor,
    load_proxy,
    save_proxy,
    train_proxy,
)
from mrfnln.tensor import Tensor

from test_blocks import conv_params


class TestArchitecture:
    def test_thirteen_convs_pooled_between_stages(self):
        assert TOTAL_CONVS == 13
        assert POOL_AFTER == {2, 4, 7, 10}
        model = PerceptualExtractor(seed=0)
        assert len(model.convs) == 13
        widths = [c.weight.shape[0] for c in model.convs]
        expected = [w for w, n in zip(STAGE_WIDTHS, STAGE_CONV_COUNTS)
                    for _ in range(n)]
        assert widths == expected

    def test_param_count_frozen(self):
        model = PerceptualExtractor(seed=0)
        total = conv_params(3, 16, 3) + conv_params(16, 16, 3)
        total += conv_params(16, 32, 3) + conv_params(32, 32, 3)
        total += conv_params(32, 64, 3) + 2 * conv_params(64, 64, 3)
        total += 6 * conv_params(64, 64, 3)
        total += conv_params(64, 1, 1)
        assert model.param_count() == total == 330641

    def test_feature_tap_shapes(self):
        model = PerceptualExtractor(seed=0)
        x = Tensor(np.random.default_rng(0).random((2, 3, 32, 32),
                                                   dtype=np.float32))
        feats = model.features(x, taps=(1, 3, 5, 9, 13))
        assert feats[1].shape == (2, 16, 32, 32)
        assert feats[3].shape == (2, 32, 16, 16)
        assert feats[5].shape == (2, 64, 8, 8)
        assert feats[9].shape == (2, 64, 4, 4)
        assert feats[13].shape == (2, 64, 2, 2)

    def test_features_stop_at_deepest_tap(self):
        model = PerceptualExtractor(seed=0)
        x = Tensor(np.random.default_rng(1).random((1, 3, 32, 32),
                                                   dtype=np.float32))
        model.features(x, taps=(1, 3, 5))
        assert model.executed_convs == 5
        model.features(x, taps=(2,))
        assert model.executed_convs == 2

    def test_tap_bounds_checked(self):
        model = PerceptualExtractor(seed=0)
        x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
        with pytest.raises(ConfigError):
            model.features(x, taps=())
        with pytest.raises(ConfigError):
            model.features(x, taps=(14,))

    def test_logits_shape(self):
        model = PerceptualExtractor(seed=0)
        x = Tensor(np.random.default_rng(2).random((3, 3, 32, 32),
                                                   dtype=np.float32))
        z = model.logits(x)
        assert z.shape == (3,)
        assert np.all(np.isfinite(z.data))


class TestProxyTraining:
    def test_short_fit_learns_better_than_chance(self, tmp_path):
        manifest = make_dataset(tmp_path / "d", count=12, size=48, seed=31)
        pairs = load_pairs(manifest)
        model, report = train_proxy(pairs, seed=0, steps=60, batch=8, crop=32)
        assert report["holdout_accuracy"] >= 0.75
        assert report["final_loss"] < 0.6
        assert all(not p.requires_grad for p in model.parameters())

    def test_proxy_checkpoint_round_trip(self, tmp_path):
        model = PerceptualExtractor(seed=4)
        path = tmp_path / "proxy.ckpt"
        save_proxy(path, model)
        back = load_proxy(path)
        x = Tensor(np.random.default_rng(3).random((1, 3, 32, 32),
                                                   dtype=np.float32))
        assert np.array_equal(model.logits(x).data, back.logits(x).data)
        assert all(not p.requires_grad for p in back.parameters())

    def test_too_few_pairs_rejected(self, tmp_path):
        manifest = make_dataset(tmp_path / "t", count=2, size=40, seed=1)
        with pytest.raises(ConfigError):
            train_proxy(load_pairs(manifest), steps=1)
