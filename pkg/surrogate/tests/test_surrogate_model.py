"""Generator architecture: config validation, shapes, range, determinism."""

import numpy as np
import pytest
import torch

from surrogate.errors import ConfigurationError, InvalidInputError
from surrogate.model import GeneratorConfig, UNetGenerator, build_model

TINY = dict(depth=2, base_channels=4, epochs=1)


class TestConfig:
    def test_defaults(self):
        cfg = GeneratorConfig()
        assert cfg.depth == 4
        assert cfg.base_channels == 32
        assert cfg.loss == "L1"
        assert cfg.frequency_conditioning == "input_channel"
        assert cfg.skip_connections is True

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"depth": 1},
            {"depth": 0},
            {"base_channels": 0},
            {"loss": "huber"},
            {"epochs": 0},
            {"batch_size": 0},
            {"learning_rate": 0.0},
            {"learning_rate": -1e-4},
            {"seed": -1},
            {"frequency_conditioning": "embedding"},
        ],
    )
    def test_rejections(self, kwargs):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(**kwargs)

    def test_in_channels(self):
        assert GeneratorConfig().in_channels == 2
        assert GeneratorConfig(frequency_conditioning="none").in_channels == 1

    def test_loss_module(self):
        assert isinstance(GeneratorConfig(loss="L1").loss_module(), torch.nn.L1Loss)
        assert isinstance(GeneratorConfig(loss="L2").loss_module(), torch.nn.MSELoss)

    def test_dict_round_trip(self):
        cfg = GeneratorConfig(depth=3, base_channels=8, loss="L2", epochs=7,
                              batch_size=2, learning_rate=1e-3, seed=42,
                              frequency_conditioning="none",
                              skip_connections=False)
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    @pytest.mark.parametrize("depth,size", [(2, 32), (3, 64), (4, 64)])
    def test_shape_preserved(self, depth, size):
        cfg = GeneratorConfig(depth=depth, base_channels=4, epochs=1,
                              frequency_conditioning="none")
        model = build_model(cfg)
        out = model(torch.rand(2, 1, size, size))
        assert out.shape == (2, 1, size, size)

    def test_full_resolution(self):
        model = build_model(GeneratorConfig(**TINY))
        out = model(torch.rand(1, 2, 256, 256))
        assert out.shape == (1, 1, 256, 256)

    def test_output_in_unit_interval(self):
        model = build_model(GeneratorConfig(**TINY, frequency_conditioning="none"))
        with torch.no_grad():
            out = model(torch.randn(3, 1, 32, 32) * 50.0)
        assert float(out.min()) >= 0.0
        assert float(out.max()) <= 1.0

    def test_conditioned_model_takes_two_channels(self):
        model = build_model(GeneratorConfig(**TINY))
        out = model(torch.rand(2, 2, 32, 32))
        assert out.shape == (2, 1, 32, 32)

    def test_wrong_channel_count(self):
        model = build_model(GeneratorConfig(**TINY))
        with pytest.raises(InvalidInputError, match=r"\(batch, 2, H, W\)"):
            model(torch.rand(2, 1, 32, 32))

    def test_indivisible_size_rejected(self):
        model = build_model(GeneratorConfig(**TINY, frequency_conditioning="none"))
        with pytest.raises(InvalidInputError, match="divisible"):
            model(torch.rand(1, 1, 30, 30))

    def test_non_batched_input_rejected(self):
        model = build_model(GeneratorConfig(**TINY, frequency_conditioning="none"))
        with pytest.raises(InvalidInputError):
            model(torch.rand(1, 32, 32))


class TestArchitecture:
    def test_build_is_seed_deterministic(self):
        a = build_model(GeneratorConfig(**TINY, seed=5)).state_dict()
        b = build_model(GeneratorConfig(**TINY, seed=5)).state_dict()
        assert a.keys() == b.keys()
        for key in a:
            assert torch.equal(a[key], b[key])

    def test_different_seeds_differ(self):
        a = build_model(GeneratorConfig(**TINY, seed=5)).state_dict()
        b = build_model(GeneratorConfig(**TINY, seed=6)).state_dict()
        assert any(not torch.equal(a[k], b[k]) for k in a)

    def test_skip_toggle_changes_decoder_width(self):
        with_skips = UNetGenerator(GeneratorConfig(**TINY))
        without = UNetGenerator(GeneratorConfig(**TINY, skip_connections=False))
        first_conv = lambda m: next(
            layer for layer in m.decoders[0].modules()
            if isinstance(layer, torch.nn.Conv2d)
        )
        assert first_conv(with_skips).in_channels == 2 * first_conv(without).in_channels

    def test_ablated_model_still_runs(self):
        model = build_model(GeneratorConfig(**TINY, skip_connections=False))
        out = model(torch.rand(1, 2, 32, 32))
        assert out.shape == (1, 1, 32, 32)

    def test_channel_doubling_with_depth(self):
        model = UNetGenerator(GeneratorConfig(depth=3, base_channels=4, epochs=1))
        widths = [
            next(l for l in enc.modules() if isinstance(l, torch.nn.Conv2d)).out_channels
            for enc in model.encoders
        ]
        assert widths == [4, 8, 16]

    def test_parameters_trainable(self):
        model = build_model(GeneratorConfig(**TINY))
        n = sum(p.numel() for p in model.parameters() if p.requires_grad)
        assert n > 1000
