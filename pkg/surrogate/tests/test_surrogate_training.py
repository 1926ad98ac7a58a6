"""Training loop, checkpointing, prediction, and learning-behavior checks.

The slow fixtures (a real overfit run) are module-scoped and shared by
several tests; everything else trains for a handful of epochs.
"""

import math
import os
import time
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from conftest import RASTER, S_BAND_HZ, X_BAND_HZ, make_dataset, write_sample_file

from surrogate.dataio import (
    experiment_scope,
    load_scope_samples,
    manifest_hash,
    read_manifest,
    read_prediction,
)
from surrogate.errors import ConfigurationError, InvalidInputError, TrainingError
from surrogate.model import GeneratorConfig, build_model
from surrogate.training import (
    band_channel_value,
    load_checkpoint,
    predict,
    samples_to_tensors,
    train,
)

# settings that memorize 4 samples quickly at depth 2
OVERFIT = dict(
    depth=2,
    base_channels=8,
    loss="L2",
    epochs=75,
    batch_size=4,
    learning_rate=5e-3,
    seed=3,
)

QUICK = dict(depth=2, base_channels=4, loss="L2", batch_size=4,
             learning_rate=5e-3, seed=3)


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    # 6 profiles, 2 held out: exactly 4 training samples
    manifest = make_dataset(root / "dataset", n_profiles=6, n_test=2)
    started = time.monotonic()
    checkpoint = train(manifest, 7, GeneratorConfig(**OVERFIT), root / "ckpt.pt")
    wall = time.monotonic() - started
    return SimpleNamespace(
        manifest=manifest, checkpoint=checkpoint, wall=wall, root=root
    )


class TestTensorAssembly:
    def test_band_channel_value(self):
        dual = experiment_scope(1)
        assert band_channel_value(S_BAND_HZ, dual) == 0.0
        assert band_channel_value(X_BAND_HZ, dual) == 1.0
        single = experiment_scope(7)
        assert band_channel_value(S_BAND_HZ, single) == 0.0

    def test_dual_band_conditioning_plane(self, tmp_path):
        path = make_dataset(tmp_path / "dual", n_profiles=3, n_test=1,
                            altitude=30.0,
                            frequencies=(S_BAND_HZ, X_BAND_HZ))
        manifest = read_manifest(path)
        samples = load_scope_samples(manifest, experiment_scope(1), "train")
        inputs, targets, case_ids = samples_to_tensors(
            samples, experiment_scope(1), GeneratorConfig()
        )
        assert inputs.shape == (4, 2, RASTER, RASTER)
        assert targets.shape == (4, 1, RASTER, RASTER)
        assert case_ids == sorted(samples)
        for row, cid in enumerate(case_ids):
            plane = inputs[row, 1]
            expected = 1.0 if "-X-" in cid else 0.0
            assert torch.all(plane == expected)

    def test_unconditioned_single_channel(self, tiny_manifest):
        manifest = read_manifest(tiny_manifest)
        samples = load_scope_samples(manifest, experiment_scope(7), "train")
        inputs, _, _ = samples_to_tensors(
            samples, experiment_scope(7),
            GeneratorConfig(frequency_conditioning="none"),
        )
        assert inputs.shape == (4, 1, RASTER, RASTER)
        assert inputs.dtype == torch.float32


class TestOverfit:
    def test_acceptance_overfit_sanity(self, overfit_run):
        payload = load_checkpoint(overfit_run.checkpoint)
        curve = payload["loss_curve"]
        assert payload["completed"] is True
        assert len(curve) <= 500
        assert curve[-1] < 1e-3
        assert overfit_run.wall < 300.0
        print(
            f"\noverfit: mse {curve[-1]:.2e} after {len(curve)} epochs "
            f"in {overfit_run.wall:.0f}s"
        )

    def test_acceptance_predict_after_overfit(self, overfit_run):
        out = overfit_run.root / "train-preds"
        paths = predict(overfit_run.checkpoint, overfit_run.manifest, out,
                        split="train")
        manifest = read_manifest(overfit_run.manifest)
        samples = load_scope_samples(manifest, experiment_scope(7), "train")
        assert sorted(paths) == sorted(samples)
        for cid, sample in samples.items():
            _, values = read_prediction(paths[cid])
            mse = float(np.mean((values - sample.target) ** 2))
            assert mse < 1e-3, f"{cid}: mse {mse}"

    def test_predict_covers_test_split(self, overfit_run):
        out = overfit_run.root / "test-preds"
        paths = predict(overfit_run.checkpoint, overfit_run.manifest, out)
        manifest = read_manifest(overfit_run.manifest)
        assert sorted(paths) == sorted(manifest.test_cases)
        for cid, path in paths.items():
            header, values = read_prediction(path)
            assert values.shape == (RASTER, RASTER)
            assert float(values.min()) >= 0.0
            assert float(values.max()) <= 1.0
            assert header["case_id"] == cid
        index = os.path.join(out, "predictions.json")
        assert os.path.isfile(index)

    def test_skip_ablation_slows_overfit(self, overfit_run):
        ablated_path = train(
            overfit_run.manifest,
            7,
            GeneratorConfig(**OVERFIT, skip_connections=False),
            overfit_run.root / "ckpt-ablated.pt",
        )
        with_skips = load_checkpoint(overfit_run.checkpoint)["loss_curve"]
        without = load_checkpoint(ablated_path)["loss_curve"]

        def epochs_to(curve, level):
            hits = [i for i, v in enumerate(curve) if v < level]
            return hits[0] if hits else len(curve) + 1

        assert epochs_to(with_skips, 1e-3) < epochs_to(without, 1e-3)
        assert with_skips[-1] < without[-1]


class TestCheckpoint:
    def test_metadata(self, overfit_run):
        payload = load_checkpoint(overfit_run.checkpoint)
        assert payload["kind"] == "surrogate_checkpoint"
        assert payload["schema_version"] == 1
        assert payload["experiment_id"] == 7
        assert payload["variable"] == "F"
        assert payload["altitude_domain_m"] == 300.0
        assert payload["frequencies_hz"] == [S_BAND_HZ]
        assert payload["dataset_hash"] == manifest_hash(overfit_run.manifest)
        cfg = GeneratorConfig.from_dict(payload["config"])
        assert cfg == GeneratorConfig(**OVERFIT)
        manifest = read_manifest(overfit_run.manifest)
        assert payload["train_case_ids"] == sorted(manifest.train_cases)

    def test_weights_only_loadable(self, overfit_run):
        # the checkpoint must stay plain-primitive so a hardened load works
        payload = torch.load(overfit_run.checkpoint, map_location="cpu",
                             weights_only=True)
        assert "state_dict" in payload

    def test_corrupt_checkpoint(self, tmp_path):
        bad = tmp_path / "ckpt.pt"
        bad.write_bytes(b"not a checkpoint")
        from surrogate.errors import CorruptionError

        with pytest.raises(CorruptionError):
            load_checkpoint(bad)


class TestTrainingBehavior:
    def test_loss_curves_repeat_with_seed(self, tiny_manifest, tmp_path):
        runs = []
        for name in ("a", "b"):
            path = train(
                tiny_manifest, 7,
                GeneratorConfig(**QUICK, epochs=2),
                tmp_path / f"ckpt-{name}.pt",
            )
            runs.append(load_checkpoint(path))
        curve_a, curve_b = runs[0]["loss_curve"], runs[1]["loss_curve"]
        assert len(curve_a) == len(curve_b) == 4
        assert max(abs(a - b) for a, b in zip(curve_a, curve_b)) <= 1e-12
        for key, tensor in runs[0]["state_dict"].items():
            assert torch.equal(tensor, runs[1]["state_dict"][key])

    def test_epochs_multiplier_for_single_band(self, tiny_manifest, tmp_path):
        path = train(tiny_manifest, 7, GeneratorConfig(**QUICK, epochs=2),
                     tmp_path / "c.pt")
        assert len(load_checkpoint(path)["loss_curve"]) == 4

    def test_no_multiplier_for_dual_band(self, tmp_path):
        manifest = make_dataset(tmp_path / "dual", n_profiles=3, n_test=1,
                                altitude=30.0,
                                frequencies=(S_BAND_HZ, X_BAND_HZ))
        path = train(manifest, 1, GeneratorConfig(**QUICK, epochs=2),
                     tmp_path / "c.pt")
        assert len(load_checkpoint(path)["loss_curve"]) == 2

    def test_empty_split_rejected(self, tiny_manifest, tmp_path):
        # experiment 2 wants X band; the fixture only has S band
        with pytest.raises(InvalidInputError, match="train"):
            train(tiny_manifest, 2, GeneratorConfig(**QUICK, epochs=1),
                  tmp_path / "c.pt")

    def test_nan_divergence_saves_last_good(self, tmp_path):
        manifest = make_dataset(tmp_path / "ds", n_profiles=3, n_test=1)
        m = read_manifest(manifest)
        # poison one training sample's target
        victim = m.train_cases[0]
        bad = np.full((RASTER, RASTER), np.nan, np.float32)
        ok = np.full((RASTER, RASTER), 0.5, np.float32)
        write_sample_file(m.sample_path(victim, "F"), victim, S_BAND_HZ,
                          "F", 300.0, ok, bad)
        ckpt = tmp_path / "c.pt"
        with pytest.raises(TrainingError) as err:
            train(manifest, 7, GeneratorConfig(**QUICK, epochs=3), ckpt)
        assert err.value.last_good_checkpoint == os.fspath(ckpt)
        payload = load_checkpoint(ckpt)
        assert payload["completed"] is False
        assert payload["diverged_at_epoch"] == 0
        # the saved weights are usable
        model = build_model(GeneratorConfig.from_dict(payload["config"]))
        model.load_state_dict(payload["state_dict"])
        with torch.no_grad():
            out = model(torch.rand(1, model.config.in_channels, 64, 64))
        assert bool(torch.isfinite(out).all())

    def test_learns_held_out_cases(self, tmp_path):
        # small but real generalization check against the mean-image floor
        manifest = make_dataset(tmp_path / "ds", n_profiles=12, n_test=2)
        ckpt = train(
            manifest, 7,
            GeneratorConfig(depth=2, base_channels=8, loss="L2", epochs=15,
                            batch_size=4, learning_rate=5e-3, seed=3),
            tmp_path / "c.pt",
        )
        m = read_manifest(manifest)
        train_samples = load_scope_samples(m, experiment_scope(7), "train")
        test_samples = load_scope_samples(m, experiment_scope(7), "test")
        baseline = np.mean([s.target for s in train_samples.values()], axis=0)
        paths = predict(ckpt, manifest, tmp_path / "preds")
        model_mse, baseline_mse = [], []
        for cid, sample in test_samples.items():
            _, values = read_prediction(paths[cid])
            model_mse.append(float(np.mean((values - sample.target) ** 2)))
            baseline_mse.append(float(np.mean((baseline - sample.target) ** 2)))
        assert np.mean(model_mse) < np.mean(baseline_mse) / 10.0

    def test_predict_scope_mismatch(self, overfit_run, tmp_path):
        # manifest with the wrong variable offers nothing in scope
        other = make_dataset(tmp_path / "other", n_profiles=3, n_test=1,
                             variable="F_dB")
        with pytest.raises(ConfigurationError, match="scope"):
            predict(overfit_run.checkpoint, other, tmp_path / "p")


class TestGradients:
    def test_acceptance_gradient_check(self):
        cfg = GeneratorConfig(depth=2, base_channels=4, epochs=1, seed=11,
                              loss="L2", frequency_conditioning="none")
        model = build_model(cfg).double()
        gen = torch.Generator().manual_seed(99)
        x = torch.rand(2, 1, 8, 8, dtype=torch.float64, generator=gen)
        y = torch.rand(2, 1, 8, 8, dtype=torch.float64, generator=gen)
        loss_fn = torch.nn.MSELoss()

        model.zero_grad()
        loss_fn(model(x), y).backward()
        params = [p for p in model.parameters() if p.requires_grad]
        analytic = torch.cat([p.grad.reshape(-1) for p in params])

        sizes = [p.numel() for p in params]
        offsets = np.cumsum([0] + sizes)
        total = int(offsets[-1])
        n_probe = max(math.ceil(total / 100), 40)
        probe = torch.randperm(total, generator=gen)[:n_probe].tolist()

        worst = 0.0
        with torch.no_grad():
            for flat_index in probe:
                which = int(np.searchsorted(offsets, flat_index, "right")) - 1
                local = flat_index - int(offsets[which])
                flat = params[which].view(-1)
                original = float(flat[local])
                h = 1e-6 * max(1.0, abs(original))
                flat[local] = original + h
                f_plus = float(loss_fn(model(x), y))
                flat[local] = original - h
                f_minus = float(loss_fn(model(x), y))
                flat[local] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = float(analytic[flat_index])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, rel)
        assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"
        print(f"\ngradient check: {n_probe}/{total} parameters, "
              f"worst relative error {worst:.2e}")

    def test_gradcheck_probes_at_least_one_percent(self):
        cfg = GeneratorConfig(depth=2, base_channels=4, epochs=1,
                              frequency_conditioning="none")
        total = sum(p.numel() for p in build_model(cfg).parameters())
        assert max(math.ceil(total / 100), 40) * 100 >= total
