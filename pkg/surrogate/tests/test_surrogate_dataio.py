"""Dataset file-format round trips and error paths."""

import hashlib
import json
import os

import numpy as np
import pytest
from conftest import RASTER, S_BAND_HZ, X_BAND_HZ, make_dataset, write_sample_file

from surrogate.dataio import (
    ConfigurationError,
    CorruptionError,
    InvalidInputError,
    VersionError,
    experiment_scope,
    load_scope_samples,
    manifest_hash,
    read_manifest,
    read_prediction,
    read_sample,
    write_prediction,
)


class TestExperimentTable:
    def test_all_eight_defined(self):
        for i in range(1, 9):
            scope = experiment_scope(i)
            assert scope.id == i

    def test_experiment_one(self):
        scope = experiment_scope(1)
        assert scope.variable == "F"
        assert scope.altitude_domain_m == 30.0
        assert set(scope.frequencies_hz) == {S_BAND_HZ, X_BAND_HZ}
        assert scope.epochs_multiplier == 1

    def test_experiment_eight(self):
        scope = experiment_scope(8)
        assert scope.variable == "F_dB"
        assert scope.altitude_domain_m == 300.0
        assert set(scope.frequencies_hz) == {S_BAND_HZ}
        assert scope.epochs_multiplier == 2

    def test_single_frequency_trains_longer(self):
        multipliers = {i: experiment_scope(i).epochs_multiplier for i in range(1, 9)}
        assert multipliers == {1: 1, 2: 2, 3: 2, 4: 1, 5: 2, 6: 2, 7: 2, 8: 2}

    @pytest.mark.parametrize("bad", [0, 9, -1, 100])
    def test_unknown_id_rejected(self, bad):
        with pytest.raises(ConfigurationError):
            experiment_scope(bad)


class TestManifest:
    def test_fields(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        assert m.seed == 7
        assert len(m.train_cases) == 4
        assert len(m.test_cases) == 2
        assert len(m.samples) == 6
        assert m.counts_by_frequency == {"3GHz": 6}
        assert m.root == os.path.dirname(tiny_manifest)

    def test_sample_path_resolves(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        path = m.sample_path(m.train_cases[0], "F")
        assert os.path.isfile(path)

    def test_sample_path_unknown_key(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        with pytest.raises(InvalidInputError):
            m.sample_path("nope-S-300m", "F")

    def test_cases_bad_split(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        with pytest.raises(InvalidInputError):
            m.cases("validation")

    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{not json")
        with pytest.raises(CorruptionError):
            read_manifest(bad)

    def test_wrong_kind(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text(json.dumps({"kind": "sample", "schema_version": 1}))
        with pytest.raises(CorruptionError):
            read_manifest(bad)

    def test_future_schema(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text(
            json.dumps({"kind": "dataset_manifest", "schema_version": 2, "seed": 0})
        )
        with pytest.raises(VersionError):
            read_manifest(bad)

    def test_hash_is_file_sha256(self, tiny_manifest):
        with open(tiny_manifest, "rb") as fh:
            expected = hashlib.sha256(fh.read()).hexdigest()
        assert manifest_hash(tiny_manifest) == expected

    def test_hash_tracks_content(self, tmp_path):
        a = make_dataset(tmp_path / "a", seed=1)
        b = make_dataset(tmp_path / "b", seed=2)
        assert manifest_hash(a) != manifest_hash(b)


class TestSampleFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        input_grid = rng.random((RASTER, RASTER)).astype(np.float32)
        target_grid = rng.random((RASTER, RASTER)).astype(np.float32)
        path = tmp_path / "s" / "case-S-300m-F.dws"
        write_sample_file(path, "case-S-300m", S_BAND_HZ, "F", 300.0,
                          input_grid, target_grid)
        sample = read_sample(path)
        assert sample.case_id == "case-S-300m"
        assert sample.frequency_hz == S_BAND_HZ
        assert sample.variable == "F"
        assert sample.altitude_domain_m == 300.0
        np.testing.assert_array_equal(sample.input, input_grid)
        np.testing.assert_array_equal(sample.target, target_grid)
        assert sample.input.dtype == np.float32

    def test_checksum_mismatch(self, tmp_path):
        path = tmp_path / "x.dws"
        z = np.zeros((RASTER, RASTER), np.float32)
        write_sample_file(path, "c-S-30m", S_BAND_HZ, "F", 30.0, z, z)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptionError, match="checksum"):
            read_sample(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.dws"
        z = np.zeros((RASTER, RASTER), np.float32)
        write_sample_file(path, "c-S-30m", S_BAND_HZ, "F", 30.0, z, z)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CorruptionError, match="bytes"):
            read_sample(path)

    def test_missing_header_newline(self, tmp_path):
        path = tmp_path / "x.dws"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(CorruptionError):
            read_sample(path)

    def test_future_schema(self, tmp_path):
        path = tmp_path / "x.dws"
        z = np.zeros((RASTER, RASTER), np.float32)
        write_sample_file(path, "c-S-30m", S_BAND_HZ, "F", 30.0, z, z,
                          schema_version=2)
        with pytest.raises(VersionError):
            read_sample(path)

    def test_prediction_file_is_not_a_sample(self, tmp_path):
        path = tmp_path / "p.dwp"
        write_prediction(path, "c-S-30m", "F", np.zeros((RASTER, RASTER)))
        with pytest.raises(CorruptionError, match="kind"):
            read_sample(path)


class TestScopeLoading:
    def test_train_split_filtered(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        samples = load_scope_samples(m, experiment_scope(7), "train")
        assert sorted(samples) == sorted(m.train_cases)
        assert all(s.variable == "F" for s in samples.values())

    def test_test_split(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        samples = load_scope_samples(m, experiment_scope(7), "test")
        assert sorted(samples) == sorted(m.test_cases)

    def test_wrong_band_is_empty(self, tiny_manifest):
        # experiment 2 wants X band at 30 m; fixture is S band at 300 m
        m = read_manifest(tiny_manifest)
        assert load_scope_samples(m, experiment_scope(2), "train") == {}

    def test_wrong_variable_is_empty(self, tiny_manifest):
        m = read_manifest(tiny_manifest)
        assert load_scope_samples(m, experiment_scope(8), "train") == {}

    def test_dual_band_scope_takes_both(self, tmp_path):
        path = make_dataset(
            tmp_path / "dual",
            n_profiles=3,
            n_test=1,
            variable="F",
            altitude=30.0,
            frequencies=(S_BAND_HZ, X_BAND_HZ),
        )
        m = read_manifest(path)
        samples = load_scope_samples(m, experiment_scope(1), "train")
        bands = {s.frequency_hz for s in samples.values()}
        assert bands == {S_BAND_HZ, X_BAND_HZ}
        assert len(samples) == 4


class TestPredictionFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        values = rng.random((RASTER, RASTER))
        path = tmp_path / "c.dwp"
        write_prediction(path, "c-S-30m", "F", values,
                         experiment="7", metadata={"model": "unet"})
        header, back = read_prediction(path)
        assert header["case_id"] == "c-S-30m"
        assert header["kind"] == "prediction"
        assert header["experiment"] == "7"
        assert header["metadata"] == {"model": "unet"}
        np.testing.assert_array_equal(back, values.astype(np.float32))

    def test_header_line_is_sorted_json(self, tmp_path):
        path = tmp_path / "c.dwp"
        write_prediction(path, "c-S-30m", "F", np.full((RASTER, RASTER), 0.5))
        first = path.read_bytes().split(b"\n", 1)[0]
        header = json.loads(first)
        assert first == json.dumps(header, sort_keys=True).encode()
        assert header["payload_sha256"] == hashlib.sha256(
            path.read_bytes().split(b"\n", 1)[1]
        ).hexdigest()

    def test_rejects_wrong_shape(self, tmp_path):
        with pytest.raises(InvalidInputError, match="256"):
            write_prediction(tmp_path / "c.dwp", "c", "F", np.zeros((64, 64)))

    def test_rejects_nan(self, tmp_path):
        bad = np.full((RASTER, RASTER), 0.5)
        bad[3, 3] = np.nan
        with pytest.raises(InvalidInputError, match="finite"):
            write_prediction(tmp_path / "c.dwp", "c", "F", bad)

    def test_rejects_out_of_range(self, tmp_path):
        bad = np.full((RASTER, RASTER), 0.5)
        bad[0, 0] = 1.25
        with pytest.raises(InvalidInputError, match=r"\[0, 1\]"):
            write_prediction(tmp_path / "c.dwp", "c", "F", bad)

    def test_no_temp_files_left(self, tmp_path):
        write_prediction(tmp_path / "c.dwp", "c", "F",
                         np.full((RASTER, RASTER), 0.25))
        assert os.listdir(tmp_path) == ["c.dwp"]
