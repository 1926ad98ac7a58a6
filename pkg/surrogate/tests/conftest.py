"""Fixture dataset writers.

These write the dataset formats directly (header line + f32 rasters,
manifest JSON) so the suite exercises the package against the on-disk
contract without depending on the simulator that normally produces the
files.
"""

import hashlib
import json
import os

import numpy as np
import pytest

RASTER = 256

S_BAND_HZ = 3e9
X_BAND_HZ = 10e9

_SCHEMES = {
    ("F", 30.0): (288.0, 181.0, 0.0, 16.45),
    ("F_dB", 30.0): (288.0, 181.0, -90.01, -102.17),
    ("F", 300.0): (282.0, 187.0, 0.0, 16.45),
    ("F_dB", 300.0): (282.0, 187.0, -90.01, -102.17),
}


def scheme_dict(variable, altitude):
    io, isc, to, ts = _SCHEMES[(variable, altitude)]
    return {
        "variable": variable,
        "altitude_domain_m": altitude,
        "input_offset": io,
        "input_scale": isc,
        "target_offset": to,
        "target_scale": ts,
    }


def write_sample_file(
    path,
    case_id,
    frequency_hz,
    variable,
    altitude_domain_m,
    input_grid,
    target_grid,
    metadata=None,
    schema_version=1,
):
    payload = (
        np.asarray(input_grid, np.float32).tobytes()
        + np.asarray(target_grid, np.float32).tobytes()
    )
    header = {
        "schema_version": schema_version,
        "kind": "sample",
        "tool_version": "0.1.0",
        "case_id": case_id,
        "frequency_hz": frequency_hz,
        "variable": variable,
        "altitude_domain_m": altitude_domain_m,
        "scheme": scheme_dict(variable, altitude_domain_m),
        "clamp_fraction": 0.0,
        "metadata": dict(metadata or {}),
        "shape": [RASTER, RASTER],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    os.makedirs(os.path.dirname(os.fspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n" + payload)


def synthetic_pair(case_index, band_value, rng):
    """A learnable (input, target) pair: the input carries 2-D texture and
    the target is a smooth local function of it, shifted by the band."""
    z = np.linspace(0.0, 1.0, RASTER)[:, None]
    r = np.linspace(0.0, 1.0, RASTER)[None, :]
    input_grid = (
        0.35
        + 0.35 * z
        + 0.18
        * np.sin(2.0 * np.pi * (z + 0.13 * case_index))
        * np.cos(2.0 * np.pi * (3.0 * r + 0.21 * case_index))
    )
    target = 0.5 + 0.4 * np.sin(2.0 * np.pi * (1.3 * input_grid + 0.3 * band_value))
    target += rng.normal(0.0, 0.002, target.shape)
    return np.clip(input_grid, 0.0, 1.0), np.clip(target, 0.0, 1.0)


def make_dataset(
    root,
    n_profiles=6,
    n_test=2,
    variable="F",
    altitude=300.0,
    frequencies=(S_BAND_HZ,),
    seed=7,
):
    """Write a small dataset; returns the manifest path.

    Case ids follow the `<profile>-<band>-<alt>m` convention; each case
    stores one sample per variable (only `variable` here).
    """
    root = os.fspath(root)
    rng = np.random.default_rng(seed)
    samples = {}
    case_ids = []
    counts = {}
    for i in range(n_profiles):
        for freq in frequencies:
            band = "X" if freq == X_BAND_HZ else "S"
            case_id = f"prof{i:04d}-{band}-{altitude:g}m"
            case_ids.append(case_id)
            label = f"{freq / 1e9:g}GHz"
            counts[label] = counts.get(label, 0) + 1
            band_value = 1.0 if freq == X_BAND_HZ else 0.0
            input_grid, target_grid = synthetic_pair(i, band_value, rng)
            rel = os.path.join("samples", f"{case_id}-{variable}.dws")
            write_sample_file(
                os.path.join(root, rel),
                case_id,
                freq,
                variable,
                altitude,
                input_grid,
                target_grid,
                metadata={"profile_id": f"prof{i:04d}"},
            )
            samples[f"{case_id}-{variable}"] = rel

    per_band = len(frequencies)
    test_cases = case_ids[-n_test * per_band :]
    train_cases = case_ids[: len(case_ids) - len(test_cases)]
    manifest = {
        "schema_version": 1,
        "kind": "dataset_manifest",
        "tool_version": "0.1.0",
        "seed": seed,
        "split_fraction": len(train_cases) / len(case_ids),
        "split": {"train": train_cases, "test": test_cases},
        "counts_by_frequency": counts,
        "samples": samples,
        "generation_parameters": {"synthetic_fixture": True},
    }
    path = os.path.join(root, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return path


@pytest.fixture()
def tiny_manifest(tmp_path):
    return make_dataset(tmp_path / "dataset")
