"""Readers and writers for the propagation dataset's file formats.

This package deliberately does not import the simulator that produces
the files; it speaks the formats directly so the two sides stay
decoupled:

    manifest.json   JSON object: schema_version, kind "dataset_manifest",
                    seed, split_fraction, split {train, test}, counts,
                    samples (key "<case_id>-<variable>" -> relative path)
    *.dws sample    one JSON header line, then two row-major
                    little-endian float32 256x256 rasters (input, target);
                    header carries case/frequency/variable/scheme fields
                    and a sha256 of the payload
    *.dwp prediction one JSON header line plus a single such raster

The experiment grid (which variable, altitude ceiling, and bands each
numbered experiment uses) is part of the same cross-package contract
and is restated here.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, CorruptionError, InvalidInputError, VersionError

RASTER_SIZE = 256
SAMPLE_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
PREDICTION_SCHEMA_VERSION = 1

_PAYLOAD_DTYPE = np.dtype("<f4")
_RASTER_BYTES = RASTER_SIZE * RASTER_SIZE * _PAYLOAD_DTYPE.itemsize

S_BAND_HZ = 3e9
X_BAND_HZ = 10e9

TOOL_VERSION = "0.1.0"


@dataclass(frozen=True)
class ExperimentScope:
    """Sample filter for one numbered experiment."""

    id: int
    variable: str
    altitude_domain_m: float
    frequencies_hz: tuple

    @property
    def epochs_multiplier(self) -> int:
        # single-frequency runs train twice as long so every experiment
        # sees a comparable number of optimizer steps per band
        return 2 if len(self.frequencies_hz) == 1 else 1


_EXPERIMENTS = {
    1: ExperimentScope(1, "F", 30.0, (S_BAND_HZ, X_BAND_HZ)),
    2: ExperimentScope(2, "F", 30.0, (X_BAND_HZ,)),
    3: ExperimentScope(3, "F", 30.0, (S_BAND_HZ,)),
    4: ExperimentScope(4, "F_dB", 30.0, (S_BAND_HZ, X_BAND_HZ)),
    5: ExperimentScope(5, "F_dB", 30.0, (X_BAND_HZ,)),
    6: ExperimentScope(6, "F_dB", 30.0, (S_BAND_HZ,)),
    7: ExperimentScope(7, "F", 300.0, (S_BAND_HZ,)),
    8: ExperimentScope(8, "F_dB", 300.0, (S_BAND_HZ,)),
}


def experiment_scope(experiment_id: int) -> ExperimentScope:
    try:
        return _EXPERIMENTS[int(experiment_id)]
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError(
            f"unknown experiment id {experiment_id!r}; known: "
            f"{sorted(_EXPERIMENTS)}"
        ) from None


@dataclass(frozen=True)
class Manifest:
    """The dataset manifest plus the directory its paths are relative to."""

    root: str
    seed: int
    train_cases: tuple
    test_cases: tuple
    samples: Mapping
    counts_by_frequency: Mapping
    raw: Mapping = field(repr=False, default_factory=dict)

    def sample_path(self, case_id: str, variable: str) -> str:
        key = f"{case_id}-{variable}"
        if key not in self.samples:
            raise InvalidInputError(f"manifest lists no sample {key!r}")
        return os.path.join(self.root, self.samples[key])

    def cases(self, split: str) -> tuple:
        if split == "train":
            return self.train_cases
        if split == "test":
            return self.test_cases
        raise InvalidInputError(f"split must be 'train' or 'test', got {split!r}")


def read_manifest(path) -> Manifest:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = json.loads(fh.read().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: malformed manifest: {exc}") from exc
    if not isinstance(data, dict) or data.get("kind") != "dataset_manifest":
        raise CorruptionError(f"{path}: not a dataset manifest")
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: manifest schema {version} unsupported "
            f"(expected {MANIFEST_SCHEMA_VERSION})"
        )
    split = data.get("split", {})
    return Manifest(
        root=os.path.dirname(os.path.abspath(path)),
        seed=int(data["seed"]),
        train_cases=tuple(split.get("train", ())),
        test_cases=tuple(split.get("test", ())),
        samples=dict(data.get("samples", {})),
        counts_by_frequency=dict(data.get("counts_by_frequency", {})),
        raw=data,
    )


def manifest_hash(path) -> str:
    """Checksum binding a checkpoint to the dataset it was trained on."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@dataclass(frozen=True)
class Sample:
    """One parsed sample file."""

    case_id: str
    frequency_hz: float
    variable: str
    altitude_domain_m: float
    input: np.ndarray
    target: np.ndarray
    header: Mapping = field(repr=False, default_factory=dict)


def _read_header_and_payload(path, expected_kind: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CorruptionError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: malformed header: {exc}") from exc
    if header.get("kind") != expected_kind:
        raise CorruptionError(
            f"{path}: expected kind {expected_kind!r}, got {header.get('kind')!r}"
        )
    return header, blob[newline + 1 :]


def _checked_payload(path, header, payload: bytes, n_rasters: int):
    expected = n_rasters * _RASTER_BYTES
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptionError(f"{path}: payload checksum mismatch")
    return [
        np.frombuffer(payload[i * _RASTER_BYTES : (i + 1) * _RASTER_BYTES], _PAYLOAD_DTYPE)
        .reshape(RASTER_SIZE, RASTER_SIZE)
        .astype(np.float32)
        for i in range(n_rasters)
    ]


def read_sample(path) -> Sample:
    path = os.fspath(path)
    header, payload = _read_header_and_payload(path, "sample")
    version = header.get("schema_version")
    if version != SAMPLE_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: sample schema {version} unsupported "
            f"(expected {SAMPLE_SCHEMA_VERSION})"
        )
    grids = _checked_payload(path, header, payload, 2)
    return Sample(
        case_id=str(header["case_id"]),
        frequency_hz=float(header["frequency_hz"]),
        variable=str(header["variable"]),
        altitude_domain_m=float(header["altitude_domain_m"]),
        input=grids[0],
        target=grids[1],
        header=header,
    )


def load_scope_samples(manifest: Manifest, scope: ExperimentScope, split: str) -> dict:
    """Parsed samples for one experiment and split, keyed by case id."""
    wanted = set(manifest.cases(split))
    out: dict = {}
    for key, rel in manifest.samples.items():
        case_id, _, variable = key.rpartition("-")
        if variable != scope.variable or case_id not in wanted:
            continue
        sample = read_sample(os.path.join(manifest.root, rel))
        if sample.altitude_domain_m != scope.altitude_domain_m:
            continue
        if sample.frequency_hz not in scope.frequencies_hz:
            continue
        out[sample.case_id] = sample
    return out


def write_prediction(
    path,
    case_id: str,
    variable: str,
    values: np.ndarray,
    *,
    experiment: str = "",
    metadata: Mapping | None = None,
) -> None:
    """Emit one prediction raster in the evaluator's file format."""
    grid = np.asarray(values, dtype=np.float64)
    if grid.shape != (RASTER_SIZE, RASTER_SIZE):
        raise InvalidInputError(
            f"prediction must be {RASTER_SIZE}x{RASTER_SIZE}, got {grid.shape}"
        )
    if not np.all(np.isfinite(grid)):
        raise InvalidInputError("prediction contains non-finite values")
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise InvalidInputError(
            f"prediction values must lie in [0, 1], got "
            f"[{grid.min():.4g}, {grid.max():.4g}]"
        )
    payload = grid.astype(_PAYLOAD_DTYPE).tobytes()
    header = {
        "schema_version": PREDICTION_SCHEMA_VERSION,
        "kind": "prediction",
        "tool_version": TOOL_VERSION,
        "case_id": case_id,
        "variable": variable,
        "experiment": experiment,
        "metadata": dict(metadata or {}),
        "shape": [RASTER_SIZE, RASTER_SIZE],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n" + payload
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_prediction(path):
    """Parse a prediction file back; returns (header, values)."""
    path = os.fspath(path)
    header, payload = _read_header_and_payload(path, "prediction")
    version = header.get("schema_version")
    if version != PREDICTION_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: prediction schema {version} unsupported "
            f"(expected {PREDICTION_SCHEMA_VERSION})"
        )
    (values,) = _checked_payload(path, header, payload, 1)
    return header, values
