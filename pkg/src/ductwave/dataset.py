"""Normalized image pairs from profiles and solver output.

A sample pairs a range-homogeneous refractivity raster (the model
input) with a propagation-factor raster (the target), both 256x256
and normalized to [0, 1] by fixed affine schemes. Samples are stored
one per file with a checksummed binary payload; a dataset-level
manifest records the reproducible train/test split.

Raster orientation: row index grows with altitude (row 0 is the
surface), column index grows with range.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._version import __version__
from .errors import (
    ConfigurationError,
    CorruptionError,
    DataError,
    InvalidInputError,
    VersionError,
)
from .pesolver import PropagationDomain, f_to_fdb
from .refractivity import ModifiedRefractivityProfile

RASTER_SIZE = 256
SAMPLE_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
PREDICTION_SCHEMA_VERSION = 1

VARIABLES = ("F", "F_dB")
ALTITUDE_DOMAINS_M = (30.0, 300.0)

_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class NormalizationScheme:
    """Affine constants mapping physical values onto [0, 1]."""

    variable: str
    altitude_domain_m: float
    input_offset: float
    input_scale: float
    target_offset: float
    target_scale: float

    def __post_init__(self) -> None:
        if self.variable not in VARIABLES:
            raise ConfigurationError(f"unknown variable {self.variable!r}")
        if self.input_scale == 0.0 or self.target_scale == 0.0:
            raise ConfigurationError("normalization scales must be nonzero")

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "altitude_domain_m": self.altitude_domain_m,
            "input_offset": self.input_offset,
            "input_scale": self.input_scale,
            "target_offset": self.target_offset,
            "target_scale": self.target_scale,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalizationScheme":
        return cls(
            variable=str(data["variable"]),
            altitude_domain_m=float(data["altitude_domain_m"]),
            input_offset=float(data["input_offset"]),
            input_scale=float(data["input_scale"]),
            target_offset=float(data["target_offset"]),
            target_scale=float(data["target_scale"]),
        )


_INPUT_CONSTANTS = {30.0: (288.0, 181.0), 300.0: (282.0, 187.0)}
_TARGET_CONSTANTS = {"F": (0.0, 16.45), "F_dB": (-90.01, -102.17)}


def scheme_for(variable: str, altitude_domain_m: float) -> NormalizationScheme:
    """The fixed scheme for a (variable, altitude ceiling) combination."""
    if variable not in VARIABLES:
        raise ConfigurationError(f"unknown variable {variable!r}")
    alt = float(altitude_domain_m)
    if alt not in _INPUT_CONSTANTS:
        raise ConfigurationError(
            f"no normalization constants for altitude domain {altitude_domain_m} m; "
            f"known: {sorted(_INPUT_CONSTANTS)}"
        )
    in_off, in_scale = _INPUT_CONSTANTS[alt]
    tgt_off, tgt_scale = _TARGET_CONSTANTS[variable]
    return NormalizationScheme(
        variable=variable,
        altitude_domain_m=alt,
        input_offset=in_off,
        input_scale=in_scale,
        target_offset=tgt_off,
        target_scale=tgt_scale,
    )


def _role_constants(scheme: NormalizationScheme, role: str) -> tuple[float, float]:
    if role == "input":
        return scheme.input_offset, scheme.input_scale
    if role == "target":
        return scheme.target_offset, scheme.target_scale
    raise ConfigurationError(f"role must be 'input' or 'target', got {role!r}")


def normalize(grid, scheme: NormalizationScheme, role: str):
    """Affine map onto [0, 1] with clamping.

    Returns (normalized grid, clamp fraction): the fraction of pixels
    that fell outside [0, 1] before clamping.
    """
    offset, scale = _role_constants(scheme, role)
    arr = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("grid contains non-finite values")
    out = (arr - offset) / scale
    outside = np.count_nonzero((out < 0.0) | (out > 1.0))
    clamp_fraction = float(outside) / out.size if out.size else 0.0
    return np.clip(out, 0.0, 1.0), clamp_fraction


def denormalize(grid, scheme: NormalizationScheme, role: str) -> np.ndarray:
    """Exact affine inverse of normalize (clamping aside)."""
    offset, scale = _role_constants(scheme, role)
    arr = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("grid contains non-finite values")
    return arr * scale + offset


def rasterize_input(
    profile: ModifiedRefractivityProfile, altitude_domain_m: float
):
    """Profile sampled at 256 altitudes, tiled over 256 range columns.

    Returns (grid, extrapolated): extrapolated is True when the ceiling
    lies above the profile's top level and the last gradient was
    extended.
    """
    if not isinstance(profile, ModifiedRefractivityProfile):
        raise InvalidInputError(
            "rasterize_input needs a ModifiedRefractivityProfile"
        )
    ceiling = float(altitude_domain_m)
    if not (math.isfinite(ceiling) and ceiling > 0.0):
        raise InvalidInputError(
            f"altitude_domain_m must be finite and > 0, got {altitude_domain_m}"
        )
    altitudes = np.linspace(0.0, ceiling, RASTER_SIZE)
    column = profile.sample(altitudes)
    extrapolated = ceiling > profile.levels[-1][0]
    return np.tile(column[:, None], (1, RASTER_SIZE)), extrapolated


def rasterize_target(
    domain: PropagationDomain,
    variable: str,
    *,
    fdb_factor: float = 10.0,
    convert_before_resample: bool = True,
) -> np.ndarray:
    """Propagation factor resampled bilinearly onto the 256x256 grid.

    The output spans the domain extents with 256 equally spaced ranges
    and altitudes; rows are altitude, columns are range. For F_dB the
    decibel conversion happens before resampling by default; the
    convert_before_resample flag flips that order.
    """
    if variable not in VARIABLES:
        raise ConfigurationError(f"unknown variable {variable!r}")
    values = np.asarray(domain.f_values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError("domain contains non-finite values")
    ranges = np.asarray(domain.range_axis_m, dtype=np.float64)
    alts = np.asarray(domain.altitude_axis_m, dtype=np.float64)
    if ranges.size < 2 or alts.size < 2:
        raise InvalidInputError(
            f"domain grid must be at least 2x2, got {values.shape}"
        )
    if variable == "F_dB" and convert_before_resample:
        values, _ = f_to_fdb(values, factor=fdb_factor)
    interp = RegularGridInterpolator(
        (ranges, alts), values, method="linear", bounds_error=True
    )
    out_ranges = np.linspace(ranges[0], ranges[-1], RASTER_SIZE)
    out_alts = np.linspace(alts[0], alts[-1], RASTER_SIZE)
    rr, zz = np.meshgrid(out_ranges, out_alts, indexing="ij")
    resampled = interp(np.stack([rr.ravel(), zz.ravel()], axis=1)).reshape(
        RASTER_SIZE, RASTER_SIZE
    )
    if variable == "F_dB" and not convert_before_resample:
        resampled, _ = f_to_fdb(resampled, factor=fdb_factor)
    # transpose to rows = altitude, columns = range
    return np.ascontiguousarray(resampled.T)


def _canonical_grid(name: str, grid) -> np.ndarray:
    arr = np.asarray(grid)
    if arr.shape != (RASTER_SIZE, RASTER_SIZE):
        raise InvalidInputError(
            f"{name} must be {RASTER_SIZE}x{RASTER_SIZE}, got {arr.shape}"
        )
    # grids are stored as little-endian f32; canonicalize now so the
    # write/read round trip is bit exact
    arr = arr.astype(np.float32).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampleRecord:
    """One normalized (input, target) image pair with its provenance."""

    case_id: str
    frequency_hz: float
    variable: str
    altitude_domain_m: float
    scheme: NormalizationScheme
    input: np.ndarray
    target: np.ndarray
    clamp_fraction: float = 0.0
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.case_id:
            raise InvalidInputError("case_id must be non-empty")
        if not (math.isfinite(self.frequency_hz) and self.frequency_hz > 0):
            raise InvalidInputError(
                f"frequency_hz must be finite and > 0, got {self.frequency_hz}"
            )
        if self.variable not in VARIABLES:
            raise InvalidInputError(f"unknown variable {self.variable!r}")
        if (
            self.scheme.variable != self.variable
            or self.scheme.altitude_domain_m != float(self.altitude_domain_m)
        ):
            raise ConfigurationError(
                "scheme does not match the sample: scheme is "
                f"({self.scheme.variable}, {self.scheme.altitude_domain_m} m), sample is "
                f"({self.variable}, {self.altitude_domain_m} m)"
            )
        object.__setattr__(self, "input", _canonical_grid("input", self.input))
        object.__setattr__(self, "target", _canonical_grid("target", self.target))
        if not (0.0 <= self.clamp_fraction <= 1.0):
            raise InvalidInputError(
                f"clamp_fraction must lie in [0, 1], got {self.clamp_fraction}"
            )
        first = self.input[:, :1]
        if not np.array_equal(self.input, np.broadcast_to(first, self.input.shape)):
            raise InvalidInputError(
                "input raster columns must all be identical (range-homogeneous)"
            )
        object.__setattr__(self, "metadata", dict(self.metadata))


def make_sample(
    case_id: str,
    profile: ModifiedRefractivityProfile,
    domain: PropagationDomain,
    variable: str,
    *,
    fdb_factor: float = 10.0,
    convert_before_resample: bool = True,
    metadata: Mapping | None = None,
) -> SampleRecord:
    """Rasterize and normalize one (profile, solver run) into a record."""
    altitude_domain_m = float(domain.altitude_axis_m[-1])
    scheme = scheme_for(variable, altitude_domain_m)
    raw_input, extrapolated = rasterize_input(profile, altitude_domain_m)
    norm_input, input_clamp = normalize(raw_input, scheme, "input")
    raw_target = rasterize_target(
        domain,
        variable,
        fdb_factor=fdb_factor,
        convert_before_resample=convert_before_resample,
    )
    norm_target, target_clamp = normalize(raw_target, scheme, "target")
    meta = dict(metadata or {})
    meta.setdefault("input_extrapolated", bool(extrapolated))
    meta.setdefault("input_clamp_fraction", input_clamp)
    return SampleRecord(
        case_id=case_id,
        frequency_hz=float(domain.config.frequency_hz),
        variable=variable,
        altitude_domain_m=altitude_domain_m,
        scheme=scheme,
        input=norm_input,
        target=norm_target,
        clamp_fraction=target_clamp,
        metadata=meta,
    )


def _atomic_write_bytes(path, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, sort_keys=True).encode() + b"\n" + payload
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _read_header_and_payload(path, expected_kind: str) -> tuple[dict, bytes]:
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


def _check_payload(path, header: dict, payload: bytes, n_rasters: int) -> None:
    expected_len = n_rasters * RASTER_SIZE * RASTER_SIZE * _PAYLOAD_DTYPE.itemsize
    if len(payload) != expected_len:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, expected {expected_len}"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CorruptionError(f"{path}: payload checksum mismatch")


def write_sample(record: SampleRecord, path) -> None:
    """Store a record as a JSON header line plus two f32 rasters."""
    payload = (
        record.input.astype(_PAYLOAD_DTYPE).tobytes()
        + record.target.astype(_PAYLOAD_DTYPE).tobytes()
    )
    header = {
        "schema_version": SAMPLE_SCHEMA_VERSION,
        "kind": "sample",
        "tool_version": __version__,
        "case_id": record.case_id,
        "frequency_hz": record.frequency_hz,
        "variable": record.variable,
        "altitude_domain_m": record.altitude_domain_m,
        "scheme": record.scheme.to_dict(),
        "clamp_fraction": record.clamp_fraction,
        "metadata": dict(record.metadata),
        "shape": [RASTER_SIZE, RASTER_SIZE],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    _atomic_write_bytes(path, header, payload)


def read_sample(path) -> SampleRecord:
    """Read a record written by write_sample, verifying the checksum."""
    header, payload = _read_header_and_payload(path, "sample")
    version = header.get("schema_version")
    if version != SAMPLE_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: sample schema {version} unsupported "
            f"(expected {SAMPLE_SCHEMA_VERSION})"
        )
    _check_payload(path, header, payload, 2)
    raster_bytes = RASTER_SIZE * RASTER_SIZE * _PAYLOAD_DTYPE.itemsize
    grids = [
        np.frombuffer(payload[i * raster_bytes : (i + 1) * raster_bytes], _PAYLOAD_DTYPE)
        .reshape(RASTER_SIZE, RASTER_SIZE)
        .astype(np.float64)
        for i in range(2)
    ]
    return SampleRecord(
        case_id=str(header["case_id"]),
        frequency_hz=float(header["frequency_hz"]),
        variable=str(header["variable"]),
        altitude_domain_m=float(header["altitude_domain_m"]),
        scheme=NormalizationScheme.from_dict(header["scheme"]),
        input=grids[0],
        target=grids[1],
        clamp_fraction=float(header["clamp_fraction"]),
        metadata=header.get("metadata", {}),
    )


@dataclass(frozen=True)
class PredictionRecord:
    """One predicted target raster keyed to its case."""

    case_id: str
    variable: str
    values: np.ndarray
    experiment: str = ""
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.case_id:
            raise InvalidInputError("case_id must be non-empty")
        if self.variable not in VARIABLES:
            raise InvalidInputError(f"unknown variable {self.variable!r}")
        object.__setattr__(self, "values", _canonical_grid("values", self.values))
        object.__setattr__(self, "metadata", dict(self.metadata))


def write_prediction(record: PredictionRecord, path) -> None:
    payload = record.values.astype(_PAYLOAD_DTYPE).tobytes()
    header = {
        "schema_version": PREDICTION_SCHEMA_VERSION,
        "kind": "prediction",
        "tool_version": __version__,
        "case_id": record.case_id,
        "variable": record.variable,
        "experiment": record.experiment,
        "metadata": dict(record.metadata),
        "shape": [RASTER_SIZE, RASTER_SIZE],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    _atomic_write_bytes(path, header, payload)


def read_prediction(path) -> PredictionRecord:
    header, payload = _read_header_and_payload(path, "prediction")
    version = header.get("schema_version")
    if version != PREDICTION_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: prediction schema {version} unsupported "
            f"(expected {PREDICTION_SCHEMA_VERSION})"
        )
    _check_payload(path, header, payload, 1)
    values = (
        np.frombuffer(payload, _PAYLOAD_DTYPE)
        .reshape(RASTER_SIZE, RASTER_SIZE)
        .astype(np.float64)
    )
    return PredictionRecord(
        case_id=str(header["case_id"]),
        variable=str(header["variable"]),
        values=values,
        experiment=str(header.get("experiment", "")),
        metadata=header.get("metadata", {}),
    )


def frequency_label(frequency_hz: float) -> str:
    """Stable band label for manifests and reports, e.g. '10GHz'."""
    return f"{frequency_hz / 1e9:g}GHz"


@dataclass(frozen=True)
class DatasetManifest:
    """Split, counts, and file map for one built dataset."""

    seed: int
    split_fraction: float
    train_cases: tuple
    test_cases: tuple
    counts_by_frequency: Mapping
    samples: Mapping
    generation_parameters: Mapping = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_cases", tuple(self.train_cases))
        object.__setattr__(self, "test_cases", tuple(self.test_cases))
        object.__setattr__(
            self, "counts_by_frequency", dict(self.counts_by_frequency)
        )
        object.__setattr__(self, "samples", dict(self.samples))
        object.__setattr__(
            self, "generation_parameters", dict(self.generation_parameters)
        )
        overlap = set(self.train_cases) & set(self.test_cases)
        if overlap:
            raise ConfigurationError(
                f"train/test split is not a partition; shared cases: "
                f"{sorted(overlap)[:5]}"
            )
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError(
                f"split_fraction must lie in (0, 1), got {self.split_fraction}"
            )
        counts = self.counts_by_frequency
        if len(counts) == 2 and self.generation_parameters.get("band_symmetric"):
            a, b = sorted(counts.values())
            if b - a > 1:
                raise ConfigurationError(
                    f"dual-frequency build must be balanced within one case, "
                    f"got counts {counts}"
                )

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": "dataset_manifest",
            "tool_version": __version__,
            "seed": self.seed,
            "split_fraction": self.split_fraction,
            "split": {
                "train": list(self.train_cases),
                "test": list(self.test_cases),
            },
            "counts_by_frequency": dict(self.counts_by_frequency),
            "samples": dict(self.samples),
            "generation_parameters": dict(self.generation_parameters),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DatasetManifest":
        split = data.get("split", {})
        return cls(
            seed=int(data["seed"]),
            split_fraction=float(data["split_fraction"]),
            train_cases=tuple(split.get("train", ())),
            test_cases=tuple(split.get("test", ())),
            counts_by_frequency=data.get("counts_by_frequency", {}),
            samples=data.get("samples", {}),
            generation_parameters=data.get("generation_parameters", {}),
            schema_version=int(data.get("schema_version", -1)),
        )


def write_manifest(manifest: DatasetManifest, path) -> None:
    blob = json.dumps(manifest.to_dict(), sort_keys=True, indent=1).encode()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_manifest(path) -> DatasetManifest:
    try:
        with open(path, "rb") as fh:
            data = json.loads(fh.read().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: malformed manifest: {exc}") from exc
    if data.get("kind") != "dataset_manifest":
        raise CorruptionError(f"{path}: not a dataset manifest")
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise VersionError(
            f"{path}: manifest schema {version} unsupported "
            f"(expected {MANIFEST_SCHEMA_VERSION})"
        )
    return DatasetManifest.from_dict(data)


def _split_units(records: Sequence[SampleRecord]) -> dict:
    """Group case ids by split unit (profile id when available)."""
    units: dict = {}
    for rec in records:
        unit = str(rec.metadata.get("profile_id", rec.case_id))
        units.setdefault(unit, set()).add(rec.case_id)
    return units


def build_dataset(
    records: Sequence[SampleRecord],
    split_fraction: float,
    seed: int,
    out_dir,
    *,
    generation_parameters: Mapping | None = None,
) -> DatasetManifest:
    """Store records and the manifest of a deterministic split.

    The split operates on profiles (via the profile_id metadata key,
    falling back to case ids) so the same environment never appears on
    both sides. Sample files land in out_dir/samples; the manifest is
    written last as the atomicity point. On storage failure the
    partially written sample files are removed.
    """
    if not records:
        raise InvalidInputError("no records to build a dataset from")
    if not 0.0 < split_fraction < 1.0:
        raise ConfigurationError(
            f"split_fraction must lie in (0, 1), got {split_fraction}"
        )
    seen = set()
    for rec in records:
        key = (rec.case_id, rec.variable)
        if key in seen:
            raise InvalidInputError(f"duplicate sample {key}")
        seen.add(key)

    units = _split_units(records)
    unit_names = sorted(units)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unit_names))
    n_train_units = int(math.floor(len(unit_names) * split_fraction + 0.5))
    if len(unit_names) > 1:
        n_train_units = min(max(n_train_units, 1), len(unit_names) - 1)
    train_units = {unit_names[i] for i in order[:n_train_units]}

    train_cases = sorted(
        {cid for unit in train_units for cid in units[unit]}
    )
    test_cases = sorted(
        {
            cid
            for unit, cids in units.items()
            if unit not in train_units
            for cid in cids
        }
    )

    case_frequency = {}
    for rec in records:
        case_frequency[rec.case_id] = frequency_label(rec.frequency_hz)
    counts: dict = {}
    for label in case_frequency.values():
        counts[label] = counts.get(label, 0) + 1

    out_dir = os.fspath(out_dir)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    written: list[str] = []
    sample_paths: dict = {}
    try:
        for rec in sorted(records, key=lambda r: (r.case_id, r.variable)):
            rel = os.path.join("samples", f"{rec.case_id}-{rec.variable}.dws")
            full = os.path.join(out_dir, rel)
            write_sample(rec, full)
            written.append(full)
            sample_paths[f"{rec.case_id}-{rec.variable}"] = rel
    except OSError:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise

    manifest = DatasetManifest(
        seed=int(seed),
        split_fraction=float(split_fraction),
        train_cases=train_cases,
        test_cases=test_cases,
        counts_by_frequency=counts,
        samples=sample_paths,
        generation_parameters=dict(generation_parameters or {}),
    )
    write_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
