"""The eight evaluation experiments and their aggregate reports.

Each experiment names a target variable, an altitude ceiling, and a
band set; evaluation scores a prediction set against the test split of
a built dataset, averages the three metrics per experiment and per
band, and runs the configured significance comparisons. A conversion
study rescores decibel-converted linear predictions against native
decibel targets.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import (
    SampleRecord,
    denormalize,
    frequency_label,
    normalize,
    read_sample,
    scheme_for,
    DatasetManifest,
    VARIABLES,
)
from .errors import (
    CompletenessError,
    ConfigurationError,
    InvalidInputError,
)
from .metrics import FeatureBank, MetricValue, TTestResult, mse, ssim, welch_t_test
from .metrics import frechet_feature_distance
from .pesolver import f_to_fdb

S_BAND_HZ = 3e9
X_BAND_HZ = 10e9
KNOWN_BANDS_HZ = (S_BAND_HZ, X_BAND_HZ)

# feature bank seed shared by every report so FID values are comparable
DEFAULT_BANK_SEED = 7919

DEFAULT_SIGNIFICANCE_PAIRS = ((1, 2), (1, 3), (4, 5), (4, 6))
METRIC_NAMES = ("mse", "ssim", "fid")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment definition: variable, ceiling, and band set."""

    id: int
    variable: str
    altitude_domain_m: float
    frequencies_hz: tuple

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ConfigurationError(f"experiment id must be >= 1, got {self.id}")
        if self.variable not in VARIABLES:
            raise ConfigurationError(f"unknown variable {self.variable!r}")
        freqs = tuple(sorted(float(f) for f in self.frequencies_hz))
        if not freqs:
            raise ConfigurationError("experiment needs at least one frequency")
        for f in freqs:
            if f not in KNOWN_BANDS_HZ:
                raise ConfigurationError(
                    f"frequency {f} Hz is not one of the known bands "
                    f"{KNOWN_BANDS_HZ}"
                )
        object.__setattr__(self, "frequencies_hz", freqs)

    @property
    def epochs_multiplier(self) -> int:
        # single-band experiments train twice as long
        return 2 if len(self.frequencies_hz) == 1 else 1

    @property
    def band_labels(self) -> tuple:
        return tuple(frequency_label(f) for f in self.frequencies_hz)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "variable": self.variable,
            "altitude_domain_m": self.altitude_domain_m,
            "frequencies_hz": list(self.frequencies_hz),
            "epochs_multiplier": self.epochs_multiplier,
        }


_EXPERIMENT_TABLE = (
    (1, "F", 30.0, (X_BAND_HZ, S_BAND_HZ)),
    (2, "F", 30.0, (X_BAND_HZ,)),
    (3, "F", 30.0, (S_BAND_HZ,)),
    (4, "F_dB", 30.0, (X_BAND_HZ, S_BAND_HZ)),
    (5, "F_dB", 30.0, (X_BAND_HZ,)),
    (6, "F_dB", 30.0, (S_BAND_HZ,)),
    (7, "F", 300.0, (S_BAND_HZ,)),
    (8, "F_dB", 300.0, (S_BAND_HZ,)),
)


def define_experiments() -> tuple:
    """The fixed eight experiment definitions."""
    return tuple(
        ExperimentSpec(id=i, variable=v, altitude_domain_m=a, frequencies_hz=f)
        for i, v, a, f in _EXPERIMENT_TABLE
    )


def experiment_by_id(experiment_id: int) -> ExperimentSpec:
    for spec in define_experiments():
        if spec.id == int(experiment_id):
            return spec
    raise ConfigurationError(f"no experiment with id {experiment_id}")


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class ExperimentReport:
    """Per-case metrics plus experiment-level and per-band means."""

    spec: ExperimentSpec
    case_metrics: tuple
    case_frequencies: Mapping
    averages: Mapping
    per_frequency: Mapping

    def __post_init__(self) -> None:
        object.__setattr__(self, "case_metrics", tuple(self.case_metrics))
        object.__setattr__(self, "case_frequencies", dict(self.case_frequencies))
        object.__setattr__(self, "averages", dict(self.averages))
        object.__setattr__(
            self, "per_frequency", {k: dict(v) for k, v in self.per_frequency.items()}
        )
        if not self.case_metrics:
            raise InvalidInputError("report needs at least one case")
        for name in METRIC_NAMES:
            direct = _mean([getattr(m, name) for m in self.case_metrics])
            if abs(direct - self.averages[name]) > 1e-12:
                raise InvalidInputError(
                    f"average {name} does not match its per-case mean"
                )

    @property
    def n_cases(self) -> int:
        return len(self.case_metrics)

    def metric_population(self, name: str) -> list:
        if name not in METRIC_NAMES:
            raise InvalidInputError(f"unknown metric {name!r}")
        return [getattr(m, name) for m in self.case_metrics]

    def to_dict(self) -> dict:
        return {
            "experiment": self.spec.to_dict(),
            "n_cases": self.n_cases,
            "averages": dict(self.averages),
            "per_frequency": {k: dict(v) for k, v in self.per_frequency.items()},
            "cases": [
                {
                    "case_id": m.case_id,
                    "frequency": self.case_frequencies[m.case_id],
                    "mse": m.mse,
                    "ssim": m.ssim,
                    "fid": m.fid,
                }
                for m in self.case_metrics
            ],
        }


def report_from_dict(data: Mapping) -> ExperimentReport:
    """Rebuild a report from its to_dict form (for on-disk round trips)."""
    exp = data["experiment"]
    spec = ExperimentSpec(
        id=int(exp["id"]),
        variable=str(exp["variable"]),
        altitude_domain_m=float(exp["altitude_domain_m"]),
        frequencies_hz=tuple(exp["frequencies_hz"]),
    )
    case_metrics = tuple(
        MetricValue(
            case_id=str(c["case_id"]),
            mse=float(c["mse"]),
            ssim=float(c["ssim"]),
            fid=float(c["fid"]),
        )
        for c in data["cases"]
    )
    case_frequencies = {
        str(c["case_id"]): str(c["frequency"]) for c in data["cases"]
    }
    return ExperimentReport(
        spec=spec,
        case_metrics=case_metrics,
        case_frequencies=case_frequencies,
        averages=data["averages"],
        per_frequency=data["per_frequency"],
    )


def load_spec_samples(
    spec: ExperimentSpec,
    manifest: DatasetManifest,
    dataset_dir,
    *,
    split: str = "test",
) -> dict:
    """Samples of the split matching the experiment definition, by case id."""
    if split == "test":
        wanted_cases = set(manifest.test_cases)
    elif split == "train":
        wanted_cases = set(manifest.train_cases)
    else:
        raise InvalidInputError(f"split must be 'train' or 'test', got {split!r}")
    out: dict = {}
    root = os.fspath(dataset_dir)
    for key, rel in manifest.samples.items():
        case_id, _, variable = key.rpartition("-")
        if variable != spec.variable or case_id not in wanted_cases:
            continue
        record = read_sample(os.path.join(root, rel))
        if record.altitude_domain_m != spec.altitude_domain_m:
            continue
        if float(record.frequency_hz) not in spec.frequencies_hz:
            continue
        out[record.case_id] = record
    return out


def _evaluate_cases(
    spec: ExperimentSpec,
    samples: Mapping,
    predictions: Mapping,
    bank: FeatureBank,
) -> ExperimentReport:
    missing = sorted(set(samples) - set(predictions))
    if missing:
        raise CompletenessError(
            f"experiment {spec.id}: missing predictions for "
            f"{len(missing)} test cases: {missing[:10]}"
        )
    case_metrics = []
    case_frequencies = {}
    for case_id in sorted(samples):
        record = samples[case_id]
        predicted = np.asarray(predictions[case_id], dtype=np.float64)
        target = record.target
        case_metrics.append(
            MetricValue(
                case_id=case_id,
                mse=mse(predicted, target),
                ssim=ssim(predicted, target),
                fid=frechet_feature_distance(predicted, target, bank),
            )
        )
        case_frequencies[case_id] = frequency_label(record.frequency_hz)

    averages = {
        name: _mean([getattr(m, name) for m in case_metrics])
        for name in METRIC_NAMES
    }
    per_frequency: dict = {}
    for label in sorted(set(case_frequencies.values())):
        subset = [
            m for m in case_metrics if case_frequencies[m.case_id] == label
        ]
        stats = {
            name: _mean([getattr(m, name) for m in subset])
            for name in METRIC_NAMES
        }
        stats["count"] = len(subset)
        per_frequency[label] = stats
    return ExperimentReport(
        spec=spec,
        case_metrics=tuple(case_metrics),
        case_frequencies=case_frequencies,
        averages=averages,
        per_frequency=per_frequency,
    )


def run_experiment(
    spec: ExperimentSpec,
    manifest: DatasetManifest,
    dataset_dir,
    predictions: Mapping,
    *,
    bank: FeatureBank | None = None,
) -> ExperimentReport:
    """Score a prediction set against the experiment's test cases.

    predictions maps case id to a normalized 256x256 raster. Every
    matching test case must be covered; extras are ignored.
    """
    samples = load_spec_samples(spec, manifest, dataset_dir, split="test")
    if not samples:
        raise CompletenessError(
            f"experiment {spec.id}: no test cases in the dataset match "
            f"variable {spec.variable} at {spec.altitude_domain_m} m, "
            f"bands {spec.band_labels}"
        )
    return _evaluate_cases(
        spec, samples, predictions, bank or FeatureBank(DEFAULT_BANK_SEED)
    )


@dataclass(frozen=True)
class SignificanceResult:
    """One Welch comparison between two experiments on one metric."""

    experiment_a: int
    experiment_b: int
    metric: str
    result: TTestResult

    def to_dict(self) -> dict:
        return {
            "experiment_a": self.experiment_a,
            "experiment_b": self.experiment_b,
            "metric": self.metric,
            "t_statistic": self.result.t_statistic,
            "degrees_of_freedom": self.result.degrees_of_freedom,
            "p_value": self.result.p_value,
            "degenerate": self.result.degenerate,
        }


def significance_pairs(
    reports: Mapping,
    *,
    pairs: Sequence = DEFAULT_SIGNIFICANCE_PAIRS,
) -> list:
    """Welch tests on all three metric populations per configured pair.

    reports maps experiment id to ExperimentReport; missing ids raise.
    Output order follows the pair order, metrics in (mse, ssim, fid)
    order within each pair.
    """
    out = []
    for id_a, id_b in pairs:
        if id_a not in reports or id_b not in reports:
            raise InvalidInputError(
                f"significance pair ({id_a}, {id_b}) needs both reports; "
                f"have {sorted(reports)}"
            )
        rep_a = reports[id_a]
        rep_b = reports[id_b]
        for name in METRIC_NAMES:
            out.append(
                SignificanceResult(
                    experiment_a=id_a,
                    experiment_b=id_b,
                    metric=name,
                    result=welch_t_test(
                        rep_a.metric_population(name),
                        rep_b.metric_population(name),
                    ),
                )
            )
    return out


@dataclass(frozen=True)
class ConversionComparison:
    """Decibel-converted linear predictions vs native decibel results."""

    converted_metrics: tuple
    native_metrics: tuple
    converted_averages: Mapping
    native_averages: Mapping
    clamp_fractions: Mapping
    case_ids: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "converted_metrics", tuple(self.converted_metrics))
        object.__setattr__(self, "native_metrics", tuple(self.native_metrics))
        object.__setattr__(self, "converted_averages", dict(self.converted_averages))
        object.__setattr__(self, "native_averages", dict(self.native_averages))
        object.__setattr__(self, "clamp_fractions", dict(self.clamp_fractions))
        object.__setattr__(self, "case_ids", tuple(self.case_ids))

    def to_dict(self) -> dict:
        return {
            "case_ids": list(self.case_ids),
            "converted_averages": dict(self.converted_averages),
            "native_averages": dict(self.native_averages),
            "clamp_fractions": dict(self.clamp_fractions),
            "converted": [
                {"case_id": m.case_id, "mse": m.mse, "ssim": m.ssim, "fid": m.fid}
                for m in self.converted_metrics
            ],
            "native": [
                {"case_id": m.case_id, "mse": m.mse, "ssim": m.ssim, "fid": m.fid}
                for m in self.native_metrics
            ],
        }


def convert_prediction_to_fdb(
    normalized_f,
    altitude_domain_m: float,
    *,
    fdb_factor: float = 10.0,
):
    """Normalized F raster -> normalized F_dB raster (with clamp fraction)."""
    f_scheme = scheme_for("F", altitude_domain_m)
    fdb_scheme = scheme_for("F_dB", altitude_domain_m)
    physical_f = denormalize(np.asarray(normalized_f, np.float64), f_scheme, "target")
    # the floor inside the conversion also absorbs slightly negative
    # values that the affine denormalization cannot produce from [0,1]
    fdb, _ = f_to_fdb(np.clip(physical_f, 0.0, None), factor=fdb_factor)
    return normalize(fdb, fdb_scheme, "target")


def convert_and_compare(
    f_predictions: Mapping,
    manifest: DatasetManifest,
    dataset_dir,
    *,
    f_spec: ExperimentSpec | None = None,
    native_report: ExperimentReport | None = None,
    fdb_factor: float = 10.0,
    bank: FeatureBank | None = None,
) -> ConversionComparison:
    """Convert linear-variable predictions to decibels and rescore them.

    Predictions come from an Experiment-1 style run (normalized F).
    Each is denormalized, converted elementwise, renormalized under the
    decibel scheme, and scored against the case's native F_dB target.
    When a native decibel report is supplied, its per-case metrics over
    the shared case ids are emitted side by side.
    """
    spec = f_spec or experiment_by_id(1)
    if spec.variable != "F":
        raise ConfigurationError(
            f"conversion study starts from an F experiment, got {spec.variable}"
        )
    fdb_spec = ExperimentSpec(
        id=spec.id,
        variable="F_dB",
        altitude_domain_m=spec.altitude_domain_m,
        frequencies_hz=spec.frequencies_hz,
    )
    fdb_samples = load_spec_samples(fdb_spec, manifest, dataset_dir, split="test")
    if not fdb_samples:
        raise CompletenessError(
            "conversion study found no native F_dB test samples to compare against"
        )
    missing = sorted(set(fdb_samples) - set(f_predictions))
    if missing:
        raise CompletenessError(
            f"conversion study: missing F predictions for {missing[:10]}"
        )
    bank = bank or FeatureBank(DEFAULT_BANK_SEED)
    converted_metrics = []
    clamp_fractions = {}
    for case_id in sorted(fdb_samples):
        record = fdb_samples[case_id]
        converted, clamp_fraction = convert_prediction_to_fdb(
            f_predictions[case_id],
            record.altitude_domain_m,
            fdb_factor=fdb_factor,
        )
        clamp_fractions[case_id] = clamp_fraction
        converted_metrics.append(
            MetricValue(
                case_id=case_id,
                mse=mse(converted, record.target),
                ssim=ssim(converted, record.target),
                fid=frechet_feature_distance(converted, record.target, bank),
            )
        )
    case_ids = tuple(sorted(fdb_samples))
    converted_averages = {
        name: _mean([getattr(m, name) for m in converted_metrics])
        for name in METRIC_NAMES
    }
    native_metrics: tuple = ()
    native_averages: dict = {}
    if native_report is not None:
        by_case = {m.case_id: m for m in native_report.case_metrics}
        missing_native = sorted(set(case_ids) - set(by_case))
        if missing_native:
            raise CompletenessError(
                f"native report lacks cases {missing_native[:10]}"
            )
        native_metrics = tuple(by_case[c] for c in case_ids)
        native_averages = {
            name: _mean([getattr(m, name) for m in native_metrics])
            for name in METRIC_NAMES
        }
    return ConversionComparison(
        converted_metrics=tuple(converted_metrics),
        native_metrics=native_metrics,
        converted_averages=converted_averages,
        native_averages=native_averages,
        clamp_fractions=clamp_fractions,
        case_ids=case_ids,
    )


def make_perfect_predictions(
    spec: ExperimentSpec, manifest: DatasetManifest, dataset_dir
) -> dict:
    """Predictions equal to the test targets (upper bound)."""
    samples = load_spec_samples(spec, manifest, dataset_dir, split="test")
    return {case_id: rec.target.copy() for case_id, rec in samples.items()}


def make_baseline_predictions(
    spec: ExperimentSpec, manifest: DatasetManifest, dataset_dir
) -> dict:
    """Per-band mean training image as the prediction for every test case.

    A deliberately weak floor: any learned model worth reporting should
    beat a constant image, so scoring this arm alongside real
    predictions demonstrates the metrics can discriminate.
    """
    train = load_spec_samples(spec, manifest, dataset_dir, split="train")
    if not train:
        raise CompletenessError(
            f"experiment {spec.id}: no training samples to build a baseline from"
        )
    sums: dict = {}
    counts: dict = {}
    for rec in train.values():
        label = frequency_label(rec.frequency_hz)
        if label not in sums:
            sums[label] = np.zeros_like(rec.target)
            counts[label] = 0
        sums[label] += rec.target
        counts[label] += 1
    means = {label: sums[label] / counts[label] for label in sums}
    overall = sum(sums.values()) / sum(counts.values())

    test = load_spec_samples(spec, manifest, dataset_dir, split="test")
    out = {}
    for case_id, rec in test.items():
        label = frequency_label(rec.frequency_hz)
        out[case_id] = means.get(label, overall).copy()
    return out


def format_report_table(reports: Mapping) -> str:
    """Experiment-level means, one row per experiment, three decimals."""
    lines = ["experiment  variable  altitude  bands       mse     fid     ssim"]
    for exp_id in sorted(reports):
        rep = reports[exp_id]
        spec = rep.spec
        bands = "+".join(spec.band_labels)
        lines.append(
            f"{exp_id:>10d}  {spec.variable:<8s}  {spec.altitude_domain_m:>6.0f} m"
            f"  {bands:<10s}"
            f"  {rep.averages['mse']:.3f}  {rep.averages['fid']:.3f}"
            f"  {rep.averages['ssim']:.3f}"
        )
    return "\n".join(lines)


def format_frequency_table(reports: Mapping) -> str:
    """Per-band means for dual-frequency experiments."""
    lines = ["experiment  band     mse     fid     ssim   cases"]
    for exp_id in sorted(reports):
        rep = reports[exp_id]
        if len(rep.spec.frequencies_hz) < 2:
            continue
        for label in sorted(rep.per_frequency):
            stats = rep.per_frequency[label]
            lines.append(
                f"{exp_id:>10d}  {label:<6s}"
                f"  {stats['mse']:.3f}  {stats['fid']:.3f}  {stats['ssim']:.3f}"
                f"  {stats['count']:>5d}"
            )
    return "\n".join(lines)


def format_significance_table(results: Sequence) -> str:
    lines = ["pair      metric  t_statistic  p_value"]
    for res in results:
        lines.append(
            f"{res.experiment_a} vs {res.experiment_b}"
            f"  {res.metric:<6s}  {res.result.t_statistic:>11.4f}"
            f"  {res.result.p_value:.6g}"
        )
    return "\n".join(lines)
