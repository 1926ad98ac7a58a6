"""Pipeline driver: profiles -> simulation -> dataset -> reports.

Stages communicate only through files under a workspace directory, so
any stage can be rerun in isolation and external tools (for example a
trained surrogate) can drop prediction files between the dataset and
evaluation stages. Every artifact embeds the seed, tool version, and
a hash of the effective configuration.

Workspace layout:
    profiles/     generated refractivity profiles + index.json
    domains/      solver output rasters + index.json
    dataset/      sample files and the split manifest
    predictions/  exp<N>/<arm>/*.dwp prediction sets
    reports/      JSON/CSV/text reports and rendered figures
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Mapping, Sequence

import numpy as np

from ._version import __version__
from .dataset import (
    ALTITUDE_DOMAINS_M,
    VARIABLES,
    DatasetManifest,
    PredictionRecord,
    build_dataset,
    make_sample,
    read_manifest,
    read_prediction,
    write_prediction,
)
from .errors import (
    CompletenessError,
    ConfigurationError,
    DuctwaveError,
    StageDependencyError,
)
from .experiments import (
    DEFAULT_SIGNIFICANCE_PAIRS,
    convert_and_compare,
    define_experiments,
    experiment_by_id,
    format_frequency_table,
    format_report_table,
    format_significance_table,
    load_spec_samples,
    make_baseline_predictions,
    make_perfect_predictions,
    report_from_dict,
    run_experiment,
    significance_pairs,
)
from .metrics import write_metric_csv
from .pesolver import SolverConfig, run_pe, write_domain, read_domain
from .refractivity import (
    PROFILE_FAMILIES,
    default_family_spec,
    read_profile,
    sample_profile_family,
    write_profile,
)

WORKSPACE_ENV_VAR = "DUCTWAVE_WORKSPACE"

STAGES = (
    "gen-profiles",
    "simulate",
    "build-dataset",
    "evaluate",
    "compare",
    "report",
    "all",
)

BAND_FREQUENCIES_HZ = {"X": 10e9, "S": 3e9}

DEFAULT_CASE_TEMPLATE = (("X", 30.0), ("S", 30.0), ("S", 300.0))
DEFAULT_FAMILIES = ("evaporation", "surface_trilinear", "elevated", "standard")

# pipeline-owned solver fields; overriding them would desynchronize the
# case template from the runs
_RESERVED_SOLVER_FIELDS = {"frequency_hz", "output_altitude_max_m", "earth"}


def _available_cores() -> int:
    return max(os.cpu_count() or 1, 1)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs, hashable for provenance."""

    workspace: str
    dataset_path: str | None = None
    predictions_path: str | None = None
    reports_path: str | None = None
    seed: int = 0
    jobs: int = field(default_factory=_available_cores)
    n_profiles: int = 17
    families: tuple = DEFAULT_FAMILIES
    case_template: tuple = DEFAULT_CASE_TEMPLATE
    split_fraction: float = 0.824
    fdb_factor: float = 10.0
    experiments: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    solver_overrides: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.workspace:
            raise ConfigurationError("workspace path must be non-empty")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError(f"seed must be a u64, got {self.seed}")
        if int(self.jobs) < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")
        if int(self.n_profiles) < 1:
            raise ConfigurationError(
                f"n_profiles must be >= 1, got {self.n_profiles}"
            )
        families = tuple(self.families)
        if not families:
            raise ConfigurationError("families must be non-empty")
        for family in families:
            if family not in PROFILE_FAMILIES:
                raise ConfigurationError(
                    f"unknown profile family {family!r}; "
                    f"known: {', '.join(PROFILE_FAMILIES)}"
                )
        object.__setattr__(self, "families", families)
        template = tuple((str(b), float(a)) for b, a in self.case_template)
        if not template:
            raise ConfigurationError("case_template must be non-empty")
        for band, alt in template:
            if band not in BAND_FREQUENCIES_HZ:
                raise ConfigurationError(
                    f"unknown band {band!r}; known: {sorted(BAND_FREQUENCIES_HZ)}"
                )
            if alt not in ALTITUDE_DOMAINS_M:
                raise ConfigurationError(
                    f"altitude ceiling {alt} m has no normalization scheme; "
                    f"known: {ALTITUDE_DOMAINS_M}"
                )
        if len(set(template)) != len(template):
            raise ConfigurationError("case_template entries must be unique")
        object.__setattr__(self, "case_template", template)
        if not 0.0 < float(self.split_fraction) < 1.0:
            raise ConfigurationError(
                f"split_fraction must lie in (0, 1), got {self.split_fraction}"
            )
        if float(self.fdb_factor) not in (10.0, 20.0):
            raise ConfigurationError(
                f"fdb_factor must be 10 or 20, got {self.fdb_factor}"
            )
        exps = tuple(int(e) for e in self.experiments)
        known = {s.id for s in define_experiments()}
        if not exps or not set(exps) <= known:
            raise ConfigurationError(
                f"experiments must be a non-empty subset of {sorted(known)}, "
                f"got {exps}"
            )
        object.__setattr__(self, "experiments", exps)
        overrides = dict(self.solver_overrides)
        allowed = {
            f.name for f in dataclass_fields(SolverConfig)
        } - _RESERVED_SOLVER_FIELDS
        bad = set(overrides) - allowed
        if bad:
            raise ConfigurationError(
                f"solver_overrides has unknown or reserved fields: {sorted(bad)}"
            )
        object.__setattr__(self, "solver_overrides", overrides)
        paths = [
            os.path.abspath(p)
            for p in (
                self.workspace,
                self.profiles_dir,
                self.domains_dir,
                self.dataset_dir,
                self.predictions_dir,
                self.reports_dir,
            )
        ]
        if len(set(paths)) != len(paths):
            raise ConfigurationError(
                f"workspace/dataset/predictions/reports paths must be distinct: {paths}"
            )

    # -- paths ---------------------------------------------------------------

    @property
    def profiles_dir(self) -> str:
        return os.path.join(self.workspace, "profiles")

    @property
    def domains_dir(self) -> str:
        return os.path.join(self.workspace, "domains")

    @property
    def dataset_dir(self) -> str:
        return self.dataset_path or os.path.join(self.workspace, "dataset")

    @property
    def predictions_dir(self) -> str:
        return self.predictions_path or os.path.join(self.workspace, "predictions")

    @property
    def reports_dir(self) -> str:
        return self.reports_path or os.path.join(self.workspace, "reports")

    def to_dict(self) -> dict:
        return {
            "workspace": self.workspace,
            "dataset_path": self.dataset_path,
            "predictions_path": self.predictions_path,
            "reports_path": self.reports_path,
            "seed": self.seed,
            "jobs": self.jobs,
            "n_profiles": self.n_profiles,
            "families": list(self.families),
            "case_template": [[b, a] for b, a in self.case_template],
            "split_fraction": self.split_fraction,
            "fdb_factor": self.fdb_factor,
            "experiments": list(self.experiments),
            "solver_overrides": dict(self.solver_overrides),
        }

    def config_hash(self) -> str:
        # artifact locations and the parallelism degree must not change
        # the hash; only physics and sampling parameters carry provenance
        payload = self.to_dict()
        for key in ("workspace", "dataset_path", "predictions_path",
                    "reports_path", "jobs"):
            payload.pop(key)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "tool_version": __version__,
            "config_hash": self.config_hash(),
        }


_CONFIG_KEYS = {
    "workspace",
    "dataset_path",
    "predictions_path",
    "reports_path",
    "seed",
    "jobs",
    "n_profiles",
    "families",
    "case_template",
    "split_fraction",
    "fdb_factor",
    "experiments",
    "solver_overrides",
}


def config_from_mapping(data: Mapping) -> PipelineConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "families" in kwargs:
        kwargs["families"] = tuple(kwargs["families"])
    if "case_template" in kwargs:
        kwargs["case_template"] = tuple(
            (entry[0], entry[1]) for entry in kwargs["case_template"]
        )
    if "experiments" in kwargs:
        kwargs["experiments"] = tuple(kwargs["experiments"])
    if "workspace" not in kwargs:
        kwargs["workspace"] = default_workspace()
    return PipelineConfig(**kwargs)


def default_workspace() -> str:
    return os.environ.get(
        WORKSPACE_ENV_VAR, os.path.join(os.getcwd(), "ductwave-workspace")
    )


def load_config(path=None) -> PipelineConfig:
    """Config from a JSON file, or defaults rooted at the workspace."""
    if path is None:
        return PipelineConfig(workspace=default_workspace())
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return config_from_mapping(data)


# -- stage plumbing ----------------------------------------------------------


def _write_json(path, payload: Mapping) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _require_artifact(path, stage: str) -> None:
    if not os.path.exists(path):
        raise StageDependencyError(
            f"missing {path}; run stage '{stage}' first"
        )


def _map_tasks(func, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _case_id(profile_id: str, band: str, altitude_m: float) -> str:
    return f"{profile_id}-{band}-{altitude_m:g}m"


# -- stages ------------------------------------------------------------------


def stage_gen_profiles(config: PipelineConfig) -> dict:
    """Draw profiles round-robin over the configured families."""
    os.makedirs(config.profiles_dir, exist_ok=True)
    n_families = len(config.families)
    counts = [
        len(range(i, config.n_profiles, n_families)) for i in range(n_families)
    ]
    family_seeds = np.random.SeedSequence(config.seed).generate_state(n_families)
    per_family = {
        family: sample_profile_family(
            int(family_seeds[i]), default_family_spec(family), counts[i]
        )
        for i, family in enumerate(config.families)
        if counts[i] > 0
    }
    entries = []
    for j in range(config.n_profiles):
        family = config.families[j % n_families]
        profile = per_family[family][j // n_families]
        profile_id = f"prof{j:04d}"
        rel = f"{profile_id}.json"
        write_profile(profile, os.path.join(config.profiles_dir, rel))
        entries.append({"id": profile_id, "family": family, "path": rel})
    index = {
        "kind": "profile_index",
        "schema_version": 1,
        **config.provenance(),
        "profiles": entries,
    }
    _write_json(os.path.join(config.profiles_dir, "index.json"), index)
    return index


def _solver_config_for(config: PipelineConfig, band: str, altitude_m: float) -> SolverConfig:
    return SolverConfig(
        frequency_hz=BAND_FREQUENCIES_HZ[band],
        output_altitude_max_m=altitude_m,
        fdb_factor=config.fdb_factor,
        **config.solver_overrides,
    )


def stage_simulate(config: PipelineConfig) -> dict:
    """One solver run per (profile, band, ceiling) template entry."""
    index_path = os.path.join(config.profiles_dir, "index.json")
    _require_artifact(index_path, "gen-profiles")
    profile_index = _read_json(index_path)
    os.makedirs(config.domains_dir, exist_ok=True)

    tasks = []
    for entry in profile_index["profiles"]:
        profile = read_profile(
            os.path.join(config.profiles_dir, entry["path"])
        )
        for band, altitude_m in config.case_template:
            tasks.append((entry, profile, band, altitude_m))

    provenance = config.provenance()

    def run_one(task):
        entry, profile, band, altitude_m = task
        case_id = _case_id(entry["id"], band, altitude_m)
        solver_config = _solver_config_for(config, band, altitude_m)
        domain = run_pe(profile, solver_config)
        rel = f"{case_id}.dwd"
        write_domain(
            domain,
            os.path.join(config.domains_dir, rel),
            extra_metadata={
                **provenance,
                "case_id": case_id,
                "profile_id": entry["id"],
                "family": entry["family"],
                "band": band,
            },
        )
        return {
            "case_id": case_id,
            "profile_id": entry["id"],
            "profile_path": entry["path"],
            "family": entry["family"],
            "band": band,
            "frequency_hz": BAND_FREQUENCIES_HZ[band],
            "altitude_domain_m": altitude_m,
            "path": rel,
        }

    cases = _map_tasks(run_one, tasks, config.jobs)
    index = {
        "kind": "domain_index",
        "schema_version": 1,
        **provenance,
        "cases": cases,
    }
    _write_json(os.path.join(config.domains_dir, "index.json"), index)
    return index


def _template_band_symmetric(template: Sequence) -> bool:
    by_band: dict = {}
    for band, alt in template:
        by_band.setdefault(band, []).append(alt)
    lists = [sorted(v) for v in by_band.values()]
    return len(lists) == 2 and lists[0] == lists[1]


def stage_build_dataset(config: PipelineConfig) -> DatasetManifest:
    """Rasterize every simulated case into F and F_dB samples."""
    index_path = os.path.join(config.domains_dir, "index.json")
    _require_artifact(index_path, "simulate")
    domain_index = _read_json(index_path)
    provenance = config.provenance()

    records = []
    for case in domain_index["cases"]:
        profile = read_profile(
            os.path.join(config.profiles_dir, case["profile_path"])
        )
        domain = read_domain(os.path.join(config.domains_dir, case["path"]))
        for variable in VARIABLES:
            records.append(
                make_sample(
                    case["case_id"],
                    profile,
                    domain,
                    variable,
                    fdb_factor=config.fdb_factor,
                    metadata={
                        "profile_id": case["profile_id"],
                        "family": case["family"],
                        "band": case["band"],
                        **provenance,
                    },
                )
            )
    generation_parameters = {
        **provenance,
        "band_symmetric": _template_band_symmetric(config.case_template),
        "case_template": [[b, a] for b, a in config.case_template],
        "families": list(config.families),
        "n_profiles": config.n_profiles,
        "fdb_factor": config.fdb_factor,
    }
    return build_dataset(
        records,
        config.split_fraction,
        config.seed,
        config.dataset_dir,
        generation_parameters=generation_parameters,
    )


def _prediction_set_dir(config: PipelineConfig, exp_id: int, arm: str) -> str:
    return os.path.join(config.predictions_dir, f"exp{exp_id}", arm)


def _write_prediction_set(
    config: PipelineConfig, exp_id: int, arm: str, variable: str, predictions: Mapping
) -> str:
    out_dir = _prediction_set_dir(config, exp_id, arm)
    os.makedirs(out_dir, exist_ok=True)
    provenance = config.provenance()
    for case_id in sorted(predictions):
        record = PredictionRecord(
            case_id=case_id,
            variable=variable,
            values=predictions[case_id],
            experiment=str(exp_id),
            metadata={"arm": arm, **provenance},
        )
        write_prediction(record, os.path.join(out_dir, f"{case_id}.dwp"))
    return out_dir


def _load_prediction_set(dir_path) -> dict:
    out = {}
    for name in sorted(os.listdir(dir_path)):
        if not name.endswith(".dwp"):
            continue
        record = read_prediction(os.path.join(dir_path, name))
        out[record.case_id] = record.values
    return out


def _report_path(config: PipelineConfig, exp_id: int) -> str:
    return os.path.join(config.reports_dir, f"experiment-{exp_id}.json")


def stage_evaluate(config: PipelineConfig) -> dict:
    """Score built-in predictors (and any model predictions) per experiment.

    The perfect arm replays the targets (exactness check); the baseline
    arm predicts each band's mean training image. A model arm is picked
    up from predictions/exp<N>/model when present.
    """
    manifest_path = os.path.join(config.dataset_dir, "manifest.json")
    _require_artifact(manifest_path, "build-dataset")
    manifest = read_manifest(manifest_path)
    os.makedirs(config.reports_dir, exist_ok=True)

    evaluated: dict = {}
    for exp_id in config.experiments:
        spec = experiment_by_id(exp_id)
        arms: dict = {}

        perfect = make_perfect_predictions(spec, manifest, config.dataset_dir)
        if not perfect:
            raise CompletenessError(
                f"experiment {exp_id}: dataset has no matching test cases"
            )
        perfect_dir = _write_prediction_set(
            config, exp_id, "perfect", spec.variable, perfect
        )
        arms["perfect"] = run_experiment(
            spec, manifest, config.dataset_dir, _load_prediction_set(perfect_dir)
        )

        baseline = make_baseline_predictions(spec, manifest, config.dataset_dir)
        baseline_dir = _write_prediction_set(
            config, exp_id, "baseline", spec.variable, baseline
        )
        arms["baseline"] = run_experiment(
            spec, manifest, config.dataset_dir, _load_prediction_set(baseline_dir)
        )

        model_dir = _prediction_set_dir(config, exp_id, "model")
        if os.path.isdir(model_dir):
            model_predictions = _load_prediction_set(model_dir)
            if model_predictions:
                arms["model"] = run_experiment(
                    spec, manifest, config.dataset_dir, model_predictions
                )

        payload = {
            "kind": "experiment_report",
            "schema_version": 1,
            **config.provenance(),
            "experiment_id": exp_id,
            "arms": {name: rep.to_dict() for name, rep in arms.items()},
        }
        _write_json(_report_path(config, exp_id), payload)
        for name, rep in arms.items():
            rows = [
                {
                    "case_id": m.case_id,
                    "frequency": rep.case_frequencies[m.case_id],
                    "experiment": str(exp_id),
                    "mse": m.mse,
                    "ssim": m.ssim,
                    "fid": m.fid,
                }
                for m in rep.case_metrics
            ]
            write_metric_csv(
                os.path.join(
                    config.reports_dir, f"experiment-{exp_id}-{name}-cases.csv"
                ),
                rows,
            )
        evaluated[str(exp_id)] = sorted(arms)

    index = {
        "kind": "evaluation_index",
        "schema_version": 1,
        **config.provenance(),
        "experiments": evaluated,
    }
    _write_json(os.path.join(config.reports_dir, "index.json"), index)
    return index


def _load_reports(config: PipelineConfig, arm_priority=("model", "baseline", "perfect")):
    """Reports per experiment id for the best available arm."""
    index_path = os.path.join(config.reports_dir, "index.json")
    _require_artifact(index_path, "evaluate")
    index = _read_json(index_path)
    reports: dict = {}
    arms_used: dict = {}
    for exp_key, arms in index["experiments"].items():
        exp_id = int(exp_key)
        payload = _read_json(_report_path(config, exp_id))
        for arm in arm_priority:
            if arm in payload["arms"]:
                reports[exp_id] = report_from_dict(payload["arms"][arm])
                arms_used[exp_id] = arm
                break
    return reports, arms_used


def stage_compare(config: PipelineConfig) -> dict:
    """Significance tests plus the decibel-conversion study."""
    reports, arms_used = _load_reports(config)
    available_pairs = [
        pair
        for pair in DEFAULT_SIGNIFICANCE_PAIRS
        if pair[0] in reports and pair[1] in reports
    ]
    significance = (
        significance_pairs(reports, pairs=available_pairs)
        if available_pairs
        else []
    )
    sig_payload = {
        "kind": "significance_report",
        "schema_version": 1,
        **config.provenance(),
        "arms_used": {str(k): v for k, v in arms_used.items()},
        "pairs": [r.to_dict() for r in significance],
    }
    _write_json(os.path.join(config.reports_dir, "significance.json"), sig_payload)
    with open(
        os.path.join(config.reports_dir, "significance.txt"), "w", encoding="utf-8"
    ) as fh:
        fh.write(format_significance_table(significance) + "\n")

    conversion_payload: dict = {
        "kind": "conversion_report",
        "schema_version": 1,
        **config.provenance(),
    }
    if 1 in reports and 4 in reports:
        arm = arms_used[1]
        f_dir = _prediction_set_dir(config, 1, arm)
        manifest = read_manifest(os.path.join(config.dataset_dir, "manifest.json"))
        comparison = convert_and_compare(
            _load_prediction_set(f_dir),
            manifest,
            config.dataset_dir,
            native_report=reports[4],
            fdb_factor=config.fdb_factor,
        )
        conversion_payload["arm"] = arm
        conversion_payload["comparison"] = comparison.to_dict()
    else:
        conversion_payload["skipped"] = (
            "experiments 1 and 4 are both required for the conversion study; "
            f"evaluated: {sorted(reports)}"
        )
    _write_json(os.path.join(config.reports_dir, "conversion.json"), conversion_payload)
    return {"significance": sig_payload, "conversion": conversion_payload}


def _render_difference_figure(target, predicted, path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2), constrained_layout=True)
    panels = (
        (target, "target"),
        (predicted, "prediction"),
        (np.abs(predicted - target), "absolute difference"),
    )
    for ax, (image, label) in zip(axes, panels):
        shown = ax.imshow(image, origin="lower", cmap="viridis")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("range bin")
        ax.set_ylabel("altitude bin")
        fig.colorbar(shown, ax=ax, shrink=0.85)
    fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def stage_report(config: PipelineConfig) -> dict:
    """Aggregate tables and difference rasters for the evaluated arms."""
    index_path = os.path.join(config.reports_dir, "index.json")
    _require_artifact(index_path, "evaluate")
    index = _read_json(index_path)

    sections = []
    all_arm_reports: dict = {}
    for arm in ("model", "baseline", "perfect"):
        arm_reports = {}
        for exp_key in index["experiments"]:
            exp_id = int(exp_key)
            payload = _read_json(_report_path(config, exp_id))
            if arm in payload["arms"]:
                arm_reports[exp_id] = report_from_dict(payload["arms"][arm])
        if arm_reports:
            all_arm_reports[arm] = arm_reports
            sections.append(f"== {arm} predictions ==")
            sections.append(format_report_table(arm_reports))
            freq_table = format_frequency_table(arm_reports)
            if len(freq_table.splitlines()) > 1:
                sections.append("")
                sections.append("per-band means (dual-frequency experiments):")
                sections.append(freq_table)
            sections.append("")

    sig_path = os.path.join(config.reports_dir, "significance.txt")
    if os.path.exists(sig_path):
        with open(sig_path, "r", encoding="utf-8") as fh:
            sections.append("== significance comparisons ==")
            sections.append(fh.read().rstrip())
            sections.append("")

    summary = "\n".join(sections).rstrip() + "\n"
    with open(
        os.path.join(config.reports_dir, "summary.txt"), "w", encoding="utf-8"
    ) as fh:
        fh.write(summary)

    figures_dir = os.path.join(config.reports_dir, "figures")
    os.makedirs(figures_dir, exist_ok=True)
    manifest = read_manifest(os.path.join(config.dataset_dir, "manifest.json"))
    rendered = []
    for exp_key in sorted(index["experiments"], key=int):
        exp_id = int(exp_key)
        spec = experiment_by_id(exp_id)
        arm = next(
            (a for a in ("model", "baseline", "perfect") if exp_id in all_arm_reports.get(a, {})),
            None,
        )
        if arm is None:
            continue
        samples = load_spec_samples(spec, manifest, config.dataset_dir, split="test")
        if not samples:
            continue
        case_id = sorted(samples)[0]
        predictions = _load_prediction_set(
            _prediction_set_dir(config, exp_id, arm)
        )
        if case_id not in predictions:
            continue
        fig_path = os.path.join(figures_dir, f"experiment-{exp_id}.png")
        _render_difference_figure(
            samples[case_id].target,
            predictions[case_id],
            fig_path,
            f"experiment {exp_id} ({spec.variable}, "
            f"{spec.altitude_domain_m:g} m) case {case_id} [{arm}]",
        )
        rendered.append(fig_path)
    return {"summary_path": os.path.join(config.reports_dir, "summary.txt"),
            "figures": rendered}


_STAGE_FUNCTIONS = {
    "gen-profiles": stage_gen_profiles,
    "simulate": stage_simulate,
    "build-dataset": stage_build_dataset,
    "evaluate": stage_evaluate,
    "compare": stage_compare,
    "report": stage_report,
}

_STAGE_ORDER = (
    "gen-profiles",
    "simulate",
    "build-dataset",
    "evaluate",
    "compare",
    "report",
)


def run_pipeline(config: PipelineConfig, stage: str = "all"):
    """Run one stage (or all of them in order). Raises on any error."""
    if stage not in STAGES:
        raise ConfigurationError(
            f"unknown stage {stage!r}; choose from {', '.join(STAGES)}"
        )
    os.makedirs(config.workspace, exist_ok=True)
    if stage == "all":
        result = None
        for name in _STAGE_ORDER:
            result = _STAGE_FUNCTIONS[name](config)
        return result
    return _STAGE_FUNCTIONS[stage](config)


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ductwave",
        description=(
            "Radio propagation dataset pipeline: generate refractivity "
            "profiles, run the split-step solver, build normalized image "
            "datasets, and evaluate prediction sets."
        ),
    )
    parser.add_argument(
        "--config",
        metavar="PATH",
        help=f"JSON config file (workspace defaults to ${WORKSPACE_ENV_VAR})",
    )
    parser.add_argument(
        "--stage",
        choices=STAGES,
        default="all",
        help="pipeline stage to run (default: all)",
    )
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument(
        "--jobs", type=int, help="parallel solver runs (default: CPU count)"
    )
    parser.add_argument(
        "--experiment",
        type=int,
        choices=range(1, 9),
        help="restrict evaluation stages to one experiment",
    )
    parser.add_argument(
        "--fdb-factor",
        type=float,
        choices=(10.0, 20.0),
        help="decibel conversion factor (default 10)",
    )
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        updates: dict = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.jobs is not None:
            updates["jobs"] = args.jobs
        if args.experiment is not None:
            updates["experiments"] = (args.experiment,)
        if args.fdb_factor is not None:
            updates["fdb_factor"] = args.fdb_factor
        if updates:
            merged = config.to_dict()
            merged.update(updates)
            config = config_from_mapping(merged)
        run_pipeline(config, args.stage)
    except (DuctwaveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
