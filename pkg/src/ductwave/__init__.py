"""Tropospheric ducting propagation datasets and evaluation tools.

The package turns modified-refractivity profiles into wide-band
propagation-factor rasters with a split-step Fourier parabolic-equation
solver, normalizes them into fixed-size image datasets, and evaluates
prediction sets (from any source) with image metrics and significance
tests. The `ductwave` command drives the whole pipeline; the modules
below expose the same functionality as a library.

    refractivity  profile models, duct parameterizations, family sampling
    pesolver      the field solver and propagation-factor extraction
    dataset       normalization schemes, rasterization, sample files, splits
    metrics       mse / ssim / feature-space distance / Welch tests
    experiments   experiment grid, reports, significance, db conversion
    cli           stage runner and command-line entry point
"""

from ._version import __version__
from .errors import (
    CompletenessError,
    ConfigurationError,
    CorruptionError,
    DataError,
    DomainCoverageError,
    DuctwaveError,
    InvalidInputError,
    NumericalError,
    StageDependencyError,
    VersionError,
)
from .refractivity import (
    DuctParameters,
    ModifiedRefractivityProfile,
    ProfileFamilySpec,
    default_family_spec,
    duct_profile,
    read_profile,
    sample_profile_family,
    standard_atmosphere_profile,
    write_profile,
)
from .pesolver import (
    EarthModel,
    LinkBudget,
    PropagationDomain,
    SolverConfig,
    f_to_fdb,
    propagation_loss,
    read_domain,
    received_power,
    run_pe,
    two_ray_reference,
    write_domain,
)
from .dataset import (
    DatasetManifest,
    NormalizationScheme,
    PredictionRecord,
    SampleRecord,
    build_dataset,
    denormalize,
    make_sample,
    normalize,
    rasterize_input,
    rasterize_target,
    read_manifest,
    read_prediction,
    read_sample,
    scheme_for,
    write_manifest,
    write_prediction,
    write_sample,
)
from .metrics import (
    FeatureBank,
    MetricValue,
    TTestResult,
    frechet_feature_distance,
    frechet_gaussian_distance,
    gaussian_statistics,
    mse,
    ssim,
    welch_t_test,
)
from .experiments import (
    ExperimentReport,
    ExperimentSpec,
    SignificanceResult,
    convert_and_compare,
    convert_prediction_to_fdb,
    define_experiments,
    experiment_by_id,
    run_experiment,
    significance_pairs,
)
from .cli import PipelineConfig, main, run_pipeline

__all__ = [
    "__version__",
    # errors
    "DuctwaveError",
    "InvalidInputError",
    "ConfigurationError",
    "DomainCoverageError",
    "NumericalError",
    "DataError",
    "CorruptionError",
    "VersionError",
    "StageDependencyError",
    "CompletenessError",
    # refractivity
    "ModifiedRefractivityProfile",
    "DuctParameters",
    "ProfileFamilySpec",
    "standard_atmosphere_profile",
    "duct_profile",
    "default_family_spec",
    "sample_profile_family",
    "write_profile",
    "read_profile",
    # solver
    "SolverConfig",
    "EarthModel",
    "PropagationDomain",
    "LinkBudget",
    "run_pe",
    "two_ray_reference",
    "f_to_fdb",
    "propagation_loss",
    "received_power",
    "write_domain",
    "read_domain",
    # dataset
    "NormalizationScheme",
    "scheme_for",
    "normalize",
    "denormalize",
    "rasterize_input",
    "rasterize_target",
    "SampleRecord",
    "PredictionRecord",
    "make_sample",
    "write_sample",
    "read_sample",
    "write_prediction",
    "read_prediction",
    "DatasetManifest",
    "build_dataset",
    "write_manifest",
    "read_manifest",
    # metrics
    "mse",
    "ssim",
    "FeatureBank",
    "frechet_feature_distance",
    "frechet_gaussian_distance",
    "gaussian_statistics",
    "welch_t_test",
    "MetricValue",
    "TTestResult",
    # experiments
    "ExperimentSpec",
    "ExperimentReport",
    "SignificanceResult",
    "define_experiments",
    "experiment_by_id",
    "run_experiment",
    "significance_pairs",
    "convert_prediction_to_fdb",
    "convert_and_compare",
    # pipeline
    "PipelineConfig",
    "run_pipeline",
    "main",
]
