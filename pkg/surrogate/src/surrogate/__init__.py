"""U-Net surrogate for propagation-factor raster prediction.

Consumes a dataset produced by the propagation pipeline purely through
its on-disk formats (manifest + sample rasters) and emits prediction
rasters its evaluator can score. See `surrogate --help`.
"""

from .dataio import (
    ExperimentScope,
    Manifest,
    Sample,
    experiment_scope,
    load_scope_samples,
    read_manifest,
    read_prediction,
    read_sample,
    write_prediction,
)
from .errors import (
    ConfigurationError,
    CorruptionError,
    InvalidInputError,
    SurrogateError,
    TrainingError,
    VersionError,
)
from .model import GeneratorConfig, UNetGenerator, build_model
from .training import load_checkpoint, predict, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "SurrogateError",
    "InvalidInputError",
    "ConfigurationError",
    "CorruptionError",
    "VersionError",
    "TrainingError",
    "ExperimentScope",
    "Manifest",
    "Sample",
    "experiment_scope",
    "read_manifest",
    "read_sample",
    "load_scope_samples",
    "write_prediction",
    "read_prediction",
    "GeneratorConfig",
    "UNetGenerator",
    "build_model",
    "train",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]
