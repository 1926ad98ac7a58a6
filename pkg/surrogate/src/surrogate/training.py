"""Training and prediction for the raster-to-raster generator.

Runs are deterministic for a fixed seed on a fixed backend: model
initialization and batch shuffling draw from seeded generators, and the
CPU convolution kernels are deterministic. Different torch builds or
thread counts may round differently, so cross-machine equality is not
guaranteed, only same-machine repeatability.
"""

from __future__ import annotations

import copy
import json
import math
import os
from typing import Callable, Mapping

import numpy as np
import torch

from .dataio import (
    ExperimentScope,
    Manifest,
    TOOL_VERSION,
    experiment_scope,
    load_scope_samples,
    manifest_hash,
    read_manifest,
    write_prediction,
)
from .errors import (
    ConfigurationError,
    CorruptionError,
    InvalidInputError,
    TrainingError,
)
from .model import GeneratorConfig, build_model

CHECKPOINT_SCHEMA_VERSION = 1


def band_channel_value(frequency_hz: float, scope: ExperimentScope) -> float:
    """Constant conditioning-plane value for one case's band.

    Bands map to evenly spaced values in [0, 1] (S-band 0, X-band 1 for
    the dual-frequency experiments); single-band scopes use 0.
    """
    freqs = sorted(scope.frequencies_hz)
    if len(freqs) < 2:
        return 0.0
    span = freqs[-1] - freqs[0]
    return float((frequency_hz - freqs[0]) / span)


def samples_to_tensors(
    samples: Mapping, scope: ExperimentScope, config: GeneratorConfig
):
    """Stack parsed samples into (inputs, targets, case_ids), sorted by case."""
    if not samples:
        raise InvalidInputError("no samples to build tensors from")
    case_ids = sorted(samples)
    inputs = []
    targets = []
    for case_id in case_ids:
        sample = samples[case_id]
        planes = [sample.input.astype(np.float32)]
        if config.frequency_conditioning == "input_channel":
            value = band_channel_value(sample.frequency_hz, scope)
            planes.append(np.full_like(planes[0], value))
        inputs.append(np.stack(planes))
        targets.append(sample.target.astype(np.float32)[None, :, :])
    return (
        torch.from_numpy(np.stack(inputs)),
        torch.from_numpy(np.stack(targets)),
        case_ids,
    )


def _atomic_torch_save(payload: dict, path) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def save_checkpoint(
    path,
    model_state: Mapping,
    config: GeneratorConfig,
    scope: ExperimentScope,
    *,
    dataset_hash: str,
    loss_curve: list,
    case_ids: list,
    completed: bool,
    diverged_at_epoch: int | None = None,
) -> None:
    _atomic_torch_save(
        {
            "kind": "surrogate_checkpoint",
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "tool_version": TOOL_VERSION,
            "experiment_id": scope.id,
            "variable": scope.variable,
            "altitude_domain_m": scope.altitude_domain_m,
            "frequencies_hz": list(scope.frequencies_hz),
            "config": config.to_dict(),
            "dataset_hash": dataset_hash,
            "loss_curve": list(loss_curve),
            "train_case_ids": list(case_ids),
            "completed": completed,
            "diverged_at_epoch": diverged_at_epoch,
            "state_dict": dict(model_state),
        },
        path,
    )


def load_checkpoint(path) -> dict:
    path = os.fspath(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CorruptionError(f"{path}: unreadable checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != "surrogate_checkpoint":
        raise CorruptionError(f"{path}: not a surrogate checkpoint")
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CorruptionError(
            f"{path}: checkpoint schema {version} unsupported "
            f"(expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    return payload


def train(
    manifest_path,
    experiment_id: int,
    config: GeneratorConfig,
    checkpoint_path,
    *,
    log: Callable[[str], None] | None = None,
) -> str:
    """Fit the generator on the manifest's train split; returns the checkpoint path.

    The configured epoch count is scaled by the experiment's epochs
    multiplier (single-band scopes train twice as long). If the loss
    goes non-finite the most recent finite-epoch weights are saved and a
    TrainingError pointing at them is raised.
    """
    manifest = read_manifest(manifest_path)
    scope = experiment_scope(experiment_id)
    samples = load_scope_samples(manifest, scope, "train")
    if not samples:
        raise InvalidInputError(
            f"experiment {scope.id}: manifest has no matching train samples"
        )
    inputs, targets, case_ids = samples_to_tensors(samples, scope, config)
    dataset_hash = manifest_hash(manifest_path)

    model = build_model(config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = config.loss_module()
    shuffler = torch.Generator().manual_seed(int(config.seed) + 1)

    epochs = int(config.epochs) * scope.epochs_multiplier
    n = inputs.shape[0]
    batch = min(int(config.batch_size), n)
    loss_curve: list = []
    last_good_state = copy.deepcopy(model.state_dict())

    def fail(epoch_index: int) -> TrainingError:
        save_checkpoint(
            checkpoint_path,
            last_good_state,
            config,
            scope,
            dataset_hash=dataset_hash,
            loss_curve=loss_curve,
            case_ids=case_ids,
            completed=False,
            diverged_at_epoch=epoch_index,
        )
        return TrainingError(
            f"training loss went non-finite in epoch {epoch_index}; "
            f"last good weights saved to {checkpoint_path}",
            last_good_checkpoint=os.fspath(checkpoint_path),
        )

    for epoch in range(epochs):
        order = torch.randperm(n, generator=shuffler)
        epoch_losses = []
        for start in range(0, n, batch):
            index = order[start : start + batch]
            optimizer.zero_grad()
            predicted = model(inputs[index])
            loss = loss_fn(predicted, targets[index])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise fail(epoch)
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        if not math.isfinite(mean_loss):
            raise fail(epoch)
        loss_curve.append(mean_loss)
        last_good_state = copy.deepcopy(model.state_dict())
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {mean_loss:.6f}")

    save_checkpoint(
        checkpoint_path,
        model.state_dict(),
        config,
        scope,
        dataset_hash=dataset_hash,
        loss_curve=loss_curve,
        case_ids=case_ids,
        completed=True,
    )
    return os.fspath(checkpoint_path)


def predict(
    checkpoint_path,
    manifest_path,
    out_dir,
    *,
    split: str = "test",
    batch_size: int = 4,
) -> dict:
    """Write one prediction raster per matching case; returns case->path.

    The checkpoint's experiment scope selects the cases. A manifest
    with no samples in that scope is a configuration error (wrong
    dataset for this model).
    """
    payload = load_checkpoint(checkpoint_path)
    config = GeneratorConfig.from_dict(payload["config"])
    scope = experiment_scope(payload["experiment_id"])
    manifest = read_manifest(manifest_path)
    samples = load_scope_samples(manifest, scope, split)
    if not samples:
        raise ConfigurationError(
            f"manifest has no {split} samples in the checkpoint's scope "
            f"(experiment {scope.id}: {scope.variable} at "
            f"{scope.altitude_domain_m:g} m)"
        )
    inputs, _, case_ids = samples_to_tensors(samples, scope, config)

    model = build_model(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written: dict = {}
    with torch.no_grad():
        for start in range(0, len(case_ids), batch_size):
            block = model(inputs[start : start + batch_size]).numpy()
            for offset, case_id in enumerate(case_ids[start : start + batch_size]):
                path = os.path.join(out_dir, f"{case_id}.dwp")
                write_prediction(
                    path,
                    case_id,
                    scope.variable,
                    block[offset, 0],
                    experiment=str(scope.id),
                    metadata={
                        "model": "unet-surrogate",
                        "tool_version": TOOL_VERSION,
                        "seed": config.seed,
                        "dataset_hash": payload["dataset_hash"],
                    },
                )
                written[case_id] = path

    index = {
        "kind": "prediction_manifest",
        "schema_version": 1,
        "tool_version": TOOL_VERSION,
        "experiment_id": scope.id,
        "variable": scope.variable,
        "split": split,
        "seed": config.seed,
        "dataset_hash": payload["dataset_hash"],
        "cases": {case_id: os.path.basename(p) for case_id, p in written.items()},
    }
    tmp = os.path.join(out_dir, "predictions.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, os.path.join(out_dir, "predictions.json"))
    return written
