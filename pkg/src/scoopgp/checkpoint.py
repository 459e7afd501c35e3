"""Model checkpoints: one JSON file with architecture, weights, GP
hyperparameters, and reward normalization.

The payload is rebuilt in a canonical key order on every save and floats
serialize through repr, so load followed by save reproduces the file
byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

from . import tensor as T
from .gp import KernelParams
from .model import Architecture, DeepGPModel

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or version-mismatched checkpoint."""


def save_checkpoint(
    model: DeepGPModel,
    path,
    method: str,
    seed: int = 0,
    manifest_digest: str = "",
) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "seed": seed,
        "architecture": model.arch.to_dict(),
        "has_kernel": model.has_kernel,
        "normalization": {
            "reward_mean": model.reward_mean,
            "reward_std": model.reward_std,
        },
        "kernel_params": model.kp.to_dict(),
        "manifest_digest": manifest_digest,
        "weights": T.weights_to_json(dict(sorted(model.weights.items()))),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[DeepGPModel, dict]:
    """Returns (model, meta) where meta carries method and digest."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint schema {version} not supported (expected {SCHEMA_VERSION})"
        )
    arch = Architecture.from_dict(payload["architecture"])
    weights = T.weights_from_json(payload["weights"], requires_grad=True)
    model = DeepGPModel(
        arch,
        weights,
        KernelParams.from_dict(payload["kernel_params"]),
        reward_mean=payload["normalization"]["reward_mean"],
        reward_std=payload["normalization"]["reward_std"],
        has_kernel=payload["has_kernel"],
    )
    meta = {
        "method": payload["method"],
        "seed": payload["seed"],
        "manifest_digest": payload["manifest_digest"],
    }
    return model, meta
