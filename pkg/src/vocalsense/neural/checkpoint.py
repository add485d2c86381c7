"""JSON model checkpoints: {format_version, hyperparameters, parameters}."""

from __future__ import annotations

import json

import numpy as np

from ..errors import UnknownFormatVersion
from .tensor import Tensor

FORMAT_VERSION = 1


def save_checkpoint(path, hyperparameters: dict, params: dict) -> None:
    """Write named tensors as shape + flat float lists. Keys sort lexically."""
    blob = {
        "format_version": FORMAT_VERSION,
        "hyperparameters": hyperparameters,
        "parameters": {
            name: {
                "shape": list(np.shape(t.data if isinstance(t, Tensor) else t)),
                "values": np.asarray(
                    t.data if isinstance(t, Tensor) else t, dtype=np.float64
                ).reshape(-1).tolist(),
            }
            for name, t in params.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True, indent=1)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; rejects any format_version this build does not know."""
    with open(path) as fh:
        blob = json.load(fh)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise UnknownFormatVersion(f"checkpoint format_version {version!r}")
    params = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in blob["parameters"].items()
    }
    return blob["hyperparameters"], params
