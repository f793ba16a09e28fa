"""Checkpoint format: a JSON manifest plus one binary blob of
little-endian float32 values laid out in manifest order.

The manifest records tensor names, shapes and byte offsets together with
the model config, step counter, RNG seed and free-form metadata, so a
checkpoint alone is enough to resume or evaluate a run. Round trips are
bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .model import ModelConfig, Params

CKPT_FORMAT = "DSFT-CKPT v1"


def save_checkpoint(
    stem: str | os.PathLike,
    tensors: Params,
    config: ModelConfig,
    step: int,
    seed: int,
    meta: dict | None = None,
) -> tuple[str, str]:
    """Write <stem>.json and <stem>.bin. tensors may include optimizer
    state alongside model parameters; order of insertion is preserved."""
    stem = os.fspath(stem)
    manifest_path = stem + ".json"
    blob_path = stem + ".bin"

    entries = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(data),
                }
            )
            blob.write(data)
            offset += len(data)

    manifest = {
        "format": CKPT_FORMAT,
        "blob": os.path.basename(blob_path),
        "tensors": entries,
        "model_config": config.to_json_dict(),
        "step": step,
        "rng": {"seed": seed},
        "meta": meta or {},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path, blob_path


def load_checkpoint(manifest_path: str | os.PathLike):
    """Read a checkpoint back. Returns (tensors, config, step, seed, meta)."""
    manifest_path = os.fspath(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CKPT_FORMAT:
        raise ValueError(f"not a checkpoint manifest: {manifest_path}")
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest["blob"])
    with open(blob_path, "rb") as fh:
        blob = fh.read()

    tensors: Params = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start : start + n], dtype="<f4")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    config = ModelConfig.from_json_dict(manifest["model_config"])
    return tensors, config, int(manifest["step"]), int(manifest["rng"]["seed"]), manifest["meta"]
