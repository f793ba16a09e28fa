"""Run manifests: every training/eval output directory gets exactly one
manifest recording the resolved config, input hashes, seed and artifact
paths, so any run can be reproduced or integrity-checked later."""

from __future__ import annotations

import hashlib
import json
import os

MANIFEST_NAME = "run_manifest.json"
TOOL_VERSION = "0.1.0"


class IntegrityError(RuntimeError):
    """An input no longer matches the hash recorded for it."""


def file_hash(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: str | os.PathLike,
    command: str,
    seed: int,
    config_flat: dict[str, str],
    inputs: dict[str, str],
    artifacts: dict[str, str],
) -> str:
    """inputs maps logical name -> path; each gets a recorded hash."""
    manifest = {
        "tool_version": TOOL_VERSION,
        "command": command,
        "seed": seed,
        "config": config_flat,
        "inputs": {
            name: {"path": os.path.abspath(path), "sha256": file_hash(path)}
            for name, path in inputs.items()
        },
        "artifacts": artifacts,
    }
    path = os.path.join(os.fspath(out_dir), MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path: str | os.PathLike, verify: bool = True) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if verify:
        for name, entry in manifest.get("inputs", {}).items():
            if not os.path.exists(entry["path"]):
                raise IntegrityError(f"manifest input {name!r} missing: {entry['path']}")
            actual = file_hash(entry["path"])
            if actual != entry["sha256"]:
                raise IntegrityError(
                    f"manifest input {name!r} changed on disk "
                    f"(recorded {entry['sha256'][:12]}, found {actual[:12]})"
                )
    return manifest
