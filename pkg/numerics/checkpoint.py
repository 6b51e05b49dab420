"""Checkpoint directories: ``manifest.json`` plus one ``.ctn`` per parameter."""
from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from numerics.ctn import load_ctn, save_ctn
from numerics.tensor import Tensor

MANIFEST = "manifest.json"


def save_checkpoint(directory: Union[str, Path], kind: str, params: Mapping[str, Tensor],
                    meta: Mapping[str, Any]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, tensor in params.items():
        save_ctn(directory / f"{name}.ctn", tensor.data)
    manifest = {
        "kind": kind,
        "parameters": sorted(params),
        "created": datetime.now(timezone.utc).isoformat(),
        **meta,
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(directory: Union[str, Path], kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"No checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != kind:
        raise ValueError(f"{manifest_path}: expected a {kind} checkpoint, found {manifest.get('kind')!r}")
    arrays = {name: load_ctn(directory / f"{name}.ctn") for name in manifest["parameters"]}
    return manifest, arrays


def restore_into(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise ValueError(f"Checkpoint lacks parameters: {', '.join(missing)}")
    for name, tensor in params.items():
        if arrays[name].shape != tensor.dims:
            raise ValueError(f"Checkpoint parameter {name} has dims {arrays[name].shape}, expected {tensor.dims}")
        tensor.data = arrays[name].astype(tensor.data.dtype)
