"""Checkpoints: a JSON manifest plus a little-endian float64 blob in manifest order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Parameter
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, ModelParams, init_params

FORMAT = "lupi-zsar-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


def _entries(params: ModelParams):
    for name, p in params.params.items():
        yield name, "param", p.data
    for name, b in sorted(params.buffers.items()):
        yield name, "buffer", np.asarray(b)


def save_checkpoint(params: ModelParams, path) -> Path:
    """Write ``manifest.json`` and ``params.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name, kind, arr in _entries(params):
        flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        tensors.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "count": int(flat.size)})
        chunks.append(flat.tobytes())
        offset += flat.size
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": params.config.to_dict(),
        "seed": params.seed,
        "epoch": params.epoch,
        "total_values": offset,
        "tensors": tensors,
    }
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read manifest ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt manifest, not a {FORMAT} v{VERSION} file ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')!r} (expected {VERSION})")
    try:
        cfg = manifest["config"]
        config = ModelConfig(**{**cfg, "hidden_dims": tuple(cfg["hidden_dims"])})
        tensors = manifest["tensors"]
        total = int(manifest["total_values"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from exc

    blob = (path / BLOB).read_bytes() if (path / BLOB).exists() else b""
    if len(blob) < total * 8:
        raise CheckpointError(f"{path}: truncated blob, {len(blob)} bytes for {total} values")
    if len(blob) > total * 8:
        raise CheckpointError(f"{path}: blob has {len(blob) - total * 8} trailing bytes")
    values = np.frombuffer(blob, dtype="<f8")

    reference = init_params(config, 0)
    expected = {n: p.shape for n, p in reference.params.items()}
    params, buffers = {}, {}
    for t in tensors:
        name, shape = t["name"], tuple(t["shape"])
        count = int(np.prod(shape)) if shape else 1
        if count != t["count"] or t["offset"] + count > total:
            raise CheckpointError(f"{path}: inconsistent extent for {name!r}")
        arr = values[t["offset"]:t["offset"] + count].reshape(shape)
        if t["kind"] == "param":
            if expected.get(name) != shape:
                raise CheckpointError(f"{path}: {name!r} has shape {shape}, config implies {expected.get(name)}")
            params[name] = Parameter(name, arr.astype(config.np_dtype))
        else:
            buffers[name] = arr.copy()
    if list(params) != list(expected):
        raise CheckpointError(f"{path}: parameter set does not match config")
    return ModelParams(config, params, buffers, manifest.get("seed"), int(manifest.get("epoch", 0)))
