"""Versioned parameter checkpoints.

Layout: the magic line ``OPFUSE-CKPT-1``, a JSON manifest line listing
parameter names and shapes in order, then the raw little-endian float64
payloads concatenated in the same order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"OPFUSE-CKPT-1\n"


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray | Tensor]) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arrays.append((name, np.ascontiguousarray(arr, dtype=np.float64)))
    manifest = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps({"params": manifest}, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in arrays:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not an OPFUSE-CKPT-1 checkpoint")
        header = fh.readline()
        try:
            manifest = json.loads(header.decode("utf-8"))["params"]
        except (ValueError, KeyError) as exc:
            raise CheckpointError(f"{path}: corrupt checkpoint manifest") from exc
        out: dict[str, np.ndarray] = {}
        for entry in manifest:
            shape = tuple(int(d) for d in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def restore_into(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    """Load checkpoint values into live parameter tensors, validating names/shapes."""
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not match model: missing={missing} unexpected={extra}")
    for name, tensor in params.items():
        arr = values[name]
        if arr.shape != tensor.shape:
            raise CheckpointError(
                f"checkpoint shape mismatch for {name}: {arr.shape} vs {tensor.shape}")
        tensor.replace_data(arr)
