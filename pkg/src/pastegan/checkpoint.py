"""Repo-wide weight checkpoint container.

One file holds every named tensor plus a JSON manifest of dtypes and
shapes::

    bytes 0-7    magic b"PGCK0001"
    bytes 8-15   little-endian uint64 manifest length M
    next M       manifest JSON: {"tensors": {name: {dtype, shape, offset,
                 nbytes}}, "meta": {...}}
    rest         raw little-endian tensor data, offsets relative to the
                 data section start

Tensors are written in sorted name order so identical state always
produces identical bytes; run manifests store each checkpoint's sha256 and
loads verify it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PGCK0001"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.bool: "|b1",
}
_TO_TORCH = {v: k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    """Unreadable, malformed, or corrupt checkpoint."""


def save_tensors(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> Path:
    """Write named tensors and metadata to one archive file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {t.dtype}")
        code = _DTYPES[t.dtype]
        blob = t.numpy().astype(code).tobytes()
        entries[name] = {"dtype": code, "shape": list(t.shape),
                         "offset": offset, "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}},
                          sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(manifest).to_bytes(8, "little"))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)
    return path


def load_tensors(path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read an archive back into (tensors, meta)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint")
    mlen = int.from_bytes(raw[8:16], "little")
    try:
        manifest = json.loads(raw[16:16 + mlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    data = raw[16 + mlen:]
    tensors = {}
    for name, entry in manifest["tensors"].items():
        code = entry["dtype"]
        if code not in _TO_TORCH:
            raise CheckpointError(f"{path}: tensor {name!r}: unknown dtype {code}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype=code, count=count,
                            offset=entry["offset"]).reshape(entry["shape"]).copy()
        tensors[name] = torch.from_numpy(arr)
    return tensors, manifest.get("meta", {})


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_checkpoint(path, expected_sha256: str) -> None:
    """Raise CheckpointError when the file hash differs from the manifest
    entry (corrupt or tampered checkpoint)."""
    actual = sha256_file(path)
    if actual != expected_sha256:
        raise CheckpointError(
            f"{path}: integrity error: sha256 {actual[:12]}... does not match "
            f"manifest {expected_sha256[:12]}...")
