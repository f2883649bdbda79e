"""MMW1 weight container.

Layout (little-endian)::

    "MMW1"  u32 tensor_count
    per tensor: u32 name_len, name bytes (utf-8), u32 rank, u32 dims[rank], f32 data
    optional trailer: u32 json_len, json bytes (utf-8 metadata)

Tensors are stored in insertion order so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DataError
from .media_io import atomic_write_bytes

MAGIC = b"MMW1"
FORMAT_VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4").copy(order="C")
        if not np.all(np.isfinite(a)):
            raise DataError(f"tensor {name!r} has non-finite values")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes())
    if metadata is not None:
        blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any] | None]:
    if blob[:4] != MAGIC:
        raise DataError(f"not an MMW1 weight file (magic {blob[:4]!r})")
    pos = 4
    try:
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if pos + 4 * n > len(blob):
                raise DataError(f"weight file truncated inside tensor {name!r}")
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
            pos += 4 * n
        metadata = None
        if pos < len(blob):
            (mlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            metadata = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    except struct.error as exc:
        raise DataError(f"weight file truncated: {exc}") from exc
    return tensors, metadata


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> None:
    try:
        atomic_write_bytes(Path(path), dumps(tensors, metadata))
    except OSError as exc:
        raise DataError(f"cannot write weights to {path}: {exc}") from exc


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any] | None]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weights {path}: {exc}") from exc
    return loads(blob)


def state_to_numpy(state: Mapping[str, Any]) -> dict[str, np.ndarray]:
    """Torch ``state_dict`` -> float32 arrays (integer buffers are stored as floats)."""
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in state.items()}


def numpy_to_state(tensors: Mapping[str, np.ndarray], reference: Mapping[str, Any]) -> dict[str, Any]:
    """Inverse of :func:`state_to_numpy`, casting back to the dtypes of ``reference``."""
    import torch

    missing = set(reference) - set(tensors)
    extra = set(tensors) - set(reference)
    if missing or extra:
        raise DataError(f"weight/config mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    out = {}
    for k, ref in reference.items():
        arr = tensors[k]
        if tuple(arr.shape) != tuple(ref.shape):
            raise DataError(f"weight/config mismatch for {k}: file {arr.shape} vs model {tuple(ref.shape)}")
        out[k] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype)
    return out
