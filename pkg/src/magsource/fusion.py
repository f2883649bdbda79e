"""Merge the deep (RGB) and phase (luma) streams into the 4-channel classifier input."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .media_io import atomic_write_text, read_raw, write_raw

CHANNELS = ("deep_r", "deep_g", "deep_b", "phase_luma")
SIGMA_FLOOR = 1e-6


@dataclass
class FusedTensor:
    """``data`` is frame-major ``(T, H, W, 4)`` float32; :attr:`dims` reports ``(w, h, T, 4)``."""

    data: np.ndarray
    stats_id: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[-1] != len(CHANNELS):
            raise DataError(f"fused tensor must be (T, H, W, 4), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("fused tensor has non-finite values")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        t, h, w, c = self.data.shape
        return (w, h, t, c)


def fuse(deep_out: np.ndarray, phase_out: np.ndarray, t: int, meta: dict | None = None) -> FusedTensor:
    """Pair phase frame ``j`` with deep frame ``j + t // 2`` (the centre of its window)."""
    deep_out = np.asarray(deep_out, dtype=np.float64)
    phase_out = np.asarray(phase_out, dtype=np.float64)
    if phase_out.ndim == 3:
        phase_out = phase_out[..., None]
    if deep_out.ndim != 4 or deep_out.shape[-1] != 3 or phase_out.shape[-1] != 1:
        raise DataError(f"expected deep (T,H,W,3) and phase (T,H,W,1), got {deep_out.shape} and {phase_out.shape}")
    n = phase_out.shape[0]
    if deep_out.shape[0] != n + t - 1:
        raise DataError(f"stream length mismatch: deep {deep_out.shape[0]} != phase {n} + t - 1 = {n + t - 1}")
    if deep_out.shape[1:3] != phase_out.shape[1:3]:
        raise DataError(f"spatial mismatch: deep {deep_out.shape[1:3]} vs phase {phase_out.shape[1:3]}")
    c = t // 2
    data = np.concatenate([deep_out[c:c + n], phase_out], axis=-1)
    return FusedTensor(data, None, dict(meta or {}))


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @property
    def id(self) -> str:
        blob = json.dumps([list(self.mean), list(self.std)]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "id": self.id}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))

    @classmethod
    def identity(cls, channels: int = len(CHANNELS)) -> "NormStats":
        return cls((0.0,) * channels, (1.0,) * channels)


def fit_stats(tensors: Iterable[FusedTensor]) -> NormStats:
    """Per-channel mean and standard deviation over every voxel of ``tensors``."""
    total = None
    sq = None
    count = 0
    for ft in tensors:
        flat = ft.data.reshape(-1, ft.data.shape[-1]).astype(np.float64)
        s, s2 = flat.sum(0), (flat**2).sum(0)
        total = s if total is None else total + s
        sq = s2 if sq is None else sq + s2
        count += flat.shape[0]
    if not count:
        raise DataError("cannot fit normalization stats on an empty set")
    mean = total / count
    var = np.maximum(sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), SIGMA_FLOOR)
    return NormStats(tuple(float(v) for v in mean), tuple(float(v) for v in std))


def normalize(tensor: FusedTensor, stats: NormStats) -> FusedTensor:
    channels = tensor.data.shape[-1]
    if len(stats.mean) != channels or len(stats.std) != channels:
        raise DataError(f"stats cover {len(stats.mean)} channels but tensor has {channels}")
    return FusedTensor(_standardize(tensor.data, stats), stats.id, dict(tensor.meta))


def _standardize(data: np.ndarray, stats: NormStats) -> np.ndarray:
    mean = np.asarray(stats.mean)
    std = np.maximum(np.asarray(stats.std), SIGMA_FLOOR)
    return ((data - mean) / std).astype(np.float32)


# ------------------------------------------------------------------ caching


def save_fused(tensor: FusedTensor, path: str | Path) -> None:
    """Cache as an MMF1 float32 raw file plus ``<path>.json`` sidecar."""
    path = Path(path)
    write_raw(path, tensor.data, fps=0, float32=True)
    atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps({**tensor.meta, "stats_id": tensor.stats_id}, sort_keys=True))


def load_fused(path: str | Path) -> FusedTensor:
    path = Path(path)
    data, _ = read_raw(path)
    try:
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"missing or broken sidecar for {path}: {exc}") from exc
    stats_id = meta.pop("stats_id", None)
    return FusedTensor(data, stats_id, meta)


def stack(tensors: Sequence[FusedTensor], stats: NormStats | None = None) -> np.ndarray:
    """Batch as ``(N, 4, T, H, W)`` float32, the layout 3-D convolutions expect.

    With ``stats``, raw tensors are standardized on the way in (no intermediate copies).
    """
    if not tensors:
        raise DataError("cannot stack an empty tensor list")
    t, h, w, c = tensors[0].data.shape
    out = np.empty((len(tensors), c, t, h, w), dtype=np.float32)
    for i, ft in enumerate(tensors):
        if ft.data.shape != (t, h, w, c):
            raise DataError(f"tensor {i} has shape {ft.data.shape}, expected {(t, h, w, c)}")
        data = ft.data
        if stats is not None:
            if ft.stats_id is not None:
                raise DataError("tensor is already normalized")
            if len(stats.mean) != c:
                raise DataError(f"stats cover {len(stats.mean)} channels but tensor has {c}")
            data = _standardize(data, stats)
        out[i] = data.transpose(3, 0, 1, 2)
    return out
