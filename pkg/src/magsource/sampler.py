"""Window selection and 5-point face alignment to 112x112 crops."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, TooShortError, VideoRejected
from .media_io import FrameClip

log = logging.getLogger(__name__)

CROP_SIZE = 112
# Canonical (x, y) positions at 112x112: eye centers, nose tip, mouth corners.
TEMPLATE_112 = np.array(
    [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ]
)
ALIGN_MODES = ("per-frame", "first-frame")


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 4
    omega: int = 16
    confidence_threshold: float = 0.5
    align_mode: str = "per-frame"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.omega < 2:
            raise ConfigError(f"omega must be >= 2, got {self.omega}")
        if self.align_mode not in ALIGN_MODES:
            raise ConfigError(f"align_mode must be one of {ALIGN_MODES}, got {self.align_mode!r}")


@dataclass
class LandmarkTrack:
    """Per-frame 5-point landmarks; frames without a detection carry NaN points and 0 confidence."""

    points: np.ndarray  # (N, 5, 2)
    confidence: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.confidence)

    def valid(self, index: int, threshold: float) -> bool:
        if index < 0 or index >= len(self):
            return False
        return bool(self.confidence[index] >= threshold and np.all(np.isfinite(self.points[index])))

    @classmethod
    def constant(cls, points: np.ndarray, frames: int, confidence: float = 1.0) -> "LandmarkTrack":
        pts = np.broadcast_to(np.asarray(points, dtype=np.float64), (frames, 5, 2)).copy()
        return cls(pts, np.full(frames, confidence))


def load_landmarks(path: str | os.PathLike) -> LandmarkTrack:
    """Read a landmark sidecar: JSON array of ``{points: [[x, y] x 5], confidence}`` or ``null``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read landmarks {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"{path}: landmark sidecar must be a JSON array")
    pts = np.full((len(raw), 5, 2), np.nan)
    conf = np.zeros(len(raw))
    for i, entry in enumerate(raw):
        if entry is None:
            continue
        try:
            p = np.asarray(entry["points"], dtype=np.float64)
            c = float(entry.get("confidence", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad landmark entry {i}: {exc}") from exc
        if p.shape != (5, 2):
            raise DataError(f"{path}: entry {i} must have 5 (x, y) points, got shape {p.shape}")
        pts[i] = p
        conf[i] = c
    return LandmarkTrack(pts, conf)


def dump_landmarks(track: LandmarkTrack, path: str | os.PathLike) -> None:
    rows = []
    for p, c in zip(track.points, track.confidence):
        if not np.all(np.isfinite(p)):
            rows.append(None)
        else:
            rows.append({"points": np.round(p, 4).tolist(), "confidence": float(c)})
    Path(path).write_text(json.dumps(rows))


@dataclass
class SampleWindow:
    frames: np.ndarray  # (omega, 112, 112, 3)
    video_id: str
    start: int

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
            raise DataError(f"sample window must be (omega, 112, 112, 3), got {self.frames.shape}")

    @property
    def omega(self) -> int:
        return self.frames.shape[0]


def select_windows(total_frames: int, config: SamplerConfig) -> list[int]:
    """Start indices of ``k`` windows spread linearly from the first to the last feasible start."""
    span = total_frames - config.omega
    if span < 0:
        raise TooShortError(f"video too short: {total_frames} frames < omega={config.omega}")
    denom = max(config.k - 1, 1)
    return [min(max(i * span // denom, 0), span) for i in range(config.k)]


def estimate_similarity(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares similarity (rotation, uniform scale, translation) taking ``src`` onto ``dst``.

    Returns the 2x3 matrix ``M`` with ``dst ~ M[:, :2] @ src + M[:, 2]``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise DataError(f"landmark arrays must both be (N, 2), got {src.shape} and {dst.shape}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise DataError("landmarks contain non-finite coordinates")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    a, b = src - mu_s, dst - mu_d
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] < 1e-9 or sv[1] < 1e-6 * sv[0]:
        raise DataError("landmarks are collinear or degenerate")
    cov = b.T @ a / len(src)
    u, s, vt = np.linalg.svd(cov)
    d = np.eye(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[1, 1] = -1.0
    rot = u @ d @ vt
    scale = np.trace(np.diag(s) @ d) / (a**2).sum(1).mean()
    m = np.empty((2, 3))
    m[:, :2] = scale * rot
    m[:, 2] = mu_d - scale * rot @ mu_s
    return m


def warp_similarity(frame: np.ndarray, m: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Resample ``frame`` onto a ``size x size`` grid through the forward transform ``m`` (bilinear, zero fill)."""
    img = frame if frame.ndim == 3 else frame[..., None]
    h, w, _ = img.shape
    lin, off = m[:, :2], m[:, 2]
    inv = np.linalg.inv(lin)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out_pts = np.stack([xx.ravel() - off[0], yy.ravel() - off[1]])
    sx, sy = inv @ out_pts
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.zeros((size * size, img.shape[2]))
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)), (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (wgt > 0)
        out[ok] += wgt[ok, None] * img[yi[ok], xi[ok]]
    out = out.reshape(size, size, img.shape[2])
    return out if frame.ndim == 3 else out[..., 0]


def align_face(frame: np.ndarray, landmarks5: np.ndarray) -> np.ndarray:
    """Align ``frame`` so its 5 landmarks land on the canonical 112x112 template."""
    m = estimate_similarity(landmarks5, TEMPLATE_112)
    return np.clip(warp_similarity(frame, m), 0.0, 1.0)


def extract_samples(clip: FrameClip, track: LandmarkTrack, config: SamplerConfig, video_id: str = "video") -> list[SampleWindow]:
    """Cut ``k`` aligned windows; windows touching a frame without a usable landmark are dropped."""
    starts = select_windows(clip.frames, config)
    px = clip.pixels if clip.channels == 3 else np.repeat(clip.pixels, 3, axis=3)
    windows = []
    for start in starts:
        idx = range(start, start + config.omega)
        bad = [i for i in idx if not track.valid(i, config.confidence_threshold)]
        if bad:
            log.warning("%s: dropping window at %d (%d frames without usable landmarks)", video_id, start, len(bad))
            continue
        if config.align_mode == "first-frame":
            m = estimate_similarity(track.points[start], TEMPLATE_112)
            faces = [warp_similarity(px[i], m) for i in idx]
        else:
            faces = [warp_similarity(px[i], estimate_similarity(track.points[i], TEMPLATE_112)) for i in idx]
        windows.append(SampleWindow(np.clip(np.stack(faces), 0.0, 1.0), video_id, start))
    if not windows:
        raise VideoRejected(f"{video_id}: all {len(starts)} windows were dropped")
    return windows
