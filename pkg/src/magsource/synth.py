"""Synthetic three-class corpus for desk-scale end-to-end checks.

* ``real``: a band-limited texture drifting smoothly by a sub-pixel amount per frame
* ``genA``: the same kind of drift plus an additive periodic grating whose phase
  is redrawn every frame
* ``genB``: the same kind of drift plus per-frame random 8x8 block noise

Landmarks are constant per video (the "face" does not move in the frame; the
content inside it does), so alignment preserves the sub-pixel motion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deep_mag import random_texture
from .media_io import DatasetManifest, ManifestEntry, class_table, dump_manifest, write_raw
from .sampler import CROP_SIZE, TEMPLATE_112, LandmarkTrack, dump_landmarks

CLASSES = ("real", "genA", "genB")
SKIN_TONES = ("African American", "American", "Asian", "European", "Indian")
GENDERS = ("Men", "Women")


@dataclass(frozen=True)
class ToyCorpusConfig:
    videos_per_class: int = 60
    frames: int = 64
    size: int = 128
    test_fraction: float = 0.3
    fps: float = 30.0
    drift_speed: tuple[float, float] = (0.02, 0.06)  # px / frame
    wobble: float = 0.3  # px
    fingerprint_amplitude: float = 0.03
    grating_period: float = 4.0
    block: int = 8


def fourier_shift(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Exact circular sub-pixel translation of a periodic ``(H, W, C)`` image."""
    h, w = img.shape[:2]
    fy = np.fft.fftfreq(h)[:, None, None]
    fx = np.fft.fftfreq(w)[None, :, None]
    ramp = np.exp(-2j * np.pi * (fx * dx + fy * dy))
    return np.fft.ifft2(np.fft.fft2(img, axes=(0, 1)) * ramp, axes=(0, 1)).real


def drift_path(rng: np.random.Generator, frames: int, cfg: ToyCorpusConfig) -> np.ndarray:
    speed = rng.uniform(*cfg.drift_speed)
    heading = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(30, 60)
    phase = rng.uniform(0, 2 * np.pi)
    j = np.arange(frames)
    wob = cfg.wobble * (np.sin(2 * np.pi * j / period + phase) - np.sin(phase))
    dx = speed * np.cos(heading) * j + wob * np.cos(heading + np.pi / 2)
    dy = speed * np.sin(heading) * j + wob * np.sin(heading + np.pi / 2)
    return np.stack([dx, dy], axis=1)


def fingerprint(label: str, rng: np.random.Generator, shape: tuple[int, int], cfg: ToyCorpusConfig) -> np.ndarray:
    h, w = shape
    amp = cfg.fingerprint_amplitude
    if label == "genA":
        yy, xx = np.mgrid[0:h, 0:w]
        ph = rng.uniform(0, 2 * np.pi)
        return amp * np.sin(2 * np.pi * (xx + yy) / (cfg.grating_period * np.sqrt(2)) + ph)
    if label == "genB":
        nb = (-(-h // cfg.block), -(-w // cfg.block))
        blocks = rng.standard_normal(nb) * amp
        return np.kron(blocks, np.ones((cfg.block, cfg.block)))[:h, :w]
    return np.zeros(shape)


def render_video(label: str, rng: np.random.Generator, cfg: ToyCorpusConfig) -> np.ndarray:
    """``(T, size, size, 3)`` clip in [0, 1] for one video of class ``label``."""
    tex = random_texture(rng, cfg.size, cutoff=0.08)
    path = drift_path(rng, cfg.frames, cfg)
    out = np.empty((cfg.frames, cfg.size, cfg.size, 3))
    for j, (dx, dy) in enumerate(path):
        frame = fourier_shift(tex, dx, dy)
        frame += fingerprint(label, rng, (cfg.size, cfg.size), cfg)[..., None]
        out[j] = frame
    return np.clip(out, 0.0, 1.0)


def toy_landmarks(rng: np.random.Generator, cfg: ToyCorpusConfig) -> LandmarkTrack:
    slack = cfg.size - CROP_SIZE
    off = rng.integers(0, slack + 1, size=2)
    return LandmarkTrack.constant(TEMPLATE_112 + off, cfg.frames)


def generate_toy_corpus(out_dir: str | Path, seed: int = 0, cfg: ToyCorpusConfig = ToyCorpusConfig(), classes=CLASSES) -> Path:
    """Write clips, landmark sidecars and ``manifest.json`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_test = int(round(cfg.videos_per_class * cfg.test_fraction))
    entries = []
    for label in classes:
        test_ids = set(rng.permutation(cfg.videos_per_class)[:n_test].tolist())
        for i in range(cfg.videos_per_class):
            vid = f"{label}_{i:03d}"
            vrng = np.random.default_rng([seed, classes.index(label), i])
            clip = render_video(label, vrng, cfg)
            track = toy_landmarks(vrng, cfg)
            vpath = out / "videos" / f"{vid}.mmc1"
            lpath = out / "landmarks" / f"{vid}.json"
            write_raw(vpath, clip, cfg.fps)
            dump_landmarks(track, lpath)
            entries.append(
                ManifestEntry(
                    vpath.resolve(),
                    lpath.resolve(),
                    label,
                    "test" if i in test_ids else "train",
                    GENDERS[int(vrng.integers(len(GENDERS)))],
                    SKIN_TONES[int(vrng.integers(len(SKIN_TONES)))],
                )
            )
    manifest = DatasetManifest(entries, class_table([e.label for e in entries]))
    mpath = out / "manifest.json"
    dump_manifest(manifest, mpath)
    return mpath
