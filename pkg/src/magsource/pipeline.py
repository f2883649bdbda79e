"""End-to-end orchestration: manifest -> windows -> magnified streams -> fused tensors -> model/report.

Intermediate results are cached on disk under keys derived from the content
hash of the inputs and the relevant config sections, so sweeps only recompute
what changed. Everything computed is rounded through float32 whether or not it
came from the cache, which keeps cached and uncached runs bit-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch

from . import deep_mag, phase_mag
from .classifier import ModelArtifact, TrainHyper, predict_samples, train
from .config import PipelineConfig
from .errors import DataError
from .evaluator import VideoRecord, VideoVerdict, aggregate, evaluate_records, psnr_analysis
from .fusion import FusedTensor, fuse, load_fused, save_fused
from .media_io import DatasetManifest, ManifestEntry, atomic_write_text, load_clip, read_raw, write_raw
from .sampler import SampleWindow, extract_samples, load_landmarks

log = logging.getLogger(__name__)

CACHE_ENV = "MAGSOURCE_CACHE"


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def digest_bytes(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(hashlib.sha256(p).digest())
    return h.hexdigest()


def file_digest(path: str | os.PathLike) -> str:
    p = Path(path)
    if p.is_dir():
        return digest_bytes(*(f.name.encode() + f.read_bytes() for f in sorted(p.iterdir()) if f.is_file()))
    return digest_bytes(p.read_bytes())


def config_key(*objs: Any) -> str:
    def norm(o):
        if dataclasses.is_dataclass(o):
            return {"__type__": type(o).__name__, **dataclasses.asdict(o)}
        return o

    return hashlib.sha256(json.dumps([norm(o) for o in objs], sort_keys=True, default=str).encode()).hexdigest()


class Cache:
    """Content-addressed store of float arrays; a ``None`` root disables caching."""

    def __init__(self, root: str | os.PathLike | None):
        self.root = Path(root) if root else None

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Cache":
        return cls(cfg.cache_dir or os.environ.get(CACHE_ENV))

    def _path(self, kind: str, key: str) -> Path:
        return self.root / kind / key[:2] / f"{key}.mmf1"

    def get(self, kind: str, key: str) -> np.ndarray | None:
        if self.root is None:
            return None
        p = self._path(kind, key)
        if not p.exists():
            return None
        return read_raw(p)[0]

    def put(self, kind: str, key: str, data: np.ndarray) -> None:
        if self.root is not None:
            write_raw(self._path(kind, key), data, fps=0, float32=True)

    def get_json(self, kind: str, key: str) -> Any:
        if self.root is None:
            return None
        p = self.root / kind / key[:2] / f"{key}.json"
        return json.loads(p.read_text()) if p.exists() else None

    def put_json(self, kind: str, key: str, value: Any) -> None:
        if self.root is not None:
            atomic_write_text(self.root / kind / key[:2] / f"{key}.json", json.dumps(value, sort_keys=True))

    def fused_path(self, key: str) -> Path | None:
        return None if self.root is None else self.root / "fused" / key[:2] / f"{key}.mmf1"


# ------------------------------------------------------------- magnifier


def magnifier_digest(model: deep_mag.Magnifier) -> str:
    from .weights import dumps, state_to_numpy

    return digest_bytes(dumps(state_to_numpy(model.state_dict())))


def train_magnifier(cfg: PipelineConfig) -> deep_mag.MagnifierWeights:
    mt = cfg.magnifier_training
    pairs = deep_mag.generate_synthetic_pairs(cfg.seed, mt.pairs, size=mt.patch)
    hyper = deep_mag.ToyTrainHyper(mt.epochs, mt.lr, mt.batch, cfg.seed)
    return deep_mag.train_toy(pairs, hyper, cfg.deep)


def load_configured_magnifier(cfg: PipelineConfig) -> deep_mag.Magnifier:
    if not cfg.deep.weights:
        raise DataError("no magnifier weights configured (train one with `train-magnifier`, pass --weights)")
    return deep_mag.load_magnifier(cfg.deep.weights, cfg.deep)


# --------------------------------------------------------------- per video


class VideoProcessor:
    """Turns one manifest entry into fused tensors, caching each stage."""

    def __init__(self, cfg: PipelineConfig, magnifier: deep_mag.Magnifier | None, cache: Cache | None = None):
        self.cfg = cfg
        self.magnifier = magnifier  # None is fine for phase-only work (PSNR analysis)
        self.mag_digest = magnifier_digest(magnifier) if magnifier is not None else None
        self.cache = cache if cache is not None else Cache.from_config(cfg)
        deep = dataclasses.replace(cfg.deep, weights=None)
        self._deep_cfg = deep

    def windows(self, video: Path, landmarks: Path, video_id: str) -> list[SampleWindow]:
        cfg = self.cfg
        vkey = config_key("windows", file_digest(video), file_digest(landmarks), cfg.sampler, cfg.decode)
        index = self.cache.get_json("windows", vkey)
        if index is not None:
            out = []
            for start in index["starts"]:
                data = self.cache.get("windows", f"{vkey}-{start}")
                if data is None:
                    break
                out.append(SampleWindow(data, video_id, start))
            else:
                return out
        clip = load_clip(video, cfg.decode)
        track = load_landmarks(landmarks)
        wins = extract_samples(clip, track, cfg.sampler, video_id)
        for w in wins:
            w.frames = _f32(w.frames)
            self.cache.put("windows", f"{vkey}-{w.start}", w.frames)
        self.cache.put_json("windows", vkey, {"starts": [w.start for w in wins]})
        return wins

    def phase_stream(self, window: SampleWindow, wkey: str) -> np.ndarray:
        key = config_key("phase", wkey, self.cfg.phase, self.cfg.pyramid)
        data = self.cache.get("phase", key)
        if data is None:
            data = _f32(phase_mag.magnify_clip(window, self.cfg.phase, self.cfg.pyramid))
            self.cache.put("phase", key, data)
        return data

    def deep_stream(self, window: SampleWindow, wkey: str) -> np.ndarray:
        key = config_key("deep", wkey, self._deep_cfg, self.mag_digest)
        data = self.cache.get("deep", key)
        if data is None:
            data = _f32(deep_mag.magnify_clip(window, self.magnifier, self.cfg.deep))
            self.cache.put("deep", key, data)
        return data

    def fused(self, video: Path, landmarks: Path, video_id: str, label: str | None = None) -> list[FusedTensor]:
        cfg = self.cfg
        base = config_key("video", file_digest(video), file_digest(landmarks), cfg.sampler, cfg.decode)
        out = []
        for w in self.windows(video, landmarks, video_id):
            wkey = f"{base}-{w.start}"
            fkey = config_key("fused", wkey, cfg.phase, cfg.pyramid, self._deep_cfg, self.mag_digest)
            path = self.cache.fused_path(fkey)
            meta = {"video_id": video_id, "window_start": w.start, "label": label, "sample_id": f"{video_id}@{w.start}"}
            if path is not None and path.exists():
                ft = load_fused(path)
                ft.meta.update(meta)
            else:
                ft = fuse(self.deep_stream(w, wkey), self.phase_stream(w, wkey), cfg.phase.t, meta)
                if path is not None:
                    save_fused(ft, path)
            out.append(ft)
        return out

    def entry(self, e: ManifestEntry) -> list[FusedTensor]:
        return self.fused(e.video, e.landmarks, e.video_id, e.label)


_WORKER: VideoProcessor | None = None


def _worker_init(cfg: PipelineConfig, weights_path: str) -> None:
    global _WORKER
    torch.set_num_threads(1)
    _WORKER = VideoProcessor(cfg, deep_mag.load_magnifier(weights_path, cfg.deep))


def _worker_entry(e: ManifestEntry) -> list[FusedTensor]:
    assert _WORKER is not None
    return _WORKER.entry(e)


def process_entries(entries: Sequence[ManifestEntry], proc: VideoProcessor) -> list[list[FusedTensor]]:
    """Fused tensors per entry, in input order. Uses a process pool when ``workers > 1`` and weights are on disk."""
    if proc.cfg.workers > 1 and proc.cfg.deep.weights and len(entries) > 1:
        with ProcessPoolExecutor(proc.cfg.workers, initializer=_worker_init, initargs=(proc.cfg, proc.cfg.deep.weights)) as pool:
            return list(pool.map(_worker_entry, entries))
    return [proc.entry(e) for e in entries]


# ------------------------------------------------------------ train / eval


def split_train_val(entries: Sequence[ManifestEntry], fraction: float, seed: int) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Deterministic per-class hold-out of ``fraction`` of the training videos."""
    rng = np.random.default_rng(seed)
    train_e, val_e = [], []
    by_label: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        by_label.setdefault(e.label, []).append(e)
    for label in sorted(by_label):
        group = by_label[label]
        n_val = int(round(len(group) * fraction))
        if len(group) - n_val < 1:
            n_val = len(group) - 1
        picked = set(rng.permutation(len(group))[:n_val].tolist())
        for i, e in enumerate(group):
            (val_e if i in picked else train_e).append(e)
    return train_e, val_e


def _labelled(manifest: DatasetManifest, entries, tensors) -> list[tuple[FusedTensor, int]]:
    out = []
    for e, fts in zip(entries, tensors):
        out += [(ft, manifest.class_index(e.label)) for ft in fts]
    return out


def train_classifier(manifest: DatasetManifest, cfg: PipelineConfig, proc: VideoProcessor) -> ModelArtifact:
    train_e, val_e = split_train_val(manifest.split("train"), cfg.classifier.val_fraction, cfg.seed)
    tr = _labelled(manifest, train_e, process_entries(train_e, proc))
    va = _labelled(manifest, val_e, process_entries(val_e, proc))
    c = cfg.classifier
    artifact = train(tr, va, manifest.classes, TrainHyper(c.epochs, c.lr, c.batch, cfg.seed), c.width_multiplier, c.dropout)
    artifact.hyper["pipeline"] = json.loads(json.dumps(cfg.to_dict(), default=str))
    return artifact


def evaluate_manifest(artifact: ModelArtifact, manifest: DatasetManifest, cfg: PipelineConfig, proc: VideoProcessor, split: str = "test"):
    entries = manifest.split(split)
    unknown = sorted({e.label for e in entries} - set(artifact.labels))
    if unknown:
        raise DataError(f"classes {unknown} are unknown to the model (labels {artifact.labels})")
    records = []
    for e, fts in zip(entries, process_entries(entries, proc)):
        preds = predict_samples(fts, artifact, cfg.classifier.batch)
        records.append(VideoRecord(e.video_id, artifact.labels.index(e.label), preds, e.gender, e.skin_tone))
    return evaluate_records(records, artifact.labels), records


def predict_video(artifact: ModelArtifact, video: Path, landmarks: Path, proc: VideoProcessor) -> VideoVerdict:
    vid = Path(video).stem
    fts = proc.fused(Path(video), Path(landmarks), vid)
    return aggregate(predict_samples(fts, artifact, proc.cfg.classifier.batch), vid, len(artifact.labels))


def psnr_by_class(manifest: DatasetManifest, cfg: PipelineConfig, proc: VideoProcessor, split: str | None = None) -> dict[str, list[float]]:
    """Per-class PSNR of phase-magnified frames against their window centres."""
    out: dict[str, list[float]] = {label: [] for label in manifest.classes}
    entries = manifest.entries if split is None else manifest.split(split)
    base_cfg = cfg
    for e in entries:
        base = config_key("video", file_digest(e.video), file_digest(e.landmarks), base_cfg.sampler, base_cfg.decode)
        for w in proc.windows(e.video, e.landmarks, e.video_id):
            stream = proc.phase_stream(w, f"{base}-{w.start}")
            out[e.label] += psnr_analysis(w.frames, stream, cfg.phase.t)
    return out


def sweep_point_config(cfg: PipelineConfig, point: dict) -> PipelineConfig:
    over: dict[str, dict] = {}
    if "m" in point:
        over["deep"] = {"m": float(point["m"])}
    if "t" in point or "alpha_p" in point:
        over["phase"] = {k: point[k] for k in ("t", "alpha_p") if k in point}
    if "k" in point:
        over["sampler"] = {"k": int(point["k"])}
    return cfg.replace(**over)


def run_point(manifest: DatasetManifest, cfg: PipelineConfig, magnifier: deep_mag.Magnifier, cache: Cache | None = None) -> dict:
    proc = VideoProcessor(cfg, magnifier, cache)
    artifact = train_classifier(manifest, cfg, proc)
    report, _ = evaluate_manifest(artifact, manifest, cfg, proc)
    return {"sample_accuracy": report.sample_accuracy, "video_accuracy": report.video_accuracy}


def iter_fused(entries: Iterable[ManifestEntry], proc: VideoProcessor):
    for e in entries:
        yield e, proc.entry(e)
