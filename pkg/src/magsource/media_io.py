"""Video/clip decoding and encoding, plus dataset manifests.

Native formats:

* image-sequence directories (``*.png`` / ``*.ppm``, lexicographic order)
* ``MMC1`` raw planar clips (8-bit) and its float32 sibling ``MMF1``
* containers, only through an external decoder command that dumps PNGs

Pixels are float64 in ``[0, 1]`` with frame-major ``(T, H, W, C)`` layout.
"""

from __future__ import annotations

import json
import os
import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DataError

MMC1_MAGIC = b"MMC1"
MMF1_MAGIC = b"MMF1"
_HEADER = struct.Struct("<4s5I")  # magic, w, h, T, C, fps numerator -> 24 bytes
IMAGE_SUFFIXES = (".png", ".ppm")
SPLITS = ("train", "test")
REAL_LABEL = "real"


@dataclass
class FrameClip:
    """A ``T x H x W x C`` clip of pixels in [0, 1]."""

    pixels: np.ndarray
    fps: float = 30.0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 3:
            px = px[..., None]
        if px.ndim != 4:
            raise DataError(f"clip pixels must be 4-D (T,H,W,C), got shape {px.shape}")
        if min(px.shape[:3]) < 1:
            raise DataError(f"empty clip dimensions {px.shape}")
        if px.shape[3] not in (1, 3):
            raise DataError(f"clip must have 1 or 3 channels, got {px.shape[3]}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise DataError("clip pixels must be finite and within [0, 1]")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        self.pixels = px

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def channels(self) -> int:
        return self.pixels.shape[3]


@dataclass(frozen=True)
class DecodeConfig:
    """How to decode sources that are not natively supported.

    ``decoder_cmd`` is a command template with ``{input}`` and ``{output_dir}``
    placeholders; it must write one PNG per frame into ``output_dir``. Example:
    ``ffmpeg -loglevel error -i {input} {output_dir}/%06d.png``.
    """

    decoder_cmd: str | None = None
    fps: float = 30.0


# ---------------------------------------------------------------- raw format


def write_raw(path: str | os.PathLike, data: np.ndarray, fps: float = 30.0, *, float32: bool = False) -> None:
    """Write ``(T, H, W, C)`` data as MMC1 (8-bit) or MMF1 (float32)."""
    arr = np.asarray(data)
    if arr.ndim != 4:
        raise DataError(f"raw clip data must be 4-D, got {arr.shape}")
    t, h, w, c = arr.shape
    header = _HEADER.pack(MMF1_MAGIC if float32 else MMC1_MAGIC, w, h, t, c, int(round(fps)))
    if float32:
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    else:
        payload = quantize(arr).tobytes()
    atomic_write_bytes(Path(path), header + payload)


def read_raw(path: str | os.PathLike) -> tuple[np.ndarray, float]:
    """Read an MMC1/MMF1 file. Returns data in ``(T, H, W, C)`` and fps."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: file shorter than the 24-byte header")
    magic, w, h, t, c, fps = _HEADER.unpack_from(blob)
    if magic not in (MMC1_MAGIC, MMF1_MAGIC):
        raise DataError(f"{path}: bad magic {magic!r}")
    itemsize = 4 if magic == MMF1_MAGIC else 1
    expected = t * h * w * c * itemsize
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: header says {w}x{h}x{t}x{c} ({expected} bytes) but payload has {len(payload)} bytes"
        )
    dtype = "<f4" if itemsize == 4 else np.uint8
    arr = np.frombuffer(payload, dtype=dtype).reshape(t, h, w, c)
    if itemsize == 1:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    return arr, float(fps)


def quantize(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(Path(path), text.encode("utf-8"))


# ------------------------------------------------------------- load / save


def _load_image_dir(directory: Path, fps: float) -> FrameClip:
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"{directory}: no PNG/PPM frames found")
    frames = []
    for f in files:
        try:
            with Image.open(f) as img:
                mode = "L" if img.mode in ("L", "I", "I;16", "1") else "RGB"
                arr = np.asarray(img.convert(mode))
        except OSError as exc:
            raise DataError(f"cannot decode frame {f}: {exc}") from exc
        if frames and arr.shape != frames[0].shape:
            raise DataError(f"{f}: frame shape {arr.shape} differs from first frame {frames[0].shape}")
        frames.append(arr)
    px = np.stack(frames).astype(np.float64) / 255.0
    return FrameClip(px, fps=fps)


def load_clip(source: str | os.PathLike, decode_config: DecodeConfig | None = None) -> FrameClip:
    """Decode ``source`` into a :class:`FrameClip`."""
    cfg = decode_config or DecodeConfig()
    path = Path(source)
    if path.is_dir():
        return _load_image_dir(path, cfg.fps)
    if not path.exists():
        raise DataError(f"no such clip: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic in (MMC1_MAGIC, MMF1_MAGIC):
        data, fps = read_raw(path)
        return FrameClip(np.clip(data, 0.0, 1.0), fps=fps or cfg.fps)
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return _load_single_image(path, cfg.fps)
    if cfg.decoder_cmd is None:
        raise DataError(f"{path}: not a native format and no external decoder is configured")
    return _decode_external(path, cfg)


def _load_single_image(path: Path, fps: float) -> FrameClip:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L" if img.mode == "L" else "RGB"))
    return FrameClip(arr[None].astype(np.float64) / 255.0, fps=fps)


def _decode_external(path: Path, cfg: DecodeConfig) -> FrameClip:
    with tempfile.TemporaryDirectory(prefix="magsource-dec-") as out:
        cmd = [part.format(input=str(path), output_dir=out) for part in shlex.split(cfg.decoder_cmd)]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True)
        except OSError as exc:
            raise DataError(f"cannot run external decoder {cmd[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise DataError(f"external decoder exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
        return _load_image_dir(Path(out), cfg.fps)


def save_clip(clip: FrameClip, dest: str | os.PathLike, format: str = "mmc1") -> None:
    """Write ``clip`` to ``dest`` as ``"mmc1"`` (raw file) or ``"png"`` (directory)."""
    dest = Path(dest)
    try:
        if format == "mmc1":
            write_raw(dest, clip.pixels, clip.fps)
        elif format == "png":
            dest.mkdir(parents=True, exist_ok=True)
            q = quantize(clip.pixels)
            width = max(6, len(str(clip.frames)))
            for i, frame in enumerate(q):
                img = Image.fromarray(frame[..., 0] if clip.channels == 1 else frame)
                img.save(dest / f"{i:0{width}d}.png")
        else:
            raise DataError(f"unknown clip format {format!r}")
    except OSError as exc:
        raise DataError(f"cannot write {dest}: {exc}") from exc


# ----------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    video: Path
    landmarks: Path
    label: str
    split: str
    gender: str | None = None
    skin_tone: str | None = None

    @property
    def video_id(self) -> str:
        return self.video.stem if self.video.suffix else self.video.name


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    classes: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def class_index(self, label: str) -> int:
        return self.classes.index(label)


def class_table(labels: Sequence[str]) -> list[str]:
    """Ordered label table: ``real`` first, generators sorted after it."""
    uniq = set(labels)
    if REAL_LABEL not in uniq:
        raise DataError(f"manifest has no {REAL_LABEL!r} class (found {sorted(uniq)})")
    return [REAL_LABEL] + sorted(uniq - {REAL_LABEL})


def load_manifest(path: str | os.PathLike, *, require_files: bool = True) -> DatasetManifest:
    """Parse and validate a JSON manifest. Relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{path}: manifest must be a non-empty JSON array")
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[Path] = set()
    for i, obj in enumerate(raw):
        try:
            video = (base / obj["video"]).resolve()
            landmarks = (base / obj["landmarks"]).resolve()
            label = str(obj["label"])
            split = str(obj["split"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: entry {i} is missing key {exc}") from exc
        if split not in SPLITS:
            raise DataError(f"{path}: entry {i} has unknown split {split!r}")
        if video in seen:
            raise DataError(f"{path}: duplicate video path {video}")
        if require_files:
            for p in (video, landmarks):
                if not p.exists():
                    raise DataError(f"{path}: entry {i} references missing file {p}")
        seen.add(video)
        entries.append(
            ManifestEntry(video, landmarks, label, split, obj.get("gender"), obj.get("skin_tone"))
        )
    return DatasetManifest(entries, class_table([e.label for e in entries]))


def dump_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write ``manifest`` as JSON with paths relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent.resolve()
    rows = []
    for e in manifest.entries:
        row = {
            "video": os.path.relpath(e.video, base),
            "landmarks": os.path.relpath(e.landmarks, base),
            "label": e.label,
            "split": e.split,
        }
        if e.gender is not None:
            row["gender"] = e.gender
        if e.skin_tone is not None:
            row["skin_tone"] = e.skin_tone
        rows.append(row)
    atomic_write_text(path, json.dumps(rows, indent=1))
