"""Learned encoder / manipulator / decoder motion magnifier and its toy trainer.

The encoder splits a frame into a *shape* and a *texture* representation at half
resolution. Motion is magnified by extrapolating the shape difference between a
reference frame and the current frame; the decoder rebuilds the frame from the
current texture and the manipulated shape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import weights as mmw
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

MODES = ("dynamic", "static")


@dataclass(frozen=True)
class DeepMagConfig:
    m: float = 2.0
    mode: str = "dynamic"
    stem_width: int = 16
    rep_width: int = 32
    weights: str | None = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"magnification m must be >= 1, got {self.m}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.stem_width < 1 or self.rep_width < 1:
            raise ConfigError("channel widths must be positive")

    @property
    def alpha(self) -> float:
        return self.m - 1.0


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="reflect")


class ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = _conv(width, width)
        self.conv2 = _conv(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


class Encoder(nn.Module):
    def __init__(self, stem: int = 16, rep: int = 32):
        super().__init__()
        self.conv1 = _conv(3, stem)
        self.conv2 = _conv(stem, rep, stride=2)
        self.conv3 = _conv(rep, rep)
        self.shape_head = _conv(rep, rep)
        self.texture_head = _conv(rep, rep)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        h = F.relu(self.conv3(h))
        return self.shape_head(h), F.relu(self.texture_head(h))


class Decoder(nn.Module):
    def __init__(self, stem: int = 16, rep: int = 32):
        super().__init__()
        self.merge = _conv(2 * rep, rep)
        self.res1 = ResBlock(rep)
        self.res2 = ResBlock(rep)
        self.up_conv = _conv(rep, stem)
        self.out_conv = _conv(stem, 3)

    def forward(self, texture: torch.Tensor, shape: torch.Tensor) -> torch.Tensor:
        if texture.shape != shape.shape:
            raise DataError(f"texture {tuple(texture.shape)} and shape {tuple(shape.shape)} representations differ")
        h = F.relu(self.merge(torch.cat([texture, shape], dim=1)))
        h = self.res2(self.res1(h))
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = F.relu(self.up_conv(h))
        return self.out_conv(h)


def manipulate(shape_a, shape_b, alpha: float):
    """``shape_a + (1 + alpha) * (shape_b - shape_a)``; works on tensors and arrays."""
    if tuple(shape_a.shape) != tuple(shape_b.shape):
        raise DataError(f"shape representations differ: {tuple(shape_a.shape)} vs {tuple(shape_b.shape)}")
    return shape_a + (1.0 + alpha) * (shape_b - shape_a)


class Magnifier(nn.Module):
    def __init__(self, config: DeepMagConfig = DeepMagConfig()):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.stem_width, config.rep_width)
        self.decoder = Decoder(config.stem_width, config.rep_width)

    def forward(self, ref: torch.Tensor, cur: torch.Tensor, alpha: torch.Tensor | float) -> torch.Tensor:
        s_ref, _ = self.encoder(ref)
        s_cur, t_cur = self.encoder(cur)
        if torch.is_tensor(alpha) and alpha.ndim == 1:
            alpha = alpha.view(-1, 1, 1, 1)
        return self.decoder(t_cur, manipulate(s_ref, s_cur, alpha))

    def autoencode(self, x: torch.Tensor) -> torch.Tensor:
        s, t = self.encoder(x)
        return self.decoder(t, s)


# ----------------------------------------------------------- numpy wrappers


def _to_torch(frames: np.ndarray) -> torch.Tensor:
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[-1] != 3:
        raise DataError(f"deep magnifier expects RGB frames, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def _to_numpy(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float64)


def encode(frame: np.ndarray, model: Magnifier) -> tuple[np.ndarray, np.ndarray]:
    """``(H, W, 3)`` frame -> (shape, texture) as ``(C, H/2, W/2)`` arrays."""
    with torch.no_grad():
        s, t = model.encoder(_to_torch(frame))
    return s[0].numpy().astype(np.float64), t[0].numpy().astype(np.float64)


def decode(texture: np.ndarray, shape: np.ndarray, model: Magnifier) -> np.ndarray:
    """Inverse of :func:`encode`: ``(C, h, w)`` representations -> ``(2h, 2w, 3)`` frame in [0, 1]."""
    with torch.no_grad():
        out = model.decoder(
            torch.as_tensor(np.asarray(texture, np.float32))[None], torch.as_tensor(np.asarray(shape, np.float32))[None]
        )
    return np.clip(_to_numpy(out)[0], 0.0, 1.0)


def magnify_clip(window, model: Magnifier, config: DeepMagConfig | None = None) -> np.ndarray:
    """Deep stream of a window: ``(omega, H, W, 3)``. Frame 0 passes through untouched."""
    if model is None:
        raise DataError("deep magnification needs trained magnifier weights")
    config = config or model.config
    frames = np.asarray(getattr(window, "frames", window), dtype=np.float64)
    model.eval()
    with torch.no_grad():
        shape, texture = model.encoder(_to_torch(frames))
        if config.mode == "dynamic":
            ref = shape[:-1]
        else:
            ref = shape[:1].expand_as(shape[1:])
        out = model.decoder(texture[1:], manipulate(ref, shape[1:], config.alpha))
    if not torch.all(torch.isfinite(out)):
        raise NumericError("deep magnification produced non-finite values")
    mag = np.clip(_to_numpy(out), 0.0, 1.0)
    return np.concatenate([frames[:1], mag], axis=0)


# ------------------------------------------------------------- persistence


def save_magnifier(model: Magnifier, path, extra: dict[str, Any] | None = None) -> None:
    meta = {"kind": "magnifier", "format_version": mmw.FORMAT_VERSION, "config": asdict(model.config)}
    meta.update(extra or {})
    mmw.save(path, mmw.state_to_numpy(model.state_dict()), meta)


def load_magnifier(path, config: DeepMagConfig | None = None) -> Magnifier:
    tensors, meta = mmw.load(path)
    stored = dict((meta or {}).get("config", {}))
    base = DeepMagConfig(**{k: v for k, v in stored.items() if k in DeepMagConfig.__dataclass_fields__})
    if config is not None:
        if (config.stem_width, config.rep_width) != (base.stem_width, base.rep_width):
            raise DataError("magnifier weights do not match the configured channel widths")
        base = config
    model = Magnifier(base)
    model.load_state_dict(mmw.numpy_to_state(tensors, model.state_dict()))
    model.eval()
    return model


# ------------------------------------------------------------ toy training


@dataclass
class ToyPairs:
    frame_a: np.ndarray  # (N, S, S, 3)
    frame_b: np.ndarray
    target: np.ndarray
    delta: np.ndarray  # (N, 2) displacement (dx, dy) of frame_b vs frame_a
    alpha: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.alpha)


def random_texture(rng: np.random.Generator, size: int, cutoff: float = 0.12) -> np.ndarray:
    """Band-limited RGB texture in [0.1, 0.9]. ``cutoff`` is the Gaussian envelope width in cycles/pixel."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    env = np.exp(-(fx**2 + fy**2) / (2 * cutoff**2))
    chans = []
    for _ in range(3):
        noise = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        chans.append(np.fft.ifft2(noise * env).real)
    tex = np.stack(chans, axis=-1)
    mix = rng.uniform(0.3, 1.0, size=(3, 3))
    tex = tex @ mix  # correlated colour channels
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return 0.1 + 0.8 * tex


def bilinear_shift(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate content by ``(dx, dy)`` pixels with bilinear sampling and edge clamping."""
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xx - dx, 0, w - 1)
    sy = np.clip(yy - dy, 0, h - 1)
    x0 = np.minimum(np.floor(sx).astype(int), w - 2)
    y0 = np.minimum(np.floor(sy).astype(int), h - 2)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


def make_pair(rng: np.random.Generator, size: int, delta: float, alpha: float, angle: float | None = None):
    margin = 8
    tex = random_texture(rng, size + 2 * margin)
    if angle is None:
        angle = rng.uniform(0, 2 * np.pi)
    dx, dy = delta * math.cos(angle), delta * math.sin(angle)
    crop = (slice(margin, margin + size), slice(margin, margin + size))
    a = tex[crop]
    if delta == 0:
        b = a.copy()
        tgt = a.copy()
    else:
        b = bilinear_shift(tex, dx, dy)[crop]
        tgt = bilinear_shift(tex, (1 + alpha) * dx, (1 + alpha) * dy)[crop]
    return a, b, tgt, (dx, dy)


def generate_synthetic_pairs(
    seed: int,
    count: int,
    size: int = 64,
    delta_range: tuple[float, float] = (0.05, 0.8),
    alpha_range: tuple[float, float] = (0.0, 4.0),
) -> ToyPairs:
    """Random textures, a sub-pixel translated copy, and the magnified target."""
    rng = np.random.default_rng(seed)
    out = ([], [], [], [], [])
    for _ in range(count):
        d = rng.uniform(*delta_range)
        al = rng.uniform(*alpha_range)
        a, b, tgt, dxy = make_pair(rng, size, d, al)
        for lst, v in zip(out, (a, b, tgt, dxy, al)):
            lst.append(v)
    return ToyPairs(*(np.asarray(v, dtype=np.float64) for v in out))


@dataclass(frozen=True)
class ToyTrainHyper:
    epochs: int = 20
    lr: float = 2e-3
    batch: int = 8
    seed: int = 0


@dataclass
class MagnifierWeights:
    model: Magnifier
    loss_log: list[float] = field(default_factory=list)


def train_toy(dataset: ToyPairs, hyper: ToyTrainHyper = ToyTrainHyper(), config: DeepMagConfig = DeepMagConfig()) -> MagnifierWeights:
    """Minimise L1 error to the magnified targets (and to ``frame_b`` at ``alpha = 0``)."""
    torch.manual_seed(hyper.seed)
    model = Magnifier(config)
    log_: list[float] = []
    if hyper.epochs == 0 or len(dataset) == 0:
        return MagnifierWeights(model.eval(), log_)
    a = _to_torch(dataset.frame_a)
    b = _to_torch(dataset.frame_b)
    tgt = _to_torch(dataset.target)
    alpha = torch.as_tensor(dataset.alpha, dtype=torch.float32)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    steps = hyper.epochs * math.ceil(len(dataset) / hyper.batch)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=hyper.lr, total_steps=steps, pct_start=0.15)
    gen = torch.Generator().manual_seed(hyper.seed)
    model.train()
    for epoch in range(hyper.epochs):
        order = torch.randperm(len(dataset), generator=gen)
        total, n = 0.0, 0
        for i in range(0, len(dataset), hyper.batch):
            idx = order[i:i + hyper.batch]
            out = model(a[idx], b[idx], alpha[idx])
            loss = F.l1_loss(out, tgt[idx]) + F.l1_loss(model.autoencode(b[idx]), b[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"magnifier training diverged at epoch {epoch} (loss={loss.item()})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
            n += len(idx)
        log_.append(total / n)
        log.info("magnifier epoch %d: loss %.5f", epoch, log_[-1])
    return MagnifierWeights(model.eval(), log_)
