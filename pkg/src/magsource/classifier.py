"""Compact C3D-style source classifier: five conv3d blocks and two wide FC layers."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import weights as mmw
from .errors import ConfigError, DataError, NumericError
from .fusion import FusedTensor, NormStats, fit_stats, normalize, stack

log = logging.getLogger(__name__)

BASE_WIDTHS = (64, 128, 256, 512, 512)
BASE_FC = 4096


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    width_multiplier: float = 1.0
    dropout: float = 0.5
    frames: int = 12
    height: int = 112
    width: int = 112
    channels: int = 4

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ConfigError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if min(self.frames, self.height, self.width) < 1:
            raise ConfigError("input dimensions must be positive")

    @property
    def widths(self) -> list[int]:
        return [max(1, round(w * self.width_multiplier)) for w in BASE_WIDTHS]

    @property
    def fc_size(self) -> int:
        return max(16, round(BASE_FC * self.width_multiplier))

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        """``(T, H, W)`` of the input and after each block's pooling."""
        shapes = [(self.frames, self.height, self.width)]
        t, h, w = shapes[0]
        for i in range(len(BASE_WIDTHS)):
            if i > 0:
                t = math.ceil(t / 2)
            h, w = math.ceil(h / 2), math.ceil(w / 2)
            shapes.append((t, h, w))
        return shapes

    @property
    def flat_size(self) -> int:
        t, h, w = self.stage_shapes()[-1]
        return self.widths[-1] * t * h * w


class C3DClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        blocks = []
        cin = config.channels
        for i, cout in enumerate(config.widths):
            pool = (1, 2, 2) if i == 0 else (2, 2, 2)
            blocks.append(
                nn.Sequential(
                    nn.Conv3d(cin, cout, kernel_size=3, padding=1),
                    nn.BatchNorm3d(cout),
                    nn.ReLU(),
                    nn.MaxPool3d(pool, stride=pool, ceil_mode=True),
                )
            )
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.fc1 = nn.Linear(config.flat_size, config.fc_size)
        self.fc2 = nn.Linear(config.fc_size, config.fc_size)
        self.out = nn.Linear(config.fc_size, config.num_classes)
        self.dropout = nn.Dropout(config.dropout)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not torch.all(torch.isfinite(x)):
                raise NumericError(f"non-finite activations after conv block {i + 1} (shape {tuple(x.shape)})")
            outs.append(x)
        return outs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = (self.config.channels, self.config.frames, self.config.height, self.config.width)
        if tuple(x.shape[1:]) != expected:
            raise DataError(f"classifier expects (N, {expected}) input, got {tuple(x.shape)}")
        h = self.features(x)[-1].flatten(1)
        h = self.dropout(F.relu(self.fc1(h)))
        h = self.dropout(F.relu(self.fc2(h)))
        return self.out(h)


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 100
    lr: float = 1e-4
    batch: int = 8
    seed: int = 0


@dataclass
class SamplePrediction:
    probabilities: np.ndarray
    sample_id: str = ""

    @property
    def label(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def confidence(self) -> float:
        return float(np.max(self.probabilities))

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "class": self.label,
            "confidence": self.confidence,
            "probabilities": [float(p) for p in self.probabilities],
        }


@dataclass
class ModelArtifact:
    model: C3DClassifier
    config: ClassifierConfig
    stats: NormStats
    labels: list[str]
    log: list[dict] = field(default_factory=list)
    seed: int = 0
    hyper: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.labels) != self.config.num_classes:
            raise DataError(f"label table has {len(self.labels)} entries, config expects {self.config.num_classes}")

    def save(self, path) -> None:
        meta = {
            "kind": "classifier",
            "format_version": mmw.FORMAT_VERSION,
            "config": asdict(self.config),
            "stats": self.stats.to_dict(),
            "labels": list(self.labels),
            "log": self.log,
            "seed": self.seed,
            "hyper": self.hyper,
        }
        mmw.save(path, mmw.state_to_numpy(self.model.state_dict()), meta)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        tensors, meta = mmw.load(path)
        if not meta or meta.get("kind") != "classifier":
            raise DataError(f"{path} is not a classifier artifact")
        config = ClassifierConfig(**meta["config"])
        model = C3DClassifier(config)
        model.load_state_dict(mmw.numpy_to_state(tensors, model.state_dict()))
        model.eval()
        return cls(model, config, NormStats.from_dict(meta["stats"]), meta["labels"], meta["log"], meta["seed"], meta["hyper"])


def cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, target)


def _batches(x: torch.Tensor, batch: int):
    for i in range(0, len(x), batch):
        yield x[i:i + batch]


def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    if len(x) == 0:
        return float("nan")
    model.eval()
    with torch.no_grad():
        pred = torch.cat([model(xb).argmax(1) for xb in _batches(x, batch)])
    return float((pred == y).double().mean())


def train(
    train_set: Sequence[tuple[FusedTensor, int]],
    val_set: Sequence[tuple[FusedTensor, int]],
    labels: Sequence[str],
    hyper: TrainHyper = TrainHyper(),
    width_multiplier: float = 1.0,
    dropout: float = 0.5,
) -> ModelArtifact:
    """Fit stats on the training split, train with Adam on cross-entropy, keep the best-validation snapshot.

    Without a validation set the snapshot is chosen on training accuracy.
    """
    if not train_set:
        raise DataError("empty training set")
    present = {y for _, y in train_set}
    missing = [labels[i] for i in range(len(labels)) if i not in present]
    if missing:
        raise DataError(f"classes absent from training data: {missing}")
    torch.manual_seed(hyper.seed)
    stats = fit_stats(ft for ft, _ in train_set)
    xt = torch.from_numpy(stack([ft for ft, _ in train_set], stats))
    yt = torch.tensor([y for _, y in train_set], dtype=torch.long)
    xv = torch.from_numpy(stack([ft for ft, _ in val_set], stats)) if val_set else xt[:0]
    yv = torch.tensor([y for _, y in val_set], dtype=torch.long)
    _, t, h, w = xt.shape[1:]
    config = ClassifierConfig(len(labels), width_multiplier, dropout, t, h, w, xt.shape[1])
    model = C3DClassifier(config)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    gen = torch.Generator().manual_seed(hyper.seed)
    history: list[dict] = []
    best_state, best_score = copy.deepcopy(model.state_dict()), -1.0
    for epoch in range(hyper.epochs):
        model.train()
        order = torch.randperm(len(xt), generator=gen)
        total, n = 0.0, 0
        for i in range(0, len(xt), hyper.batch):
            idx = order[i:i + hyper.batch]
            if len(idx) == 1 and len(xt) > 1:
                continue  # batch norm needs >1 sample
            loss = cross_entropy(model(xt[idx]), yt[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"classifier training diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            n += len(idx)
        train_acc = _accuracy(model, xt, yt, hyper.batch)
        val_acc = _accuracy(model, xv, yv, hyper.batch) if len(xv) else float("nan")
        score = val_acc if len(xv) else train_acc
        history.append({"epoch": epoch, "loss": total / max(n, 1), "train_acc": train_acc, "val_acc": None if math.isnan(val_acc) else val_acc})
        log.info("classifier epoch %d: loss %.4f train %.3f val %s", epoch, total / max(n, 1), train_acc, history[-1]["val_acc"])
        if score > best_score:
            best_score, best_state = score, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return ModelArtifact(model, config, stats, list(labels), history, hyper.seed, asdict(hyper))


def _prepare(tensors: Sequence[FusedTensor], artifact: ModelArtifact) -> torch.Tensor:
    raw = [ft for ft in tensors if ft.stats_id is None]
    for ft in tensors:
        if ft.stats_id is not None and ft.stats_id != artifact.stats.id:
            raise DataError(f"tensor normalized with stats {ft.stats_id}, model expects {artifact.stats.id}")
    if len(raw) == len(tensors):
        return torch.from_numpy(stack(tensors, artifact.stats))
    if not raw:
        return torch.from_numpy(stack(tensors))
    return torch.from_numpy(stack([normalize(ft, artifact.stats) if ft.stats_id is None else ft for ft in tensors]))


def predict_samples(tensors: Sequence[FusedTensor], artifact: ModelArtifact, batch: int = 8) -> list[SamplePrediction]:
    """Softmax predictions in inference mode. Raw tensors (``stats_id`` None) get the artifact's stats."""
    if not tensors:
        return []
    x = _prepare(tensors, artifact)
    artifact.model.eval()
    with torch.no_grad():
        logits = torch.cat([artifact.model(xb) for xb in _batches(x, batch)]).double()
    probs = torch.softmax(logits, dim=1).numpy()
    return [
        SamplePrediction(p, str(ft.meta.get("sample_id", i))) for i, (p, ft) in enumerate(zip(probs, tensors))
    ]


def predict_sample(tensor: FusedTensor, artifact: ModelArtifact) -> SamplePrediction:
    return predict_samples([tensor], artifact)[0]
