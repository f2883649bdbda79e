"""Vote aggregation, accuracy reports, bias tables, PSNR analysis and parameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .classifier import SamplePrediction
from .errors import DataError
from .phase_mag import luminance

PSNR_CAP = 99.0
UNLABELED = "unlabeled"
_TIE_DECIMALS = 9


@dataclass
class VideoVerdict:
    video_id: str
    predicted: int
    predictions: list[SamplePrediction]
    tally: list[int]
    confidence: float

    def to_dict(self, labels: Sequence[str] | None = None) -> dict:
        d = {
            "video_id": self.video_id,
            "predicted": self.predicted,
            "tally": list(self.tally),
            "confidence": round(self.confidence, 10),
            "samples": [p.to_dict() for p in self.predictions],
        }
        if labels is not None:
            d["predicted_label"] = labels[self.predicted]
        return d


def aggregate(predictions: Sequence[SamplePrediction], video_id: str = "", num_classes: int | None = None) -> VideoVerdict:
    """Majority vote; ties go to the larger summed confidence, then the lowest class index."""
    if not predictions:
        raise DataError("cannot aggregate an empty prediction list")
    n = num_classes or len(predictions[0].probabilities)
    tally = [0] * n
    conf = [0.0] * n
    for p in predictions:
        tally[p.label] += 1
        conf[p.label] += p.confidence
    rounded = [round(c, _TIE_DECIMALS) for c in conf]
    winner = min(range(n), key=lambda c: (-tally[c], -rounded[c], c))
    return VideoVerdict(video_id, winner, list(predictions), tally, conf[winner] / len(predictions))


@dataclass
class VideoRecord:
    """Everything evaluation needs about one test video."""

    video_id: str
    true_label: int
    predictions: list[SamplePrediction]
    gender: str | None = None
    skin_tone: str | None = None


@dataclass
class EvalReport:
    labels: list[str]
    confusion: np.ndarray
    video_accuracy: float
    sample_accuracy: float
    binary_accuracy: float
    sample_binary_accuracy: float
    n_videos: int
    n_samples: int
    verdicts: list[dict] = field(default_factory=list)
    groups: list[dict] | None = None

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "confusion": self.confusion.tolist(),
            "video_accuracy": self.video_accuracy,
            "sample_accuracy": self.sample_accuracy,
            "binary_accuracy": self.binary_accuracy,
            "sample_binary_accuracy": self.sample_binary_accuracy,
            "n_videos": self.n_videos,
            "n_samples": self.n_samples,
            "verdicts": self.verdicts,
            "groups": self.groups,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + self.labels)
        for lab, row in zip(self.labels, self.confusion):
            w.writerow([lab] + [int(v) for v in row])
        return buf.getvalue()


def _collapse(label: int) -> int:
    """Binary view: 0 = real, 1 = any generator."""
    return 0 if label == 0 else 1


def evaluate_records(records: Sequence[VideoRecord], labels: Sequence[str]) -> EvalReport:
    """Video-, sample- and binary-level accuracies plus the video confusion matrix (rows true)."""
    n = len(labels)
    if not records:
        raise DataError("no videos to evaluate")
    confusion = np.zeros((n, n), dtype=np.int64)
    video_ok = binary_ok = sample_ok = sample_bin_ok = n_samples = 0
    verdicts = []
    for rec in records:
        if not 0 <= rec.true_label < n:
            raise DataError(f"{rec.video_id}: class index {rec.true_label} unknown to the model")
        v = aggregate(rec.predictions, rec.video_id, n)
        confusion[rec.true_label, v.predicted] += 1
        video_ok += v.predicted == rec.true_label
        binary_ok += _collapse(v.predicted) == _collapse(rec.true_label)
        for p in rec.predictions:
            sample_ok += p.label == rec.true_label
            sample_bin_ok += _collapse(p.label) == _collapse(rec.true_label)
        n_samples += len(rec.predictions)
        d = v.to_dict(labels)
        d["true_label"] = labels[rec.true_label]
        verdicts.append(d)
    return EvalReport(
        list(labels),
        confusion,
        video_ok / len(records),
        sample_ok / n_samples,
        binary_ok / len(records),
        sample_bin_ok / n_samples,
        len(records),
        n_samples,
        verdicts,
    )


def bias_report(records: Sequence[VideoRecord], labels: Sequence[str], min_count: int = 5) -> list[dict]:
    """One row per (skin tone, gender) group with sample and video accuracy; small groups are flagged."""
    groups: dict[tuple[str, str], list[VideoRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.skin_tone or UNLABELED, rec.gender or UNLABELED)].append(rec)
    rows = []
    for (tone, gender), recs in sorted(groups.items()):
        rep = evaluate_records(recs, labels)
        rows.append(
            {
                "skin_tone": tone,
                "gender": gender,
                "n_videos": rep.n_videos,
                "n_samples": rep.n_samples,
                "sample_accuracy": rep.sample_accuracy,
                "video_accuracy": rep.video_accuracy,
                "low_count": rep.n_videos < min_count,
            }
        )
    return rows


def rows_to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    if not rows:
        return ""
    cols = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def render_confusion(report: EvalReport, path) -> None:
    """Write the confusion matrix as a PNG heatmap."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cm = report.confusion.astype(float)
    rows = cm.sum(1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(report.labels), 1.0 + 0.8 * len(report.labels)))
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(report.labels)), report.labels, rotation=45, ha="right")
    ax.set_yticks(range(len(report.labels)), report.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, j in itertools.product(range(len(report.labels)), repeat=2):
        ax.text(j, i, f"{frac[i, j]:.2f}", ha="center", va="center", color="white" if frac[i, j] > 0.5 else "black", fontsize=8)
    ax.set_title(f"video accuracy {report.video_accuracy:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


# --------------------------------------------------------------------- PSNR


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Luminance PSNR on the 8-bit scale, capped at 99 dB."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"PSNR dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[-1] in (1, 3):
        a, b = luminance(a), luminance(b)
    mse = np.mean((255.0 * (a - b)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(255.0**2 / mse)))


def psnr_analysis(window_frames: np.ndarray, phase_stream: np.ndarray, t: int) -> list[float]:
    """PSNR of each phase-magnified frame against the centre frame of its window."""
    frames = np.asarray(window_frames, dtype=np.float64)
    stream = np.asarray(phase_stream, dtype=np.float64)
    if stream.ndim == 4:
        stream = stream[..., 0]
    luma = luminance(frames) if frames.ndim == 4 else frames
    c = t // 2
    if luma.shape[0] != stream.shape[0] + t - 1 or luma.shape[1:] != stream.shape[1:]:
        raise DataError(f"window {luma.shape} and phase stream {stream.shape} do not correspond for t={t}")
    return [psnr(luma[j + c], stream[j]) for j in range(stream.shape[0])]


def psnr_summary(per_class: Mapping[str, Iterable[float]]) -> list[dict]:
    rows = []
    for label, values in per_class.items():
        v = np.asarray(list(values), dtype=np.float64)
        rows.append(
            {
                "label": label,
                "n_frames": int(v.size),
                "mean": float(v.mean()) if v.size else float("nan"),
                "median": float(np.median(v)) if v.size else float("nan"),
                "std": float(v.std()) if v.size else float("nan"),
            }
        )
    return rows


# -------------------------------------------------------------------- sweep

SWEEP_KEYS = ("m", "t", "alpha_p", "k")


def expand_grid(grid: Mapping[str, Sequence]) -> list[dict]:
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise DataError(f"unknown sweep keys {sorted(unknown)}; allowed {SWEEP_KEYS}")
    keys = [k for k in SWEEP_KEYS if k in grid]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def sweep(
    grid: Mapping[str, Sequence],
    run_point: Callable[[dict], Mapping[str, float]],
    omega: int,
) -> list[dict]:
    """Run ``run_point`` on every grid point; points with ``t > omega`` are skipped with a note."""
    rows = []
    for point in expand_grid(grid):
        row = {k: point.get(k, "") for k in SWEEP_KEYS}
        if point.get("t", 0) > omega:
            row.update(sample_accuracy="", video_accuracy="", status="skipped", note=f"t={point['t']} > omega={omega}")
        else:
            res = run_point(point)
            row.update(
                sample_accuracy=res["sample_accuracy"], video_accuracy=res["video_accuracy"], status="ok", note=""
            )
        rows.append(row)
    return rows


SWEEP_COLUMNS = list(SWEEP_KEYS) + ["sample_accuracy", "video_accuracy", "status", "note"]
