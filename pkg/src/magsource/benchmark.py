"""End-to-end run on the synthetic corpus: generate, train, evaluate, PSNR."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import deep_mag, evaluator, pipeline
from .config import PipelineConfig
from .media_io import atomic_write_text, load_manifest
from .synth import ToyCorpusConfig, generate_toy_corpus

log = logging.getLogger(__name__)

# CPU-sized classifier schedule for the toy run; everything else stays at its default.
TOY_CLASSIFIER = {"width_multiplier": 0.125, "epochs": 4}


def toy_config(seed: int = 0, cache_dir: str | Path | None = None, **sections) -> PipelineConfig:
    clf = dict(TOY_CLASSIFIER, **sections.pop("classifier", {}))
    return PipelineConfig().replace(classifier=clf, seed=seed, cache_dir=None if cache_dir is None else str(cache_dir), **sections)


@dataclass
class BenchmarkResult:
    report: evaluator.EvalReport
    psnr: list[dict]
    timings: dict[str, float] = field(default_factory=dict)

    def report_json(self) -> str:
        return self.report.to_json()

    def psnr_mean(self, label: str) -> float:
        return next(r["mean"] for r in self.psnr if r["label"] == label)


def run_toy_benchmark(
    work_dir: str | Path,
    seed: int = 0,
    corpus: ToyCorpusConfig = ToyCorpusConfig(),
    cfg: PipelineConfig | None = None,
) -> BenchmarkResult:
    """Full pipeline in ``work_dir`` (corpus, magnifier weights, cache, model, reports)."""
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    cfg = cfg or toy_config(seed, work / "cache")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    manifest_path = generate_toy_corpus(work / "corpus", seed, corpus)
    manifest = load_manifest(manifest_path)
    timings["corpus"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    weights = work / "magnifier.mmw"
    trained = pipeline.train_magnifier(cfg)
    deep_mag.save_magnifier(trained.model, weights, {"loss_log": trained.loss_log, "seed": cfg.seed})
    cfg = cfg.replace(deep={"weights": str(weights)})
    magnifier = pipeline.load_configured_magnifier(cfg)
    timings["magnifier"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    proc = pipeline.VideoProcessor(cfg, magnifier)
    artifact = pipeline.train_classifier(manifest, cfg, proc)
    artifact.save(work / "model.mmw")
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report, _ = pipeline.evaluate_manifest(artifact, manifest, cfg, proc)
    atomic_write_text(work / "report.json", report.to_json())
    timings["evaluate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    psnr_rows = evaluator.psnr_summary(pipeline.psnr_by_class(manifest, cfg, proc))
    atomic_write_text(work / "psnr.csv", evaluator.rows_to_csv(psnr_rows))
    timings["psnr"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())
    log.info("toy benchmark timings: %s", json.dumps({k: round(v, 1) for k, v in timings.items()}))
    return BenchmarkResult(report, psnr_rows, timings)
