"""Batch command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import config as cfgmod
from . import deep_mag, evaluator, fusion, phase_mag, pipeline
from .classifier import ModelArtifact
from .config import PipelineConfig
from .errors import ConfigError, DataError, NumericError
from .media_io import FrameClip, atomic_write_text, load_clip, load_manifest, read_raw, save_clip, write_raw
from .sampler import extract_samples, load_landmarks
from .synth import ToyCorpusConfig, generate_toy_corpus

log = logging.getLogger("magsource")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which we reserve for data errors
        raise UsageError(message)


# ------------------------------------------------------------ flag groups


def _global_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", help="TOML config file")
    g.add_argument("--dump-config", metavar="PATH", help="write the resolved config to PATH")
    g.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--cache-dir", help=f"cache directory (default: ${pipeline.CACHE_ENV})")
    g.add_argument("--log-level", default="INFO")
    return p


def _sampler_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("sampling")
    g.add_argument("--k", type=int)
    g.add_argument("--omega", type=int)
    g.add_argument("--threshold", type=float, help="landmark confidence threshold")
    g.add_argument("--align-mode", choices=["per-frame", "first-frame"])
    return p


def _phase_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("phase magnification")
    g.add_argument("--t", type=int)
    g.add_argument("--alpha-p", type=float)
    g.add_argument("--band", help="temporal band lo:hi in Hz (bandpass filter)")
    g.add_argument("--filter", choices=["reference", "mean", "bandpass"])
    return p


def _deep_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("deep magnification")
    g.add_argument("--m", type=float)
    g.add_argument("--mode", choices=["dynamic", "static"])
    g.add_argument("--weights", help="magnifier weight file (MMW1)")
    return p


def _clf_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("classifier")
    g.add_argument("--width-mult", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    glob, samp, phase, deep, clf = _global_flags(), _sampler_flags(), _phase_flags(), _deep_flags(), _clf_flags()
    parser = _Parser(prog="magsource", description="Motion-magnification deepfake source detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", parents=[glob], help="generate the synthetic 3-class corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--videos-per-class", type=int, default=60)
    p.add_argument("--frames", type=int, default=64)

    p = sub.add_parser("sample", parents=[glob, samp], help="cut aligned sample windows from a video")
    p.add_argument("--video", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", help="directory for window clips (MMC1)")

    p = sub.add_parser("magnify-phase", parents=[glob, phase], help="phase-magnify a window clip")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("magnify-deep", parents=[glob, deep], help="deep-magnify a window clip")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", parents=[glob, phase], help="fuse deep and phase streams")
    p.add_argument("--deep", required=True)
    p.add_argument("--phase", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-magnifier", parents=[glob, deep], help="toy-train the deep magnifier")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int)
    p.add_argument("--mag-epochs", type=int)

    for name, helptext in (("train", "train the source classifier"),):
        p = sub.add_parser(name, parents=[glob, samp, phase, deep, clf], help=helptext)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)

    p = sub.add_parser("predict", parents=[glob, samp, phase, deep], help="classify one video")
    p.add_argument("--model", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--landmarks", required=True)

    p = sub.add_parser("evaluate", parents=[glob, samp, phase, deep], help="evaluate on a manifest's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", help="write report.json, confusion.csv and confusion.png")

    p = sub.add_parser("sweep", parents=[glob, samp, phase, deep, clf], help="accuracy over a parameter grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help='e.g. "m=2,3;t=3,5"')
    p.add_argument("--out", required=True, help="CSV output")

    p = sub.add_parser("bias-report", parents=[glob, samp, phase, deep], help="per skin-tone/gender accuracies")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="CSV output")
    p.add_argument("--min-count", type=int)

    p = sub.add_parser("psnr", parents=[glob, samp, phase], help="PSNR of phase-magnified frames per class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="CSV output")
    return parser


# --------------------------------------------------------- config resolution


def _parse_band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--band must look like lo:hi, got {text!r}") from exc
    return lo, hi


def resolve_config(args: argparse.Namespace, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    if getattr(args, "config", None):
        cfg = cfgmod.load(args.config, cfg)
    over: dict[str, dict[str, Any]] = {"sampler": {}, "phase": {}, "deep": {}, "classifier": {}, "magnifier_training": {}}
    a = vars(args)
    for flag, section, key in (
        ("k", "sampler", "k"),
        ("omega", "sampler", "omega"),
        ("threshold", "sampler", "confidence_threshold"),
        ("align_mode", "sampler", "align_mode"),
        ("t", "phase", "t"),
        ("alpha_p", "phase", "alpha_p"),
        ("filter", "phase", "filter"),
        ("m", "deep", "m"),
        ("mode", "deep", "mode"),
        ("weights", "deep", "weights"),
        ("width_mult", "classifier", "width_multiplier"),
        ("epochs", "classifier", "epochs"),
        ("lr", "classifier", "lr"),
        ("batch", "classifier", "batch"),
        ("pairs", "magnifier_training", "pairs"),
        ("mag_epochs", "magnifier_training", "epochs"),
    ):
        if a.get(flag) is not None:
            over[section][key] = a[flag]
    if a.get("band"):
        over["phase"]["f_lo"], over["phase"]["f_hi"] = _parse_band(a["band"])
    top = {k: a[k] for k in ("seed", "workers", "cache_dir") if a.get(k) is not None}
    if a.get("min_count") is not None:
        top["min_group_count"] = a["min_count"]
    if a.get("weights"):
        over["deep"]["weights"] = str(Path(a["weights"]).resolve())
    return cfg.replace(**{k: v for k, v in over.items() if v}, **top)


def _artifact_config(model_path: str) -> tuple[ModelArtifact, PipelineConfig]:
    art = ModelArtifact.load(model_path)
    stored = art.hyper.get("pipeline")
    base = cfgmod.from_mapping(_strip_none(stored)) if stored else PipelineConfig()
    return art, base


def _strip_none(d: Any) -> Any:
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


# ---------------------------------------------------------------- commands


def _read_window(path: str) -> np.ndarray:
    p = Path(path)
    if p.is_file():
        with open(p, "rb") as fh:
            if fh.read(4) == b"MMF1":
                return read_raw(p)[0]
    return load_clip(p).pixels


def cmd_synth_data(args, cfg: PipelineConfig) -> dict:
    corpus = ToyCorpusConfig(videos_per_class=args.videos_per_class, frames=args.frames)
    path = generate_toy_corpus(args.out, cfg.seed, corpus)
    return {"manifest": str(path), "videos": 3 * corpus.videos_per_class}


def cmd_sample(args, cfg: PipelineConfig) -> dict:
    clip = load_clip(args.video, cfg.decode)
    wins = extract_samples(clip, load_landmarks(args.landmarks), cfg.sampler, Path(args.video).stem)
    files = []
    if args.out:
        for w in wins:
            dest = Path(args.out) / f"{w.video_id}_{w.start:06d}.mmc1"
            save_clip(FrameClip(w.frames, clip.fps), dest)
            files.append(str(dest))
    return {"video": args.video, "starts": [w.start for w in wins], "files": files}


def cmd_magnify_phase(args, cfg: PipelineConfig) -> dict:
    frames = _read_window(args.input)
    out = phase_mag.magnify_clip(frames, cfg.phase, cfg.pyramid)
    write_raw(args.out, out, cfg.phase.fps, float32=True)
    return {"out": args.out, "frames": int(out.shape[0])}


def cmd_magnify_deep(args, cfg: PipelineConfig) -> dict:
    model = pipeline.load_configured_magnifier(cfg)
    frames = _read_window(args.input)
    out = deep_mag.magnify_clip(frames, model, cfg.deep)
    write_raw(args.out, out, 30, float32=True)
    return {"out": args.out, "frames": int(out.shape[0])}


def cmd_fuse(args, cfg: PipelineConfig) -> dict:
    ft = fusion.fuse(read_raw(args.deep)[0], read_raw(args.phase)[0], cfg.phase.t)
    fusion.save_fused(ft, args.out)
    return {"out": args.out, "dims": list(ft.dims)}


def cmd_train_magnifier(args, cfg: PipelineConfig) -> dict:
    res = pipeline.train_magnifier(cfg)
    deep_mag.save_magnifier(res.model, args.out, {"loss_log": res.loss_log, "seed": cfg.seed})
    return {"out": args.out, "loss_log": res.loss_log}


def cmd_train(args, cfg: PipelineConfig) -> dict:
    manifest = load_manifest(args.manifest)
    proc = pipeline.VideoProcessor(cfg, pipeline.load_configured_magnifier(cfg))
    art = pipeline.train_classifier(manifest, cfg, proc)
    art.save(args.out)
    return {"out": args.out, "labels": art.labels, "log": art.log}


def cmd_predict(args, cfg: PipelineConfig, art: ModelArtifact) -> dict:
    proc = pipeline.VideoProcessor(cfg, pipeline.load_configured_magnifier(cfg))
    verdict = pipeline.predict_video(art, Path(args.video), Path(args.landmarks), proc)
    return verdict.to_dict(art.labels)


def cmd_evaluate(args, cfg: PipelineConfig, art: ModelArtifact) -> dict:
    manifest = load_manifest(args.manifest)
    proc = pipeline.VideoProcessor(cfg, pipeline.load_configured_magnifier(cfg))
    report, _ = pipeline.evaluate_manifest(art, manifest, cfg, proc)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "report.json", report.to_json())
        atomic_write_text(out / "confusion.csv", report.confusion_csv())
        evaluator.render_confusion(report, out / "confusion.png")
    return report.to_dict()


def _parse_grid(text: str) -> dict[str, list]:
    grid: dict[str, list] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, _, values = part.partition("=")
        if not values:
            raise ConfigError(f"bad grid term {part!r}; expected key=v1,v2")
        conv = int if key.strip() in ("t", "k") else float
        try:
            grid[key.strip()] = [conv(v) for v in values.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad grid values in {part!r}") from exc
    return grid


def cmd_sweep(args, cfg: PipelineConfig) -> dict:
    manifest = load_manifest(args.manifest)
    grid = _parse_grid(args.grid)
    magnifier = pipeline.load_configured_magnifier(cfg)
    cache = pipeline.Cache.from_config(cfg)

    def run(point: dict) -> dict:
        return pipeline.run_point(manifest, pipeline.sweep_point_config(cfg, point), magnifier, cache)

    try:
        rows = evaluator.sweep(grid, run, cfg.sampler.omega)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    atomic_write_text(args.out, evaluator.rows_to_csv(rows, evaluator.SWEEP_COLUMNS))
    return {"out": args.out, "rows": rows}


def cmd_bias_report(args, cfg: PipelineConfig, art: ModelArtifact) -> dict:
    manifest = load_manifest(args.manifest)
    proc = pipeline.VideoProcessor(cfg, pipeline.load_configured_magnifier(cfg))
    _, records = pipeline.evaluate_manifest(art, manifest, cfg, proc)
    rows = evaluator.bias_report(records, art.labels, cfg.min_group_count)
    if args.out:
        atomic_write_text(args.out, evaluator.rows_to_csv(rows))
    return {"rows": rows}


def cmd_psnr(args, cfg: PipelineConfig) -> dict:
    manifest = load_manifest(args.manifest)
    proc = pipeline.VideoProcessor(cfg, None)
    rows = evaluator.psnr_summary(pipeline.psnr_by_class(manifest, cfg, proc))
    if args.out:
        atomic_write_text(args.out, evaluator.rows_to_csv(rows))
    return {"rows": rows}


COMMANDS = {
    "synth-data": cmd_synth_data,
    "sample": cmd_sample,
    "magnify-phase": cmd_magnify_phase,
    "magnify-deep": cmd_magnify_deep,
    "fuse": cmd_fuse,
    "train-magnifier": cmd_train_magnifier,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "bias-report": cmd_bias_report,
    "psnr": cmd_psnr,
}
NEEDS_MODEL = {"predict", "evaluate", "bias-report"}


def _summarize(command: str, result: dict) -> str:
    if command == "evaluate":
        return (
            f"video acc {result['video_accuracy']:.4f}  sample acc {result['sample_accuracy']:.4f}  "
            f"binary acc {result['binary_accuracy']:.4f}  ({result['n_videos']} videos)"
        )
    if "rows" in result:
        rows = result["rows"]
        return evaluator.rows_to_csv(rows).rstrip() if rows else "(no rows)"
    return json.dumps({k: v for k, v in result.items() if k not in ("log", "loss_log")}, default=str)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"magsource: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        art = None
        base = None
        if args.command in NEEDS_MODEL:
            art, base = _artifact_config(args.model)
        cfg = resolve_config(args, base)
        log.info("resolved config (seed=%d): %s", cfg.seed, json.dumps(cfg.to_dict(), sort_keys=True, default=str))
        if args.dump_config:
            atomic_write_text(args.dump_config, cfgmod.dumps(cfg))
        import torch

        torch.manual_seed(cfg.seed)
        fn = COMMANDS[args.command]
        result = fn(args, cfg, art) if args.command in NEEDS_MODEL else fn(args, cfg)
    except ConfigError as exc:
        print(f"magsource: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"magsource: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"magsource: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.json or args.command == "predict":  # a verdict is always machine-readable
        print(json.dumps(result, sort_keys=True, default=_json_default))
    else:
        print(_summarize(args.command, result))
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


if __name__ == "__main__":
    sys.exit(main())
