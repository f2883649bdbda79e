"""Acceptance criteria, one test each, at their stated tolerances.

Every test appends a PASS/FAIL line to the terminal summary before asserting.
"""

import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_LINES
from oracles import grating, natural_images, psnr_8bit, shift_x
from magsource import classifier as C
from magsource import deep_mag, phase_mag, pyramid
from magsource.benchmark import run_toy_benchmark
from magsource.fusion import fuse


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_a1_pyramid_roundtrip():
    rng = np.random.default_rng(2024)
    images = [rng.random((112, 112)) for _ in range(100)] + natural_images(112)
    start = time.perf_counter()
    worst_psnr, worst_ratio = np.inf, 0.0
    for img in images:
        pyr = pyramid.build(img)
        rec = pyramid.reconstruct(pyr)
        worst_psnr = min(worst_psnr, psnr_8bit(img, rec))
        worst_ratio = max(worst_ratio, abs(sum(pyr.energies().values()) / np.sum(img**2) - 1))
    elapsed = time.perf_counter() - start
    ok = worst_psnr >= 40 and worst_ratio <= 1e-4 and elapsed < 5
    record("pyramid round trip", ok, f"min PSNR {worst_psnr:.1f} dB, max |energy ratio - 1| {worst_ratio:.2e}, {elapsed:.2f} s over 110 images")


def test_a2_phase_motion_law():
    period, speed = 8.0, 0.05
    frames = np.stack([grating(period, speed * j) for j in range(5)])
    truth = 2 * speed  # centre frame relative to the window's first frame
    start = time.perf_counter()
    measured = {}
    for alpha in (2.0, 5.0, 10.0):
        out = phase_mag.magnify_window(frames, phase_mag.PhaseConfig(alpha_p=alpha))
        d = shift_x(frames[0], out)
        measured[alpha] = (d + period / 2) % period - period / 2  # gratings register modulo a period
    elapsed = time.perf_counter() - start
    errs = {a: abs(d / ((1 + a) * truth) - 1) for a, d in measured.items()}
    values = [measured[a] for a in sorted(measured)]
    ok = max(errs.values()) <= 0.2 and values == sorted(values) and elapsed < 30
    detail = ", ".join(f"a={a:g}: {d:.3f} px (expect {(1 + a) * truth:.2f})" for a, d in measured.items())
    record("phase motion law", ok, f"{detail}; {elapsed:.1f} s")


def test_a3_identity_limits(trained_magnifier):
    rng = np.random.default_rng(3)
    frames = rng.random((5, 112, 112))
    phase_db = psnr_8bit(frames[2], phase_mag.magnify_window(frames, phase_mag.PhaseConfig(alpha_p=0)))
    model = trained_magnifier.model
    deep_db = np.inf
    for _ in range(4):
        x = deep_mag.random_texture(rng, 112)
        out = deep_mag.magnify_clip(np.stack([x, x]), model, deep_mag.DeepMagConfig(m=1))[1]
        deep_db = min(deep_db, psnr_8bit(x, out))
        s, t = deep_mag.encode(x, model)
        deep_db = min(deep_db, psnr_8bit(x, deep_mag.decode(t, s, model)))
    ok = phase_db >= 40 and deep_db >= 28
    record("identity limits", ok, f"alpha_p=0 phase {phase_db:.1f} dB (>= 40), m=1 deep {deep_db:.1f} dB (>= 28)")


def test_a4_shape_laws():
    problems = []
    for omega, t in ((16, 5), (16, 3), (16, 16), (8, 3)):
        frames = np.random.default_rng(omega + t).random((omega, 112, 112, 3))
        phase = phase_mag.magnify_clip(frames, phase_mag.PhaseConfig(t=t))
        if phase.shape[0] != omega - (t - 1):
            problems.append(f"phase length {phase.shape[0]} for omega={omega}, t={t}")
        ft = fuse(frames, phase, t)
        if ft.dims != (112, 112, omega - (t - 1), 4):
            problems.append(f"fused dims {ft.dims} for omega={omega}, t={t}")
    pinned_t = {8: [8, 8, 4, 2, 1, 1], 12: [12, 12, 6, 3, 2, 1], 16: [16, 16, 8, 4, 2, 1]}
    for frames_in, temporal in pinned_t.items():
        cfg = C.ClassifierConfig(3, width_multiplier=1 / 8, frames=frames_in)
        expected = [(tt, s, s) for tt, s in zip(temporal, (112, 56, 28, 14, 7, 4))]
        with torch.no_grad():
            feats = C.C3DClassifier(cfg).eval().features(torch.zeros(1, 4, frames_in, 112, 112))
        got = [(frames_in, 112, 112)] + [tuple(f.shape[2:]) for f in feats]
        if got != expected or cfg.stage_shapes() != expected:
            problems.append(f"classifier stages {got} for T={frames_in}")
    record("shape laws", not problems, "; ".join(problems) or "phase, fused and classifier stage shapes all match")


def test_a5_gradient_oracle():
    from test_gradients import TOL, run_all

    worst, elapsed = run_all()
    ok = max(worst.values()) < TOL and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("gradient oracle", ok, f"max rel. error {detail}; {elapsed:.1f} s")


def test_a6_vote_oracle():
    from test_evaluator import check_votes_exhaustively

    start = time.perf_counter()
    try:
        n = check_votes_exhaustively(k_max=4, classes_max=6)
        ok, detail = True, f"{n} cases agree with brute force"
    except AssertionError as exc:
        ok, detail = False, str(exc)
    record("vote oracle", ok, f"{detail} ({time.perf_counter() - start:.0f} s)")


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    first = run_toy_benchmark(tmp_path_factory.mktemp("toy_a"), seed=0)
    second = run_toy_benchmark(tmp_path_factory.mktemp("toy_b"), seed=0)
    return first, second


def test_a7_toy_benchmark(toy_runs):
    res = toy_runs[0]
    rep, minutes = res.report, res.timings["total"] / 60
    ok = rep.video_accuracy >= 0.9 and rep.video_accuracy >= rep.sample_accuracy and minutes <= 30
    record(
        "toy benchmark",
        ok,
        f"video acc {rep.video_accuracy:.3f}, sample acc {rep.sample_accuracy:.3f}, {minutes:.1f} min",
    )


def test_a8_psnr_ordering(toy_runs):
    res = toy_runs[0]
    real, a, b = (res.psnr_mean(k) for k in ("real", "genA", "genB"))
    record("PSNR ordering", real > a and real > b, f"mean PSNR real {real:.2f} dB, genA {a:.2f} dB, genB {b:.2f} dB")


def test_a9_reproducibility(toy_runs):
    first, second = toy_runs
    same = first.report_json().encode() == second.report_json().encode()
    record("reproducibility", same, "reports byte-identical" if same else "reports differ between identical runs")
