import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import procrustes_similarity
from magsource.errors import ConfigError, DataError, TooShortError, VideoRejected
from magsource.media_io import FrameClip
from magsource.sampler import (
    TEMPLATE_112,
    LandmarkTrack,
    SamplerConfig,
    align_face,
    dump_landmarks,
    estimate_similarity,
    extract_samples,
    load_landmarks,
    select_windows,
)


def test_select_windows_examples():
    assert select_windows(300, SamplerConfig(k=4, omega=16)) == [0, 94, 189, 284]
    assert select_windows(16, SamplerConfig(k=4, omega=16)) == [0, 0, 0, 0]
    assert select_windows(100, SamplerConfig(k=1, omega=16)) == [0]
    with pytest.raises(TooShortError, match="too short"):
        select_windows(15, SamplerConfig(omega=16))


@given(st.integers(2, 2000), st.integers(1, 12), st.integers(2, 64))
def test_select_windows_properties(extra, k, omega):
    total = omega + extra - 2
    if total < omega:
        return
    cfg = SamplerConfig(k=k, omega=omega)
    s = select_windows(total, cfg)
    assert len(s) == k
    assert s == sorted(s)
    assert all(0 <= v <= total - omega for v in s)
    assert s == [i * (total - omega) // max(k - 1, 1) for i in range(k)]
    if k >= 2:
        assert s[0] == 0 and s[-1] == total - omega


def test_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(k=0)
    with pytest.raises(ConfigError):
        SamplerConfig(omega=1)
    with pytest.raises(ConfigError):
        SamplerConfig(align_mode="mean")


def test_identity_alignment_is_crop():
    frame = np.random.default_rng(0).random((150, 140, 3))
    m = estimate_similarity(TEMPLATE_112, TEMPLATE_112)
    np.testing.assert_allclose(m, [[1, 0, 0], [0, 1, 0]], atol=1e-12)
    np.testing.assert_allclose(align_face(frame, TEMPLATE_112), frame[:112, :112], atol=1e-12)


def test_translation_recovered():
    m = estimate_similarity(TEMPLATE_112 + 10.0, TEMPLATE_112)
    np.testing.assert_allclose(m[:, :2], np.eye(2), atol=1e-6)
    np.testing.assert_allclose(m[:, 2], [-10, -10], atol=1e-6)


def _rotate(points, deg, about):
    r = np.radians(deg)
    rot = np.array([[np.cos(r), -np.sin(r)], [np.sin(r), np.cos(r)]])
    return (points - about) @ rot.T + about


def test_rotation_recovered_against_procrustes_oracle():
    lm = _rotate(TEMPLATE_112, 30.0, TEMPLATE_112.mean(0))
    m = estimate_similarity(lm, TEMPLATE_112)
    ours = np.degrees(np.arctan2(m[1, 0], m[0, 0]))
    scale, oracle_deg, shift = procrustes_similarity(lm, TEMPLATE_112)
    assert abs(ours - -30.0) < 0.1
    assert abs(ours - oracle_deg) < 1e-6
    assert abs(np.hypot(m[0, 0], m[1, 0]) - scale) < 1e-9
    assert abs(complex(*m[:, 2]) - shift) < 1e-9


@given(
    st.lists(st.tuples(st.floats(-200, 200), st.floats(-200, 200)), min_size=5, max_size=5),
    st.floats(-5, 5),
)
def test_similarity_matches_oracle_on_random_points(noise_pts, jitter):
    src = TEMPLATE_112 * 1.7 + np.array(noise_pts) * 0.05 + jitter
    dst = TEMPLATE_112
    m = estimate_similarity(src, dst)
    scale, deg, shift = procrustes_similarity(src, dst)
    assert np.hypot(m[0, 0], m[1, 0]) == pytest.approx(scale, rel=1e-9)
    assert np.degrees(np.arctan2(m[1, 0], m[0, 0])) == pytest.approx(deg, abs=1e-7)


def test_degenerate_landmarks():
    line = np.stack([np.linspace(0, 10, 5), np.linspace(0, 20, 5)], axis=1)
    with pytest.raises(DataError, match="collinear"):
        estimate_similarity(line, TEMPLATE_112)
    bad = TEMPLATE_112.copy()
    bad[2, 0] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        align_face(np.zeros((120, 120, 3)), bad)


def _smooth_image(h, w, dx=0.0, dy=0.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    x, y = xx - dx, yy - dy
    return np.stack(
        [0.5 + 0.3 * np.sin(x / 9.0) * np.cos(y / 13.0), 0.5 + 0.2 * np.cos((x + y) / 11.0), 0.5 + 0.25 * np.sin(y / 7.0)],
        axis=-1,
    )


@given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-20, 20), st.floats(0.8, 1.3))
def test_alignment_translation_equivariance(dx, dy, angle, scale):
    centre = np.array([130.0, 130.0])
    lm = _rotate((TEMPLATE_112 - TEMPLATE_112.mean(0)) * scale + centre, angle, centre)
    a = align_face(_smooth_image(260, 260), lm)
    b = align_face(_smooth_image(260, 260, dx, dy), lm + [dx, dy])
    inner = (slice(4, -4), slice(4, -4))
    assert np.max(np.abs(a[inner] - b[inner])) < 2 / 255


def _track(n, missing=()):
    tr = LandmarkTrack.constant(TEMPLATE_112 + 4, n)
    for i in missing:
        tr.points[i] = np.nan
        tr.confidence[i] = 0.0
    return tr


def test_extract_defaults():
    clip = FrameClip(np.random.default_rng(1).random((300, 120, 120, 3)))
    wins = extract_samples(clip, _track(300), SamplerConfig())
    assert [w.start for w in wins] == [0, 94, 189, 284]
    assert all(w.frames.shape == (16, 112, 112, 3) for w in wins)


def test_extract_drops_window_with_missing_landmarks(caplog):
    clip = FrameClip(np.zeros((300, 120, 120, 3)))
    wins = extract_samples(clip, _track(300, range(94, 110)), SamplerConfig())
    assert [w.start for w in wins] == [0, 189, 284]
    assert "dropping window at 94" in caplog.text


def test_extract_low_confidence_threshold():
    clip = FrameClip(np.zeros((40, 120, 120, 3)))
    tr = _track(40)
    tr.confidence[:] = 0.4
    with pytest.raises(VideoRejected):
        extract_samples(clip, tr, SamplerConfig(k=2))
    assert len(extract_samples(clip, tr, SamplerConfig(k=2, confidence_threshold=0.3))) == 2


def test_extract_constant_colour():
    clip = FrameClip(np.full((64, 128, 128, 3), 0.3))
    wins = extract_samples(clip, _track(64), SamplerConfig())
    assert len(wins) == 4
    for w in wins:
        np.testing.assert_allclose(w.frames, 0.3, atol=1e-12)


def test_extract_grayscale_promoted_and_deterministic():
    clip = FrameClip(np.random.default_rng(2).random((20, 120, 120, 1)))
    a = extract_samples(clip, _track(20), SamplerConfig(k=2))
    b = extract_samples(clip, _track(20), SamplerConfig(k=2))
    assert a[0].frames.shape[-1] == 3
    np.testing.assert_array_equal(a[1].frames, b[1].frames)


def test_first_frame_mode_freezes_transform():
    rng = np.random.default_rng(3)
    clip = FrameClip(rng.random((16, 130, 130, 3)))
    tr = _track(16)
    tr.points[5:] += 3.0  # landmarks jump; per-frame mode follows, first-frame mode does not
    per = extract_samples(clip, tr, SamplerConfig(k=1))[0].frames
    first = extract_samples(clip, tr, SamplerConfig(k=1, align_mode="first-frame"))[0].frames
    np.testing.assert_array_equal(per[:5], first[:5])
    np.testing.assert_allclose(first[8], clip.pixels[8, 4:116, 4:116], atol=1e-12)
    np.testing.assert_allclose(per[8], clip.pixels[8, 7:119, 7:119], atol=1e-12)


def test_landmark_sidecar_roundtrip(tmp_path):
    tr = _track(6, missing=[2])
    tr.confidence[4] = 0.25
    dump_landmarks(tr, tmp_path / "lm.json")
    back = load_landmarks(tmp_path / "lm.json")
    assert not back.valid(2, 0.5) and back.valid(3, 0.5) and not back.valid(4, 0.5)
    np.testing.assert_allclose(back.points[0], tr.points[0])
    (tmp_path / "bad.json").write_text('[{"points": [[1, 2]]}]')
    with pytest.raises(DataError):
        load_landmarks(tmp_path / "bad.json")
