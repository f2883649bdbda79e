import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import psnr_8bit, shift_x
from magsource import deep_mag as D
from magsource import weights as W
from magsource.errors import ConfigError, DataError, NumericError
from magsource.phase_mag import luminance


@pytest.fixture
def model():
    torch.manual_seed(0)
    return D.Magnifier().eval()


def _reps(model, frame):
    return D.encode(frame, model)


def test_config():
    assert D.DeepMagConfig().alpha == 1.0
    assert D.DeepMagConfig(m=1).alpha == 0.0
    with pytest.raises(ConfigError):
        D.DeepMagConfig(m=0.5)
    with pytest.raises(ConfigError):
        D.DeepMagConfig(mode="bidirectional")


def test_encode_resolution_and_determinism(model):
    frame = np.random.default_rng(0).random((112, 112, 3))
    s1, t1 = _reps(model, frame)
    s2, t2 = _reps(model, frame.copy())
    assert s1.shape == t1.shape == (32, 56, 56)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_array_equal(t1, t2)


def test_zero_model_gives_zero_representations_and_frames():
    m = D.Magnifier()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    s, t = _reps(m, np.random.default_rng(1).random((112, 112, 3)))
    assert not s.any() and not t.any()


def test_zero_representations_zero_bias_decoder(model):
    with torch.no_grad():
        for name, p in model.decoder.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    out = D.decode(np.zeros((32, 56, 56)), np.zeros((32, 56, 56)), model)
    assert out.shape == (112, 112, 3) and not out.any()


def test_decode_dims_and_clamp(model):
    rng = np.random.default_rng(2)
    out = D.decode(rng.normal(size=(32, 56, 56)) * 50, rng.normal(size=(32, 56, 56)) * 50, model)
    assert out.shape == (112, 112, 3)
    assert out.min() >= 0 and out.max() <= 1
    with pytest.raises(DataError):
        D.decode(np.zeros((32, 56, 56)), np.zeros((32, 28, 28)), model)


@given(st.floats(-10, 10), st.integers(0, 1000))
def test_manipulator_identities(alpha, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 5, 5)), rng.normal(size=(4, 5, 5))
    np.testing.assert_array_equal(D.manipulate(a, a, alpha), a)
    np.testing.assert_allclose(D.manipulate(a, b, 0.0), b, atol=1e-12)
    # doubling the internal factor doubles the displacement (1 + 2*alpha' = 2*(1 + alpha) - 1)
    lhs = D.manipulate(a, b, 2 * alpha + 1) - a
    np.testing.assert_allclose(lhs, 2 * (D.manipulate(a, b, alpha) - a), atol=1e-6)
    with pytest.raises(DataError):
        D.manipulate(a, b[:2], alpha)


def test_magnify_clip_length_and_passthrough(model):
    frames = np.random.default_rng(3).random((16, 112, 112, 3))
    for mode in D.MODES:
        out = D.magnify_clip(frames, model, D.DeepMagConfig(mode=mode))
        assert out.shape == (16, 112, 112, 3)
        np.testing.assert_array_equal(out[0], frames[0])
    with pytest.raises(DataError, match="weights"):
        D.magnify_clip(frames, None)


def test_modes_use_different_references(model):
    rng = np.random.default_rng(4)
    frames = rng.random((4, 112, 112, 3))
    cfg = D.DeepMagConfig(m=3)
    dyn = D.magnify_clip(frames, model, cfg)
    sta = D.magnify_clip(frames, model, D.DeepMagConfig(m=3, mode="static"))
    np.testing.assert_allclose(dyn[1], sta[1], atol=1e-6)  # previous == first for frame 1
    x = torch.from_numpy(frames.transpose(0, 3, 1, 2).astype(np.float32))
    with torch.no_grad():
        expect_dyn = model(x[1:3], x[2:4], 2.0).clamp(0, 1).numpy().transpose(0, 2, 3, 1)
        expect_sta = model(x[:1].expand(2, -1, -1, -1), x[2:4], 2.0).clamp(0, 1).numpy().transpose(0, 2, 3, 1)
    np.testing.assert_allclose(dyn[2:], expect_dyn, atol=1e-6)
    np.testing.assert_allclose(sta[2:], expect_sta, atol=1e-6)


def test_synthetic_pairs():
    a = D.generate_synthetic_pairs(7, 5, size=32)
    b = D.generate_synthetic_pairs(7, 5, size=32)
    for f in ("frame_a", "frame_b", "target", "delta", "alpha"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert len(a) == 5 and a.frame_a.shape == (5, 32, 32, 3)
    mags = np.hypot(a.delta[:, 0], a.delta[:, 1])
    assert np.all((mags >= 0.05) & (mags <= 0.8)) and np.all((a.alpha >= 0) & (a.alpha <= 4))
    rng = np.random.default_rng(0)
    fa, fb, tgt, _ = D.make_pair(rng, 32, 0.0, 2.0)
    assert np.array_equal(fa, fb) and np.array_equal(fa, tgt)
    fa, fb, tgt, _ = D.make_pair(rng, 32, 0.4, 0.0)
    np.testing.assert_allclose(tgt, fb, atol=1e-12)


def test_bilinear_shift_integer_and_subpixel():
    img = np.random.default_rng(1).random((20, 20, 3))
    out = D.bilinear_shift(img, 2.0, 1.0)
    np.testing.assert_allclose(out[1:, 2:], img[:-1, :-2], atol=1e-12)
    half = D.bilinear_shift(img, 0.5, 0.0)
    np.testing.assert_allclose(half[:, 1:], 0.5 * (img[:, 1:] + img[:, :-1]), atol=1e-12)


def test_zero_epoch_training_returns_init():
    ds = D.generate_synthetic_pairs(0, 4, size=16)
    res = D.train_toy(ds, D.ToyTrainHyper(epochs=0, seed=3))
    torch.manual_seed(3)
    fresh = D.Magnifier()
    for (k, v), (_, w) in zip(res.model.state_dict().items(), fresh.state_dict().items()):
        assert torch.equal(v, w), k
    assert res.loss_log == []


def test_training_divergence_raises():
    ds = D.generate_synthetic_pairs(0, 4, size=16)
    ds.target[:] = np.nan
    with pytest.raises(NumericError, match="diverged"):
        D.train_toy(ds, D.ToyTrainHyper(epochs=1))


def test_short_training_is_reproducible():
    ds = D.generate_synthetic_pairs(0, 8, size=16)
    a = D.train_toy(ds, D.ToyTrainHyper(epochs=2, seed=1))
    b = D.train_toy(ds, D.ToyTrainHyper(epochs=2, seed=1))
    assert a.loss_log == b.loss_log
    for v, w in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert torch.equal(v, w)


def test_weights_roundtrip(tmp_path, model):
    p = tmp_path / "m.mmw"
    D.save_magnifier(model, p, {"note": "x"})
    back = D.load_magnifier(p)
    for (k, v), w in zip(model.state_dict().items(), back.state_dict().values()):
        assert torch.equal(v, w), k
    tensors, meta = W.load(p)
    assert meta["note"] == "x" and meta["format_version"] == W.FORMAT_VERSION
    assert W.dumps(tensors, meta) == p.read_bytes()
    with pytest.raises(DataError):
        D.load_magnifier(p, D.DeepMagConfig(rep_width=16))


def test_weight_format_layout():
    blob = W.dumps({"ab": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert blob[:4] == b"MMW1"
    count, name_len = np.frombuffer(blob[4:12], "<u4")
    assert (count, name_len) == (1, 2) and blob[12:14] == b"ab"
    rank, d0, d1 = np.frombuffer(blob[14:26], "<u4")
    assert (rank, d0, d1) == (2, 2, 3)
    np.testing.assert_array_equal(np.frombuffer(blob[26:50], "<f4"), np.arange(6))
    tensors, meta = W.loads(blob)
    assert meta is None and tensors["ab"].shape == (2, 3)
    for bad in (b"XXXX" + blob[4:], blob[:-3]):
        with pytest.raises(DataError):
            W.loads(bad)


# ----------------------------------------------------- after toy training


def _initial_loss(ds, seed=0):
    torch.manual_seed(seed)
    m = D.Magnifier()
    a, b, t = (D._to_torch(x) for x in (ds.frame_a, ds.frame_b, ds.target))
    al = torch.as_tensor(ds.alpha, dtype=torch.float32)
    with torch.no_grad():
        return float(torch.nn.functional.l1_loss(m(a, b, al), t) + torch.nn.functional.l1_loss(m.autoencode(b), b))


def test_training_halves_loss(trained_magnifier):
    from magsource.config import PipelineConfig

    mt = PipelineConfig().magnifier_training
    ds = D.generate_synthetic_pairs(0, mt.pairs, size=mt.patch)
    log = trained_magnifier.loss_log
    assert len(log) == 20
    assert log[-1] < 0.5 * _initial_loss(ds)
    assert log[-1] < 0.5 * log[0]


def test_autoencoding_psnr_after_training(trained_magnifier):
    rng = np.random.default_rng(99)
    model = trained_magnifier.model
    for _ in range(4):
        x = D.random_texture(rng, 112)
        s, t = D.encode(x, model)
        out = D.decode(t, D.manipulate(s, s, 0.0), model)
        assert psnr_8bit(x, out) >= 28


def test_unit_magnification_reproduces_inputs(trained_magnifier):
    rng = np.random.default_rng(5)
    tex = D.random_texture(rng, 140)
    frames = np.stack([D.bilinear_shift(tex, 0.1 * j, 0.05 * j)[14:126, 14:126] for j in range(6)])
    out = D.magnify_clip(frames, trained_magnifier.model, D.DeepMagConfig(m=1))
    for j in range(1, 6):
        assert psnr_8bit(frames[j], out[j]) >= 28


def test_static_window_is_autoencoded(trained_magnifier):
    model = trained_magnifier.model
    frame = D.random_texture(np.random.default_rng(6), 112)
    out = D.magnify_clip(np.repeat(frame[None], 5, axis=0), model, D.DeepMagConfig(m=4))
    s, t = D.encode(frame, model)
    ae = D.decode(t, s, model)
    for j in range(1, 5):
        np.testing.assert_allclose(out[j], ae, atol=1e-5)


def test_trained_magnification(trained_magnifier):
    """delta = 0.2 px, alpha = 3 -> output displaced by 0.8 px (within 30%)."""
    rng = np.random.default_rng(123)
    measured = []
    for _ in range(6):
        a, b, tgt, _ = D.make_pair(rng, 112, 0.2, 3.0, angle=0.0)
        out = D.magnify_clip(np.stack([a, b]), trained_magnifier.model, D.DeepMagConfig(m=4.0))[1]
        crop = (slice(8, -8), slice(8, -8))
        measured.append(shift_x(luminance(a)[crop], luminance(out)[crop]))
    assert np.mean(measured) == pytest.approx(0.8, rel=0.3)
