import math

import numpy as np
import pytest
import torch

from magsource import classifier as C
from magsource.errors import ConfigError, DataError, NumericError
from magsource.fusion import FusedTensor, NormStats, fit_stats, normalize


def _tensors(n, t=8, hw=32, seed=0, classes=2):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % classes
        data = rng.normal(size=(t, hw, hw, 4)) + 0.8 * y
        out.append((FusedTensor(data, meta={"sample_id": f"s{i}"}), y))
    return out


def test_widths_and_fc():
    assert C.ClassifierConfig(3).widths == [64, 128, 256, 512, 512]
    assert C.ClassifierConfig(3).fc_size == 4096
    cfg = C.ClassifierConfig(3, width_multiplier=1 / 8)
    assert cfg.widths == [8, 16, 32, 64, 64] and cfg.fc_size == 512
    assert C.ClassifierConfig(3, width_multiplier=0.001).fc_size == 16
    for bad in ({"num_classes": 1}, {"num_classes": 3, "width_multiplier": 0}, {"num_classes": 3, "dropout": 1.0}):
        with pytest.raises(ConfigError):
            C.ClassifierConfig(**bad)


def test_pinned_stage_schedule_at_full_width():
    cfg = C.ClassifierConfig(6, frames=12)
    assert cfg.stage_shapes() == [(12, 112, 112), (12, 56, 56), (6, 28, 28), (3, 14, 14), (2, 7, 7), (1, 4, 4)]
    assert cfg.flat_size == 512 * 1 * 4 * 4 == 8192
    model = C.C3DClassifier(cfg).eval()
    with torch.no_grad():
        feats = model.features(torch.zeros(1, 4, 12, 112, 112))
        logits = model(torch.zeros(1, 4, 12, 112, 112))
    assert [tuple(f.shape[2:]) for f in feats] == cfg.stage_shapes()[1:]
    assert [f.shape[1] for f in feats] == cfg.widths
    assert logits.shape == (1, 6)


@pytest.mark.parametrize("frames", [8, 12, 16])
@pytest.mark.parametrize("mult", [1 / 8, 1 / 4, 1.0])
def test_stage_shapes_law(frames, mult):
    cfg = C.ClassifierConfig(3, width_multiplier=mult, frames=frames)
    expected_t = {8: [8, 8, 4, 2, 1, 1], 12: [12, 12, 6, 3, 2, 1], 16: [16, 16, 8, 4, 2, 1]}[frames]
    shapes = cfg.stage_shapes()
    assert [s[0] for s in shapes] == expected_t
    assert [s[1] for s in shapes] == [112, 56, 28, 14, 7, 4]
    if mult < 1:
        model = C.C3DClassifier(cfg).eval()
        with torch.no_grad():
            feats = model.features(torch.zeros(2, 4, frames, 112, 112))
        assert [tuple(f.shape[2:]) for f in feats] == shapes[1:]


@pytest.mark.parametrize("frames", list(range(8, 33, 3)))
def test_stage_shapes_match_forward_over_range(frames):
    cfg = C.ClassifierConfig(2, width_multiplier=1 / 16, frames=frames, height=40, width=40)
    model = C.C3DClassifier(cfg).eval()
    with torch.no_grad():
        feats = model.features(torch.zeros(1, 4, frames, 40, 40))
    assert [tuple(f.shape[2:]) for f in feats] == cfg.stage_shapes()[1:]


def test_forward_dimension_check():
    model = C.C3DClassifier(C.ClassifierConfig(3, 1 / 8, frames=8, height=32, width=32))
    with pytest.raises(DataError):
        model(torch.zeros(1, 4, 9, 32, 32))


def test_non_finite_activation_diagnostics():
    model = C.C3DClassifier(C.ClassifierConfig(3, 1 / 8, frames=8, height=32, width=32)).eval()
    x = torch.zeros(1, 4, 8, 32, 32)
    x[0, 0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError, match="block 1"):
        model(x)


def test_uniform_cross_entropy_is_log_classes():
    for n in (2, 3, 6):
        assert C.cross_entropy(torch.zeros(4, n, dtype=torch.float64), torch.zeros(4, dtype=torch.long)).item() == pytest.approx(math.log(n), abs=1e-12)


def test_first_batch_loss_near_log_classes():
    torch.manual_seed(0)
    cfg = C.ClassifierConfig(3, 1 / 8, frames=12)
    model = C.C3DClassifier(cfg).train()
    x = torch.randn(8, 4, 12, 112, 112)
    loss = C.cross_entropy(model(x), torch.arange(8) % 3).item()
    assert loss == pytest.approx(math.log(3), rel=0.1)


def test_softmax_sums_to_one():
    data = _tensors(4)
    art = C.train(data, [], ["real", "genA"], C.TrainHyper(epochs=1, lr=1e-3, batch=4), 1 / 8)
    for p in C.predict_samples([ft for ft, _ in data], art):
        assert abs(p.probabilities.sum() - 1) < 1e-6
        assert 0 <= p.probabilities.min() and p.probabilities.max() <= 1
        assert p.confidence == p.probabilities.max()


def test_overfit_eight_samples():
    data = _tensors(8, seed=3)
    art = C.train(data, [], ["real", "genA"], C.TrainHyper(epochs=200, lr=1e-3, batch=8), 1 / 8)
    accs = [row["train_acc"] for row in art.log]
    first_perfect = next(i for i, a in enumerate(accs) if a == 1.0)
    assert first_perfect < 200
    preds = C.predict_samples([ft for ft, _ in data], art)
    assert [p.label for p in preds] == [y for _, y in data]


def test_training_is_reproducible_and_logged():
    data = _tensors(6)
    val = _tensors(2, seed=9)
    a = C.train(data, val, ["real", "genA"], C.TrainHyper(epochs=3, lr=1e-3, batch=4, seed=5), 1 / 8)
    b = C.train(data, val, ["real", "genA"], C.TrainHyper(epochs=3, lr=1e-3, batch=4, seed=5), 1 / 8)
    assert a.log == b.log and len(a.log) == 3
    assert set(a.log[0]) == {"epoch", "loss", "train_acc", "val_acc"}
    for v, w in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert torch.equal(v, w)


def test_best_validation_snapshot_kept():
    data = _tensors(6)
    val = _tensors(4, seed=11)
    art = C.train(data, val, ["real", "genA"], C.TrainHyper(epochs=4, lr=1e-3, batch=3), 1 / 8)
    best = max(r["val_acc"] for r in art.log)
    x = [ft for ft, _ in val]
    acc = np.mean([p.label == y for p, (_, y) in zip(C.predict_samples(x, art), val)])
    assert acc == pytest.approx(best)


def test_train_errors(monkeypatch):
    with pytest.raises(DataError, match="absent"):
        C.train(_tensors(4, classes=1), [], ["real", "genA"], C.TrainHyper(epochs=1))
    with pytest.raises(DataError):
        C.train([], [], ["real", "genA"])
    monkeypatch.setattr(C, "cross_entropy", lambda logits, y: logits.sum() * float("nan"))
    with pytest.raises(NumericError, match="diverged"):
        C.train(_tensors(4), [], ["real", "genA"], C.TrainHyper(epochs=1, batch=4), 1 / 8)


def test_predict_determinism_and_stats_guard():
    data = _tensors(4)
    art = C.train(data, [], ["real", "genA"], C.TrainHyper(epochs=1, batch=4), 1 / 8)
    ft = data[0][0]
    p1, p2 = C.predict_sample(ft, art), C.predict_sample(ft, art)
    assert np.array_equal(p1.probabilities, p2.probabilities)
    # pre-normalized with the model's stats: same answer
    p3 = C.predict_sample(normalize(ft, art.stats), art)
    np.testing.assert_allclose(p3.probabilities, p1.probabilities, atol=1e-12)
    foreign = normalize(ft, NormStats.identity())
    with pytest.raises(DataError, match="stats"):
        C.predict_sample(foreign, art)


def test_artifact_roundtrip(tmp_path):
    data = _tensors(4)
    art = C.train(data, [], ["real", "genA"], C.TrainHyper(epochs=1, batch=4), 1 / 8)
    art.save(tmp_path / "m.mmw")
    back = C.ModelArtifact.load(tmp_path / "m.mmw")
    assert back.labels == art.labels and back.config == art.config and back.stats == art.stats
    assert back.log == art.log and back.seed == art.seed
    x = [ft for ft, _ in data]
    for a, b in zip(C.predict_samples(x, art), C.predict_samples(x, back)):
        assert np.array_equal(a.probabilities, b.probabilities)
    with pytest.raises(DataError):
        C.ModelArtifact(art.model, art.config, art.stats, ["real"])
