import csv

import numpy as np
import pytest

from fire_ts import core as F
from fire_ts.core import CTensor, Tape, Tensor
from fire_ts.data import Scaler, Series, WindowSet
from fire_ts.loss import LossConfig
from fire_ts.model import ModelConfig, forward, init_params
from fire_ts.trainer import (AdamState, TrainConfig, TrainingError, _channel_batches,
                             adam_step, batch_loss, clip_gradients, evaluate, train)

SMALL = dict(lookback=32, horizon=8, patch_len=8, stride=4, embed_dim=4, attn_dim=2)


def _series(n=200, c=2, seed=0):
    t = np.arange(n)
    rng = np.random.default_rng(seed)
    cols = [np.sin(2 * np.pi * t / (8 + 4 * k)) + 0.05 * rng.standard_normal(n) for k in range(c)]
    return Series(np.stack(cols, axis=1), tuple(f"c{k}" for k in range(c)))


def _sets(c=2):
    s = _series(c=c)
    return WindowSet(s, 32, 8), WindowSet(_series(80, c, 1), 32, 8)


# --- Adam ----------------------------------------------------------------------------

def test_zero_gradients_leave_parameters():
    w = Tensor(np.array([1.0, -2.0]))
    adam_step({"w": w}, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_first_step_is_minus_lr_times_sign():
    w = Tensor(np.array([1.0, 1.0, 1.0]))
    adam_step({"w": w}, {"w": np.array([3.0, -0.5, 1e-3])}, AdamState(), 0.01)
    np.testing.assert_allclose(w.data, [0.99, 1.01, 0.99], rtol=1e-6)


def test_complex_parameter_moves_re_and_im_independently():
    z = CTensor(np.array([1 + 1j]))
    adam_step({"z": z}, {"z": np.array([2.0 - 5.0j])}, AdamState(), 0.1)
    np.testing.assert_allclose(z.data, [0.9 + 1.1j], rtol=1e-6)


def test_quadratic_bowl_converges():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    st = AdamState()
    for _ in range(200):
        w.grad = None
        with Tape() as tape:
            tape.backward(F.sum(F.square(w)))
        adam_step({"w": w}, {"w": w.grad}, st, 0.05)
    assert np.max(np.abs(w.data)) < 1e-2


def test_nan_gradient_names_parameter():
    w = Tensor(np.ones(2))
    with pytest.raises(TrainingError, match="W_proj"):
        adam_step({"W_proj": w}, {"W_proj": np.array([np.nan, 0.0])}, AdamState(), 0.1)


def test_none_gradient_skipped():
    w = Tensor(np.ones(2))
    adam_step({"w": w}, {"w": None}, AdamState(), 0.1)
    np.testing.assert_array_equal(w.data, [1.0, 1.0])


def test_clip_gradients():
    g = {"a": np.array([3.0, 4.0]), "b": None}
    assert clip_gradients(g, 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(g["a"]) == pytest.approx(1.0, rel=1e-9)


def test_single_step_reduces_loss():
    cfg = ModelConfig(**SMALL)
    p = init_params(cfg)
    tr, _ = _sets()
    x, y, _ = tr.batch(np.arange(16))
    lcfg = LossConfig()
    before = float(batch_loss(p, cfg, lcfg, x, y).total.data)
    named = p.named()
    with Tape() as tape:
        tape.backward(batch_loss(p, cfg, lcfg, x, y).total)
    adam_step(named, {k: t.grad for k, t in named.items()}, AdamState(), 1e-3)
    assert float(batch_loss(p, cfg, lcfg, x, y).total.data) < before


# --- loop ------------------------------------------------------------------------------

def test_patience_stops_and_returns_best():
    cfg = ModelConfig(**SMALL)
    tr, va = _sets()
    curve = iter([1.0, 2.0, 0.5, 0.4])
    snaps = []

    def val_fn(p):
        snaps.append(p.copy())
        return next(curve)

    best, hist = train(cfg, tr, va, LossConfig(), TrainConfig(patience=1, max_epochs=4,
                                                              max_train_batches=2), val_fn=val_fn)
    assert len(hist.epochs) == 2 and hist.stopped_early and hist.best_epoch == 1
    for k, t in best.named().items():
        assert np.array_equal(t.data, snaps[0].named()[k].data)


def test_training_is_deterministic():
    cfg = ModelConfig(**SMALL)
    tr, va = _sets()
    tc = TrainConfig(max_epochs=2, batch_size=16)
    a, ha = train(cfg, tr, va, LossConfig(), tc)
    b, hb = train(cfg, tr, va, LossConfig(), tc)
    assert ha.epochs[-1]["val_loss"] == hb.epochs[-1]["val_loss"]
    for k, t in a.named().items():
        assert np.array_equal(t.data, b.named()[k].data)


def test_training_reduces_validation_loss():
    cfg = ModelConfig(**SMALL)
    tr, va = _sets()
    _, hist = train(cfg, tr, va, LossConfig(), TrainConfig(max_epochs=6, batch_size=16,
                                                           lr=5e-3))
    assert hist.epochs[-1]["val_loss"] < hist.epochs[0]["val_loss"]


def test_per_channel_batches_never_mix():
    tr, _ = _sets(c=3)
    rng = np.random.default_rng(0)
    seen = []
    for idx in _channel_batches(tr, 10, rng):
        _, _, ch = tr.batch(idx)
        assert len(set(np.asarray(ch).tolist())) == 1
        seen += list(idx)
    assert sorted(seen) == list(range(len(tr)))


def test_per_channel_needs_independent_windows():
    s = _series(c=2)
    with pytest.raises(TrainingError):
        next(_channel_batches(WindowSet(s, 32, 8, channel_independent=False), 4,
                              np.random.default_rng(0)))


def test_empty_sets_rejected():
    cfg = ModelConfig(**SMALL)
    tr, _ = _sets()
    empty = WindowSet(_series(20), 32, 8)
    with pytest.raises(TrainingError, match="non-empty"):
        train(cfg, tr, empty, LossConfig(), TrainConfig(max_epochs=1))


def test_history_csv(tmp_path):
    cfg = ModelConfig(**SMALL)
    tr, va = _sets()
    _, hist = train(cfg, tr, va, LossConfig(), TrainConfig(max_epochs=2, max_train_batches=1))
    path = tmp_path / "h.csv"
    hist.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "lr"}


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(metrics_scale="percent")


# --- evaluate -------------------------------------------------------------------------------

def test_perfect_predictor_scores_zero():
    _, va = _sets()
    cfg = ModelConfig(**SMALL)
    truth = {}

    def oracle(x):
        # look up the target of each window by its lookback contents
        return np.stack([truth[xi.tobytes()] for xi in x])

    for i in range(len(va)):
        x, y, _ = va.batch([i])
        truth[x[0].tobytes()] = y[0]
    assert evaluate(None, cfg, va, predictor=oracle) == (0.0, 0.0)


def test_zero_predictor_on_unit_series():
    rng = np.random.default_rng(0)
    s = Series(rng.standard_normal((4000, 1)), ("a",))
    ws = WindowSet(s, 32, 8)
    mse, mae = evaluate(None, ModelConfig(**SMALL), ws, predictor=lambda x: np.zeros((len(x), 8)))
    assert mse == pytest.approx(1.0, abs=0.05)
    assert mae == pytest.approx(np.sqrt(2 / np.pi), abs=0.03)


def test_hand_computed_two_windows():
    s = Series(np.arange(6.0)[:, None], ("a",))
    ws = WindowSet(s, 3, 2)  # two windows: targets [3,4] and [4,5]
    assert len(ws) == 2
    mse, mae = evaluate(None, ModelConfig(**SMALL), ws,
                        predictor=lambda x: np.full((len(x), 2), 4.0))
    assert mse == pytest.approx((1 + 0 + 0 + 1) / 4)
    assert mae == pytest.approx(0.5)


def test_raw_scale_uses_scaler():
    raw = Series(np.arange(6.0)[:, None] * 10 + 100, ("a",))
    sc = Scaler.fit(raw)
    ws = WindowSet(sc.transform(raw), 3, 2)
    zero = lambda x: np.zeros((len(x), 2))  # noqa: E731
    mse_n, _ = evaluate(None, ModelConfig(**SMALL), ws, predictor=zero)
    mse_r, _ = evaluate(None, ModelConfig(**SMALL), ws, scale="raw", scaler=sc, predictor=zero)
    assert mse_r == pytest.approx(mse_n * sc.std[0] ** 2)
    with pytest.raises(ValueError, match="scaler"):
        evaluate(None, ModelConfig(**SMALL), ws, scale="raw", predictor=zero)


def test_model_evaluation_matches_forward():
    cfg = ModelConfig(**SMALL)
    p = init_params(cfg)
    _, va = _sets()
    x, y, _ = va.batch(np.arange(len(va)))
    pred = forward(x, p, cfg).data
    mse, mae = evaluate(p, cfg, va)
    assert mse == pytest.approx(np.mean((pred - y) ** 2), rel=1e-12)
    assert mae == pytest.approx(np.mean(np.abs(pred - y)), rel=1e-12)
