"""Adam training loop with early stopping, and MSE/MAE evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Tape, Tensor
from .data import Scaler, WindowSet
from .loss import LossConfig, composite
from .model import ModelConfig, ModelParams, forward, init_params

log = logging.getLogger(__name__)

LR_GRID = (1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 1e-4)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 8
    lr_grid: tuple[float, ...] | None = None
    metrics_scale: str = "normalized"
    clip_norm: float | None = 5.0
    per_channel: bool = False  # batches never mix channels
    max_train_batches: int | None = None  # per epoch; None = full pass
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.metrics_scale not in ("normalized", "raw"):
            raise ValueError("metrics_scale must be 'normalized' or 'raw'")

    def to_dict(self) -> dict:
        return asdict(self)


class AdamState:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
              state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam; complex parameters update re/im independently.

    Parameters whose gradient is ``None`` (unused by the active variant) are
    left untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.is_complex:
            g = np.stack((g.real, g.imag))
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if p.is_complex:
            p.data -= step[0] + 1j * step[1]
        else:
            p.data -= step


def clip_gradients(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads.values() if g is not None))
    if total > max_norm:
        k = max_norm / (total + 1e-12)
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * k
    return total


def batch_loss(params: ModelParams, mcfg: ModelConfig, lcfg: LossConfig,
               x: np.ndarray, y: np.ndarray):
    trace = {}
    y_hat = forward(x, params, mcfg, trace=trace)
    phases = trace["phase_hat"][..., -1, :] if lcfg.phase_source == "features" else None
    return composite(y, y_hat, phases, lcfg)


def _flatten_xy(x, y):
    # [B, C, L] (channel-mixing window sets) -> [B*C, L]
    return x.reshape(-1, x.shape[-1]), y.reshape(-1, y.shape[-1])


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, size):
        yield order[i : i + size]


def _channel_batches(windows: WindowSet, size: int, rng: np.random.Generator):
    """Shuffled batches drawn from one channel each, in shuffled order."""
    if not windows.channel_independent:
        raise TrainingError("per-channel batching needs channel-independent windows")
    n = windows.n_starts
    batches = []
    for c in range(windows.series.n_channels):
        order = c * n + rng.permutation(n)
        batches += [order[i : i + size] for i in range(0, n, size)]
    for j in rng.permutation(len(batches)):
        yield batches[j]


def validation_loss(params, mcfg, lcfg, windows: WindowSet, batch_size: int = 512) -> float:
    total, count = 0.0, 0
    for idx in _batches(len(windows), batch_size, None):
        x, y, _ = windows.batch(idx)
        x, y = _flatten_xy(x, y)
        rep = batch_loss(params, mcfg, lcfg, x, y)
        total += float(rep.total.data) * len(x)
        count += len(x)
    if count == 0:
        raise TrainingError("empty validation set")
    return total / count


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), e["lr"]])


def train(mcfg: ModelConfig, train_windows: WindowSet, val_windows: WindowSet,
          lcfg: LossConfig, tcfg: TrainConfig, params: ModelParams | None = None,
          val_fn=None) -> tuple[ModelParams, History]:
    """Mini-batch Adam with early stopping on validation loss.

    ``val_fn(params) -> float`` overrides the default validation loss (the
    composite objective over ``val_windows``); useful for tests that need to
    script the validation curve.
    """
    if len(train_windows) == 0 or (val_fn is None and len(val_windows) == 0):
        raise TrainingError("training and validation sets must be non-empty")
    params = params if params is not None else init_params(mcfg)
    named = params.named()
    rng = np.random.default_rng(tcfg.seed)
    adam = AdamState()
    hist = History()
    best_val = math.inf
    best = params.copy()
    stale = 0
    val_fn = val_fn or (lambda p: validation_loss(p, mcfg, lcfg, val_windows))
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        run, seen = 0.0, 0
        if tcfg.per_channel:
            batches = _channel_batches(train_windows, tcfg.batch_size, rng)
        else:
            batches = _batches(len(train_windows), tcfg.batch_size, rng)
        for step, idx in enumerate(batches):
            if tcfg.max_train_batches is not None and step >= tcfg.max_train_batches:
                break
            x, y, _ = train_windows.batch(idx)
            x, y = _flatten_xy(x, y)
            params.zero_grad()
            with Tape() as tape:
                rep = batch_loss(params, mcfg, lcfg, x, y)
                loss = float(rep.total.data)
                if not math.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch}, step {step}")
                tape.backward(rep.total)
            grads = {k: t.grad for k, t in named.items()}
            if tcfg.clip_norm:
                clip_gradients(grads, tcfg.clip_norm)
            adam_step(named, grads, adam, tcfg.lr)
            run += loss * len(x)
            seen += len(x)
        val = float(val_fn(params))
        hist.epochs.append({"epoch": epoch, "train_loss": run / max(seen, 1),
                            "val_loss": val, "lr": tcfg.lr,
                            "seconds": time.perf_counter() - t0})
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, run / max(seen, 1), val,
                 time.perf_counter() - t0)
        if val < best_val:
            best_val = val
            best = params.copy()
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                hist.stopped_early = True
                break
    return best, hist


def evaluate(params: ModelParams, mcfg: ModelConfig, windows: WindowSet,
             scale: str = "normalized", scaler: Scaler | None = None,
             batch_size: int = 512, predictor=None) -> tuple[float, float]:
    """(MSE, MAE) over every window and channel.

    ``scale='raw'`` maps forecasts and targets back through ``scaler``.
    ``predictor(x) -> y_hat`` replaces the model, e.g. for baselines.
    """
    if len(windows) == 0:
        raise ValueError("empty test set")
    if scale == "raw" and scaler is None:
        raise ValueError("raw-scale metrics need the fitted scaler")
    se, ae, count = 0.0, 0.0, 0
    for idx in _batches(len(windows), batch_size, None):
        x, y, ch = windows.batch(idx)
        y_hat = predictor(x) if predictor is not None else forward(
            x.reshape(-1, x.shape[-1]), params, mcfg).data.reshape(y.shape)
        if scale == "raw":
            chan = np.asarray(ch)[..., None]
            y = scaler.inverse(y, chan)
            y_hat = scaler.inverse(y_hat, chan)
        err = y_hat - y
        se += float(np.sum(err * err))
        ae += float(np.sum(np.abs(err)))
        count += err.size
    return se / count, ae / count
