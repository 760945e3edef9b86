"""End-to-end runs: load a dataset, split, scale, train, evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import PRESETS, Scaler, Schema, Series, Splits, WindowSet, load_csv, split
from .loss import LossConfig
from .model import ModelConfig, ModelParams, config_hash
from .trainer import History, TrainConfig, evaluate, train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    name: str
    preset: str
    series: Series
    splits: Splits
    scaler: Scaler
    train: WindowSet
    val: WindowSet
    test: WindowSet


def guess_preset(path) -> str:
    stem = Path(path).stem.lower()
    if stem.startswith("etth"):
        return "etth"
    if stem.startswith("ettm"):
        return "ettm"
    for key in ("weather", "traffic"):
        if key in stem:
            return key
    if stem.startswith(("elc", "electricity", "ecl")):
        return "elc"
    return "custom"


def load_dataset(path, preset: str | None = None, fill: str = "drop") -> tuple[Series, str]:
    preset = preset or guess_preset(path)
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    schema = Schema(n_channels=PRESETS[preset]["n_channels"], fill=fill)
    return load_csv(path, schema), preset


def prepare(series: Series, preset, lookback: int, horizon: int, name: str = "",
            channel_independent: bool = True, channels=None) -> Prepared:
    """Split with the preset protocol (or a ratio triple), fit the scaler on
    train, and build window sets for each segment."""
    if channels is not None:
        series = series.channels(channels)
    sp = split(series, preset, lookback=lookback, horizon=horizon)
    scaler = Scaler.fit(sp.train)
    ws = [WindowSet(scaler.transform(s), lookback, horizon, channel_independent)
          for s in (sp.train, sp.val, sp.test)]
    label = preset if isinstance(preset, str) else "ratios"
    return Prepared(name or label, label, series, sp, scaler, *ws)


@dataclass
class RunResult:
    params: ModelParams
    history: History
    lr: float
    val_loss: float
    mse: float
    mae: float
    lr_scan: list[dict]


def fit_and_score(prep: Prepared, mcfg: ModelConfig, lcfg: LossConfig, tcfg: TrainConfig,
                  lr_grid=None) -> RunResult:
    """Train (optionally over an lr grid, picking the best validation loss)
    and report test metrics on ``tcfg.metrics_scale``."""
    grid = list(lr_grid) if lr_grid else [tcfg.lr]
    best = None
    scan = []
    for lr in grid:
        cfg = replace(tcfg, lr=lr)
        params, hist = train(mcfg, prep.train, prep.val, lcfg, cfg)
        val = min(e["val_loss"] for e in hist.epochs)
        scan.append({"lr": lr, "val_loss": val, "epochs": len(hist.epochs)})
        log.info("lr %.0e: best val %.5f after %d epochs", lr, val, len(hist.epochs))
        if best is None or val < best[2]:
            best = (params, hist, val, lr)
    params, hist, val, lr = best
    mse, mae = evaluate(params, mcfg, prep.test, tcfg.metrics_scale, prep.scaler)
    return RunResult(params, hist, lr, val, mse, mae, scan)


def resolved_config(mcfg: ModelConfig, lcfg: LossConfig, tcfg: TrainConfig, data: dict) -> dict:
    return {"model": mcfg.to_dict(), "loss": lcfg.to_dict(), "train": tcfg.to_dict(), "data": data}


def metrics_record(dataset: str, mcfg, lcfg, tcfg, data: dict, mse: float, mae: float,
                   **extra) -> dict:
    cfg = resolved_config(mcfg, lcfg, tcfg, data)
    return {
        "dataset": dataset,
        "horizon": mcfg.horizon,
        "mse": mse,
        "mae": mae,
        "variant": mcfg.variant,
        "loss": lcfg.ablation,
        "metrics_scale": tcfg.metrics_scale,
        "config_hash": config_hash(cfg),
        **extra,
        "config": cfg,
    }


def last_value_baseline(windows: WindowSet) -> tuple[float, float]:
    """Repeat the final lookback value across the horizon."""
    return evaluate(None, None, windows, predictor=lambda x: np.repeat(
        x[..., -1:], windows.horizon, axis=-1))

