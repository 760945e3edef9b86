"""Benchmark grids: horizons, patch lengths, look-backs, ablations, model size.

Every finished cell is appended to ``results.csv`` immediately, so a failing
or interrupted cell never touches rows written before it.  Average rows
(``T = Avg.``) are appended once all horizons of a setting are in.
"""

from __future__ import annotations

import csv
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .loss import LossConfig
from .model import ModelConfig
from .pipeline import fit_and_score, load_dataset, prepare
from .trainer import TrainConfig

log = logging.getLogger(__name__)

HORIZONS = (96, 192, 336, 720)

# suite -> (swept field, values)
SUITES = {
    "main": (None, (None,)),
    "patch": ("patch_len", (4, 8, 16, 32, 48)),
    "lookback": ("lookback", (96, 192, 288, 384, 512)),
    "ablation": ("variant", ("full", "advanced", "base")),
    "loss": ("ablation", ("full", "enhanced", "advanced", "base")),
    "width": ("embed_dim", (8, 16, 32, 64, 128)),
    "depth": ("depth", (1, 2, 3, 4)),
}

COLUMNS = ["suite", "dataset", "T", "setting", "value", "seed", "lr", "mse", "mae",
           "status", "error"]


@dataclass
class Cell:
    suite: str
    dataset: str
    data_path: str
    preset: str
    horizon: int
    setting: str | None
    value: object
    seed: int
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    lr_grid: tuple | None
    error: str = ""  # invalid configuration, recorded instead of run


def _apply(cell_model: ModelConfig, cell_loss: LossConfig, setting, value):
    if setting is None:
        return cell_model, cell_loss
    if setting == "ablation":
        return cell_model, replace(cell_loss, ablation=value)
    kw = {setting: value}
    if setting == "patch_len":
        kw["stride"] = max(value // 2, 1)
    return replace(cell_model, **kw), cell_loss


def plan(suite: str, data_path, preset: str | None, model: ModelConfig, loss: LossConfig,
         train: TrainConfig, horizons=HORIZONS, seeds=(0,), lr_grid=None) -> list[Cell]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    setting, values = SUITES[suite]
    dataset = Path(data_path).stem
    cells = []
    for value in values:
        for T in horizons:
            for seed in seeds:
                error = ""
                try:
                    m, l = _apply(replace(model, horizon=T, seed=seed), loss, setting, value)
                except ValueError as exc:
                    m, l, error = model, loss, f"ValueError: {exc}"
                cells.append(Cell(suite, dataset, str(data_path), preset or "", T, setting,
                                  value, seed, m, l, replace(train, seed=seed),
                                  tuple(lr_grid) if lr_grid else None, error))
    return cells


def run_cell(cell: Cell) -> dict:
    row = {"suite": cell.suite, "dataset": cell.dataset, "T": cell.horizon,
           "setting": cell.setting or "", "value": "" if cell.value is None else cell.value,
           "seed": cell.seed, "lr": "", "mse": "", "mae": "", "status": "ok", "error": ""}
    if cell.error:
        log.error("cell %s T=%s %s=%s skipped: %s", cell.suite, cell.horizon,
                  cell.setting, cell.value, cell.error)
        row.update(status="error", error=cell.error)
        return row
    try:
        series, preset = load_dataset(cell.data_path, cell.preset or None)
        prep = prepare(series, preset, cell.model.lookback, cell.horizon, cell.dataset)
        res = fit_and_score(prep, cell.model, cell.loss, cell.train, cell.lr_grid)
        row.update(lr=res.lr, mse=res.mse, mae=res.mae)
    except Exception as exc:  # cell failures are recorded, the suite continues
        log.error("cell %s T=%s %s=%s failed: %s", cell.suite, cell.horizon,
                  cell.setting, cell.value, exc)
        log.debug(traceback.format_exc())
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def _append(path: Path, row: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        if new:
            w.writeheader()
        w.writerow(row)
        fh.flush()


def _avg_row(rows: list[dict]) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    first = rows[0]
    row = {**first, "T": "Avg.", "seed": "", "lr": "", "error": ""}
    if len(ok) == len(rows):
        row.update(mse=float(np.mean([r["mse"] for r in ok])),
                   mae=float(np.mean([r["mae"] for r in ok])), status="ok")
    else:
        row.update(mse="", mae="", status="incomplete")
    return row


def run_suite(cells: list[Cell], out_dir, jobs: int = 1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = out_dir / "results.csv"
    groups: dict[tuple, list[dict]] = {}
    expected: dict[tuple, int] = {}
    for c in cells:
        key = (c.dataset, c.setting or "", "" if c.value is None else str(c.value))
        expected[key] = expected.get(key, 0) + 1
    rows = []

    def collect(row):
        _append(results, row)
        rows.append(row)
        key = (row["dataset"], row["setting"], str(row["value"]))
        groups.setdefault(key, []).append(row)
        if len(groups[key]) == expected.get(key, -1):
            avg = _avg_row(groups[key])
            _append(results, avg)
            rows.append(avg)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for row in pool.map(run_cell, cells):
                collect(row)
    else:
        for c in cells:
            collect(run_cell(c))
    write_summary(rows, out_dir / "summary.md")
    return rows


def _fmt(v) -> str:
    return f"{v:.3f}" if isinstance(v, float) else str(v)


def write_summary(rows: list[dict], path) -> None:
    lines = ["| dataset | setting | value | T | MSE | MAE | status |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(
            f"| {r['dataset']} | {r['setting'] or '-'} | {r['value'] if r['value'] != '' else '-'} "
            f"| {r['T']} | {_fmt(r['mse'])} | {_fmt(r['mae'])} | {r['status']} |"
        )
    Path(path).write_text("\n".join(lines) + "\n")
