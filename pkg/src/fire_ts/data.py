"""Dataset ingestion, chronological splits, sliding windows and patching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class LoadError(ValueError):
    pass


@dataclass(frozen=True)
class Series:
    values: np.ndarray  # [L_total, C]
    channel_names: tuple[str, ...]
    timestamps: np.ndarray | None = None
    load_report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError(f"series values must be 2-D, got shape {v.shape}")
        if len(self.channel_names) != v.shape[1]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {v.shape[1]} columns"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("series contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "Series":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return Series(self.values[start:stop], self.channel_names, ts)

    def channels(self, idx) -> "Series":
        idx = [idx] if np.isscalar(idx) else list(idx)
        return Series(
            self.values[:, idx],
            tuple(self.channel_names[i] for i in idx),
            self.timestamps,
        )

    def with_values(self, values: np.ndarray) -> "Series":
        return Series(values, self.channel_names, self.timestamps)


@dataclass(frozen=True)
class Schema:
    n_channels: int | None = None
    fill: str = "drop"  # drop | ffill | error
    max_bad_rows: int = 0


def load_csv(path, schema: Schema | None = None) -> Series:
    """Read a ``date, ch1, ..., chC`` CSV.

    Empty cells are missing values, handled per ``schema.fill``.  Cells that
    are present but not numeric count as unparseable; more than
    ``schema.max_bad_rows`` such rows raise :class:`LoadError`.
    """
    schema = schema or Schema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    if raw.shape[1] < 2:
        raise LoadError(f"{path}: need a timestamp column and at least one channel")
    names = tuple(str(c) for c in raw.columns[1:])
    if schema.n_channels is not None and len(names) != schema.n_channels:
        raise LoadError(
            f"{path}: expected {schema.n_channels} channels, found {len(names)}"
        )

    cells = raw.iloc[:, 1:].apply(lambda s: s.str.strip())
    missing = cells.isin(["", "nan", "NaN", "NA", "null"])
    numeric = cells.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & ~missing
    bad_rows = np.flatnonzero(bad.any(axis=1).to_numpy())
    # header is line 1, first data row is line 2
    bad_lines = [int(i) + 2 for i in bad_rows]
    if len(bad_rows) > schema.max_bad_rows:
        shown = ", ".join(map(str, bad_lines[:20]))
        raise LoadError(f"{path}: {len(bad_rows)} unparseable rows (lines {shown})")

    values = numeric.to_numpy(dtype=np.float64)
    values[~np.isfinite(values)] = np.nan
    nan_rows = np.flatnonzero(np.isnan(values).any(axis=1))
    report = {
        "path": str(path),
        "rows_read": int(values.shape[0]),
        "unparseable_lines": bad_lines,
        "fill": schema.fill,
        "dropped_lines": [],
        "filled_lines": [],
    }
    keep = np.ones(len(values), dtype=bool)
    if len(nan_rows):
        lines = [int(i) + 2 for i in nan_rows]
        if schema.fill == "error":
            raise LoadError(f"{path}: missing values on lines {lines[:20]}")
        if schema.fill == "drop":
            keep[nan_rows] = False
            report["dropped_lines"] = lines
        elif schema.fill == "ffill":
            values = pd.DataFrame(values).ffill().bfill().to_numpy()
            report["filled_lines"] = lines
        else:
            raise ValueError(f"unknown fill policy {schema.fill!r}")
    values = values[keep]
    timestamps = raw.iloc[:, 0].to_numpy()[keep]
    report["rows_kept"] = int(values.shape[0])
    report["n_channels"] = len(names)
    if report["dropped_lines"] or report["filled_lines"]:
        log.info(
            "%s: dropped %d rows, filled %d rows",
            path.name, len(report["dropped_lines"]), len(report["filled_lines"]),
        )
    return Series(values, names, timestamps, load_report=report)


def write_load_report(series: Series, path) -> None:
    Path(path).write_text(json.dumps(series.load_report, indent=2))


# ---------------------------------------------------------------------------
# splits

# Row borders of the public ETT loaders: 12/4/4 months of the first 20 months.
_ETT_MONTH = {"etth": 30 * 24, "ettm": 30 * 24 * 4}

PRESETS = {
    "etth": {"kind": "ett", "n_channels": 7, "patch_len": 16},
    "ettm": {"kind": "ett", "n_channels": 7, "patch_len": 16},
    "weather": {"kind": "ratio", "ratios": (0.7, 0.1, 0.2), "n_channels": 21, "patch_len": 16},
    "traffic": {"kind": "ratio", "ratios": (0.7, 0.1, 0.2), "n_channels": 862, "patch_len": 16},
    "elc": {"kind": "ratio", "ratios": (0.7, 0.1, 0.2), "n_channels": 321, "patch_len": 32},
    "custom": {"kind": "ratio", "ratios": (0.7, 0.1, 0.2), "n_channels": None, "patch_len": 16},
}


@dataclass(frozen=True)
class Splits:
    train: Series
    val: Series
    test: Series
    # first row of each segment in the source series
    starts: tuple[int, int, int] = (0, 0, 0)
    # leading context rows in val/test that overlap the previous segment
    context: int = 0


def split_borders(n: int, protocol, lookback: int = 0) -> list[tuple[int, int]]:
    """Row ranges ``[(start, stop)] * 3`` for train/val/test.

    ``protocol`` is a ratio triple or a preset name.  With ``lookback > 0``
    the val and test ranges start ``lookback`` rows early so their first
    forecast target follows the previous segment directly.
    """
    if isinstance(protocol, str):
        preset = PRESETS.get(protocol)
        if preset is None:
            raise ValueError(f"unknown split preset {protocol!r}")
        if preset["kind"] == "ett":
            month = _ETT_MONTH[protocol]
            n_train, n_val, n_test = 12 * month, 4 * month, 4 * month
            if n_train + n_val + n_test > n:
                raise ValueError(
                    f"{protocol} preset needs {n_train + n_val + n_test} rows, have {n}"
                )
        else:
            n_train, n_val, n_test = _ratio_sizes(n, preset["ratios"])
    else:
        n_train, n_val, n_test = _ratio_sizes(n, protocol)
    b0 = (0, n_train)
    b1 = (max(n_train - lookback, 0), n_train + n_val)
    b2 = (max(n_train + n_val - lookback, 0), n_train + n_val + n_test)
    return [b0, b1, b2]


def _ratio_sizes(n: int, ratios) -> tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative values summing to 1: {ratios}")
    # public loaders: train = int(0.7 n), test = int(0.2 n), val takes the rest
    n_train = int(n * ratios[0])
    n_test = int(n * ratios[2])
    return n_train, n - n_train - n_test, n_test


def split(series: Series, protocol, lookback: int = 0, horizon: int = 0) -> Splits:
    """Chronological train/val/test split.

    When ``lookback``/``horizon`` are given, every segment must hold at least
    one full window.
    """
    borders = split_borders(series.length, protocol, lookback)
    parts = [series.rows(a, b) for a, b in borders]
    need = lookback + horizon
    if need:
        for name, part in zip(("train", "val", "test"), parts):
            if part.length < need:
                raise ValueError(
                    f"{name} segment has {part.length} rows, shorter than "
                    f"lookback + horizon = {need}"
                )
    return Splits(*parts, starts=tuple(a for a, _ in borders), context=lookback)


@dataclass(frozen=True)
class Scaler:
    """Per-channel standardization fitted on the training segment."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, series: Series) -> "Scaler":
        std = series.values.std(axis=0)
        std = np.where(std < STD_FLOOR, 1.0, std)
        return cls(series.values.mean(axis=0), std)

    def transform(self, series: Series) -> Series:
        return series.with_values((series.values - self.mean) / self.std)

    def inverse(self, values: np.ndarray, channel: np.ndarray | int) -> np.ndarray:
        return values * self.std[channel] + self.mean[channel]


# ---------------------------------------------------------------------------
# windows

@dataclass(frozen=True)
class Window:
    x: np.ndarray  # [L, 1]
    y: np.ndarray  # [L_pred, 1]
    channel: int
    norm_stats: tuple[float, float]


def instance_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row mean and population std over the last axis, std floored to 1."""
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    sd = np.where(sd < STD_FLOOR, 1.0, sd)
    return mu, sd


def normalize(x: np.ndarray, stats) -> np.ndarray:
    mu, sd = stats
    return (x - mu) / sd


def denormalize(y_hat, norm_stats):
    mu, sd = norm_stats
    return y_hat * sd + mu


class WindowSet:
    """All stride-1 windows of a segment, indexed lazily.

    With channel independence on, window ``i`` is channel ``i // n_starts``
    at start offset ``i % n_starts``.  With it off, each index is one
    multivariate start and :meth:`batch` returns ``[B, C, L]`` arrays.
    """

    def __init__(self, series: Series, lookback: int, horizon: int,
                 channel_independent: bool = True):
        if lookback < 1 or horizon < 1:
            raise ValueError("lookback and horizon must be positive")
        self.series = series
        self.lookback = lookback
        self.horizon = horizon
        self.channel_independent = channel_independent
        self.n_starts = max(series.length - lookback - horizon + 1, 0)
        # [C, n_starts, lookback + horizon] view, no copy
        cols = np.ascontiguousarray(series.values.T)
        if self.n_starts:
            self._view = np.lib.stride_tricks.sliding_window_view(
                cols, lookback + horizon, axis=1
            )[:, : self.n_starts]
        else:
            self._view = np.empty((series.n_channels, 0, lookback + horizon))

    def __len__(self) -> int:
        if self.channel_independent:
            return self.n_starts * self.series.n_channels
        return self.n_starts

    def locate(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        return idx // self.n_starts, idx % self.n_starts

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, y, channel) arrays for window indices ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.channel_independent:
            ch, st = self.locate(idx)
            seg = self._view[ch, st]
        else:
            seg = np.swapaxes(self._view[:, idx], 0, 1)
            ch = np.broadcast_to(np.arange(self.series.n_channels), seg.shape[:2])
        return seg[..., : self.lookback], seg[..., self.lookback:], ch

    def __iter__(self) -> Iterator[Window]:
        for i in range(len(self)):
            x, y, ch = self.batch([i])
            if self.channel_independent:
                xs = x[0]
                mu, sd = instance_stats(xs)
                yield Window(xs[:, None], y[0][:, None], int(ch[0]), (float(mu[0]), float(sd[0])))
            else:
                for c in range(x.shape[1]):
                    mu, sd = instance_stats(x[0, c])
                    yield Window(x[0, c][:, None], y[0, c][:, None], c, (float(mu[0]), float(sd[0])))


def make_windows(series: Series, lookback: int, horizon: int,
                 channel_independent: bool = True) -> Iterator[Window]:
    return iter(WindowSet(series, lookback, horizon, channel_independent))


# ---------------------------------------------------------------------------
# patching

@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # [..., N_p, L_p]
    stride: int
    patch_len: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[-2]


def n_patches(length: int, patch_len: int, stride: int) -> int:
    return (length - patch_len) // stride + 1


def patch(x, patch_len: int, stride: int) -> PatchSet:
    """Overlapping patches along the last axis; uncovered tail samples are dropped."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if patch_len > length:
        raise ValueError(f"patch length {patch_len} exceeds series length {length}")
    if patch_len < 1 or stride < 1:
        raise ValueError("patch length and stride must be >= 1")
    n = n_patches(length, patch_len, stride)
    view = np.lib.stride_tricks.sliding_window_view(x, patch_len, axis=-1)
    return PatchSet(view[..., : (n - 1) * stride + 1 : stride, :], stride, patch_len)
