"""``fire`` command line: train, eval, analyze, bench, inspect-checkpoint.

Configuration precedence is flags > config file (``key=value`` lines) >
dataset preset > built-in defaults.  The resolved configuration is echoed to
stdout as JSON before any work starts.

Exit codes: 0 success, 1 runtime error, 2 usage error or missing dataset.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import DEFAULTS as ANALYSIS_DEFAULTS
from .analytics import analyze_series
from .bench import HORIZONS, SUITES, plan, run_suite
from .data import PRESETS, LoadError, Scaler, write_load_report
from .loss import ABLATIONS, PHASE_SOURCES, LossConfig
from .model import DRIFT_AXES, VARIANTS, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import (fit_and_score, guess_preset, load_dataset, metrics_record, prepare,
                       resolved_config)
from .trainer import LR_GRID, TrainConfig, TrainingError, evaluate

log = logging.getLogger("fire_ts")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _opt_float(text):
    return None if str(text).lower() in ("none", "off", "0") else float(text)


# config key -> (section, field, parser); flag dests use the same keys
KEYS = {
    "lookback": ("model", "lookback", int),
    "horizon": ("model", "horizon", int),
    "patch_len": ("model", "patch_len", int),
    "stride": ("model", "stride", int),
    "dim": ("model", "embed_dim", int),
    "attn_dim": ("model", "attn_dim", int),
    "variant": ("model", "variant", str),
    "drift_axis": ("model", "drift_axis", str),
    "depth": ("model", "depth", int),
    "loss": ("loss", "ablation", str),
    "delta": ("loss", "delta", float),
    "tau_hat": ("loss", "tau_hat", float),
    "lam": ("loss", "lam", float),
    "w_fft": ("loss", "w_fft", float),
    "phase_source": ("loss", "phase_source", str),
    "lr": ("train", "lr", float),
    "batch": ("train", "batch_size", int),
    "epochs": ("train", "max_epochs", int),
    "patience": ("train", "patience", int),
    "metrics_scale": ("train", "metrics_scale", str),
    "clip_norm": ("train", "clip_norm", _opt_float),
    "max_batches": ("train", "max_train_batches", int),
    "per_channel": ("train", "per_channel", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "seed": ("seed", "seed", int),
    "lr_grid": ("grid", "lr_grid", _floats),
}
ALIASES = {"embed_dim": "dim", "batch_size": "batch", "max_epochs": "epochs",
           "patch-len": "patch_len", "ablation": "loss"}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key).replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = KEYS[key][2](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args, preset: str) -> tuple[ModelConfig, LossConfig, TrainConfig, tuple | None, dict]:
    """Merge defaults, preset, config file and flags.  Returns the configs,
    the lr grid (or None) and a key -> source map."""
    values: dict = {}
    source: dict = {}
    pre = PRESETS.get(preset, {})
    if "patch_len" in pre:
        values["patch_len"] = pre["patch_len"]
        source["patch_len"] = f"preset:{preset}"
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            values[k] = v
            source[k] = "config"
    for k in KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
            source[k] = "flag"
    if getattr(args, "no_clip", False):
        values["clip_norm"] = None
        source["clip_norm"] = "flag"
    if getattr(args, "grid", False) and "lr_grid" not in values:
        values["lr_grid"] = LR_GRID
        source["lr_grid"] = "flag"
    sections: dict[str, dict] = {"model": {}, "loss": {}, "train": {}}
    grid = None
    for k, v in values.items():
        sec, fld, _ = KEYS[k]
        if sec == "seed":
            sections["model"]["seed"] = v
            sections["train"]["seed"] = v
        elif sec == "grid":
            grid = tuple(v)
        else:
            sections[sec][fld] = v
    if "stride" not in values and "patch_len" in values:
        sections["model"]["stride"] = max(values["patch_len"] // 2, 1)
    try:
        mcfg = ModelConfig(**sections["model"])
        lcfg = LossConfig(**sections["loss"])
        tcfg = TrainConfig(**sections["train"], lr_grid=grid)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return mcfg, lcfg, tcfg, grid, source


def _echo(obj) -> None:
    print(json.dumps(obj, indent=2, default=str), flush=True)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _channel_selector(tokens, names) -> list[int] | None:
    """Channel tokens are 0-based indices or column names."""
    if not tokens:
        return None
    picked = []
    for tok in tokens:
        if tok in names:
            picked.append(names.index(tok))
            continue
        try:
            i = int(tok)
        except ValueError:
            raise UsageError(f"unknown channel {tok!r}") from None
        if not 0 <= i < len(names):
            raise UsageError(f"channel {i} out of range (0..{len(names) - 1})")
        picked.append(i)
    return picked


# ---------------------------------------------------------------------------
# commands


def _require(path) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"dataset not found: {path}")


def cmd_train(args) -> int:
    _require(args.data)
    preset = args.preset or guess_preset(args.data)
    mcfg, lcfg, tcfg, grid, source = resolve(args, preset)
    data_info = {"path": str(args.data), "preset": preset, "fill": args.fill}
    _echo({"command": "train", "config": resolved_config(mcfg, lcfg, tcfg, data_info),
           "lr_grid": grid, "sources": source})
    series, preset = load_dataset(args.data, preset, args.fill)
    chans = _channel_selector(args.channel, list(series.channel_names))
    prep = prepare(series, preset, mcfg.lookback, mcfg.horizon, Path(args.data).stem,
                   channels=chans)
    res = fit_and_score(prep, mcfg, lcfg, tcfg, grid)
    out = _out_dir(args.out)
    tcfg = replace(tcfg, lr=res.lr)
    data_info["channels"] = list(prep.series.channel_names)
    save_checkpoint(out / "checkpoint.npz", mcfg, res.params, extra={
        "data": data_info, "loss": lcfg.to_dict(), "train": tcfg.to_dict(),
        "scaler": {"mean": prep.scaler.mean.tolist(), "std": prep.scaler.std.tolist()},
    })
    res.history.write_csv(out / "history.csv")
    write_load_report(series, out / "load_report.json")
    record = metrics_record(prep.name, mcfg, lcfg, tcfg, data_info, res.mse, res.mae,
                            run=f"variant={mcfg.variant} loss={lcfg.ablation}",
                            lr=res.lr, val_loss=res.val_loss,
                            best_epoch=res.history.best_epoch,
                            epochs=len(res.history.epochs), lr_scan=res.lr_scan)
    (out / "metrics.json").write_text(json.dumps(record, indent=2))
    _echo({k: record[k] for k in ("dataset", "horizon", "mse", "mae", "variant", "loss",
                                  "metrics_scale", "config_hash", "lr")})
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    _require(args.data)
    mcfg, params, meta = load_checkpoint(args.checkpoint)
    extra = meta.get("extra", {})
    data_meta = extra.get("data", {})
    preset = args.preset or data_meta.get("preset") or guess_preset(args.data)
    lcfg = LossConfig(**extra.get("loss", {}))
    tcfg = TrainConfig(**extra.get("train", {}))
    if args.metrics_scale:
        tcfg = replace(tcfg, metrics_scale=args.metrics_scale)
    data_info = {"path": str(args.data), "preset": preset, "fill": args.fill}
    if "channels" in data_meta:
        data_info["channels"] = data_meta["channels"]
    _echo({"command": "eval", "checkpoint": str(args.checkpoint),
           "config": resolved_config(mcfg, lcfg, tcfg, data_info)})
    series, preset = load_dataset(args.data, preset, args.fill)
    names = list(series.channel_names)
    chans = data_meta.get("channels")
    idx = [names.index(c) for c in chans] if chans and set(chans) <= set(names) else None
    # the scaler is refitted on the train split, exactly as in training
    prep = prepare(series, preset, mcfg.lookback, mcfg.horizon, Path(args.data).stem,
                   channels=idx)
    if "scaler" in extra:
        stored = Scaler(np.asarray(extra["scaler"]["mean"]), np.asarray(extra["scaler"]["std"]))
        if stored.mean.shape != prep.scaler.mean.shape:
            raise ValueError("checkpoint scaler does not match the dataset's channels")
    mse, mae = evaluate(params, mcfg, prep.test, tcfg.metrics_scale, prep.scaler)
    record = metrics_record(prep.name, mcfg, lcfg, tcfg, data_info, mse, mae,
                            run=f"variant={mcfg.variant} loss={lcfg.ablation}",
                            checkpoint=str(args.checkpoint))
    if args.out:
        out = _out_dir(args.out)
        (out / "metrics.json").write_text(json.dumps(record, indent=2))
    _echo({k: record[k] for k in ("dataset", "horizon", "mse", "mae", "metrics_scale",
                                  "config_hash")})
    return 0


def cmd_analyze(args) -> int:
    _require(args.data)
    params = dict(ANALYSIS_DEFAULTS)
    for key in ("adwin_delta", "eta", "eps", "tau", "patch_len", "stride"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    if args.patch_len is not None and args.stride is None:
        params["stride"] = max(args.patch_len // 2, 1)
    preset = args.preset or guess_preset(args.data)
    _echo({"command": "analyze", "data": str(args.data), "preset": preset, "params": params})
    series, _ = load_dataset(args.data, preset, args.fill)
    names = list(series.channel_names)
    idx = _channel_selector(args.channel, names)
    idx = idx if idx is not None else list(range(len(names)))
    values = series.values[:, idx]
    per = analyze_series(values, [names[i] for i in idx], params, jobs=args.jobs)
    channels = [{"index": i, "name": names[i], **{k: v for k, v in per[names[i]].items()
                                                  if k != "params"}}
                for i in idx]
    report = {"dataset": Path(args.data).stem, "preset": preset, "params": params,
              "channels": channels}
    if args.out:
        out = _out_dir(args.out)
        (out / "analysis.json").write_text(json.dumps(report, indent=2))
    _echo(report)
    return 0


def cmd_bench(args) -> int:
    for path in args.data:
        _require(path)
    horizons = args.horizons or HORIZONS
    seeds = args.seeds or (0,)
    cells = []
    for path in args.data:
        preset = args.preset or guess_preset(path)
        mcfg, lcfg, tcfg, grid, source = resolve(args, preset)
        _echo({"command": "bench", "suite": args.suite, "data": str(path),
               "config": resolved_config(mcfg, lcfg, tcfg, {"path": str(path), "preset": preset}),
               "lr_grid": grid, "horizons": horizons, "seeds": seeds, "sources": source})
        cells += plan(args.suite, path, preset, mcfg, lcfg, tcfg, horizons, seeds, grid)
    rows = run_suite(cells, args.out, jobs=args.jobs)
    failed = [r for r in rows if r["status"] == "error"]
    print(Path(args.out, "summary.md").read_text(), end="")
    if failed:
        print(f"{len(failed)} of {len(cells)} cells failed", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    mcfg, params, meta = load_checkpoint(args.checkpoint)
    _echo({
        "checkpoint": str(args.checkpoint),
        "version": meta["version"],
        "config": mcfg.to_dict(),
        "n_patches": mcfg.n_patches,
        "n_scalars": params.n_scalars(),
        "tensors": meta["tensors"],
        "extra": meta.get("extra", {}),
    })
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_data(p, multiple: bool = False) -> None:
    if multiple:
        p.add_argument("--data", nargs="+", required=True, help="dataset CSV(s)")
    else:
        p.add_argument("--data", required=True, help="dataset CSV (date column first)")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="split/channel preset (guessed from the file name)")
    p.add_argument("--fill", choices=("drop", "ffill", "error"), default="drop",
                   help="missing-value policy")


def _add_run_flags(p) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--lookback", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--patch-len", dest="patch_len", type=int)
    g.add_argument("--stride", type=int)
    g.add_argument("--dim", type=int, help="embedding width D")
    g.add_argument("--attn-dim", dest="attn_dim", type=int, help="attention width d")
    g.add_argument("--depth", type=int)
    g.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--drift-axis", dest="drift_axis", choices=DRIFT_AXES)
    g = p.add_argument_group("loss")
    g.add_argument("--loss", choices=ABLATIONS, help="loss ablation")
    g.add_argument("--delta", type=float, help="pseudo-Huber scale")
    g.add_argument("--tau-hat", dest="tau_hat", type=float)
    g.add_argument("--lam", type=float, help="phase regularizer weight")
    g.add_argument("--w-fft", dest="w_fft", type=float)
    g.add_argument("--phase-source", dest="phase_source", choices=PHASE_SOURCES)
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float)
    g.add_argument("--lr-grid", dest="lr_grid", type=_floats,
                   help="comma-separated learning rates; best validation loss wins")
    g.add_argument("--grid", action="store_true", help="use the default lr grid")
    g.add_argument("--batch", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--max-batches", dest="max_batches", type=int,
                   help="cap training batches per epoch")
    g.add_argument("--per-channel", dest="per_channel", action="store_true", default=None,
                   help="draw every batch from a single channel")
    g.add_argument("--no-clip", dest="no_clip", action="store_true",
                   help="disable gradient clipping")
    g.add_argument("--seed", type=int)
    g.add_argument("--metrics-scale", dest="metrics_scale", choices=("normalized", "raw"))
    p.add_argument("--config", help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fire", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and score the test split")
    _add_data(p)
    _add_run_flags(p)
    p.add_argument("--channel", nargs="+", help="restrict to channels (0-based index or name)")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset's test split")
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.add_argument("--metrics-scale", dest="metrics_scale", choices=("normalized", "raw"))
    p.add_argument("--out", help="write metrics.json here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="drift and basis-evolution report per channel")
    _add_data(p)
    p.add_argument("--channel", nargs="+", help="0-based channel index or column name")
    p.add_argument("--adwin-delta", dest="adwin_delta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--patch-len", dest="patch_len", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write analysis.json here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="run a benchmark grid")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    _add_data(p, multiple=True)
    _add_run_flags(p)
    p.add_argument("--horizons", type=_ints, help="comma-separated horizons")
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel cell processes")
    p.add_argument("--out", default="runs/bench", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's config and shapes")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"fire: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        msg = str(exc)
        if "dataset not found" not in msg:
            msg = f"dataset not found: {exc.filename or msg}"
        print(f"fire: error: {msg}", file=sys.stderr)
        return 2
    except (LoadError, TrainingError, ValueError, OSError) as exc:
        print(f"fire: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
