import csv
import json

import numpy as np
import pytest

from fire_ts.cli import main

TINY = ["--lookback", "32", "--horizon", "8", "--patch-len", "8", "--dim", "4",
        "--attn-dim", "2", "--epochs", "1", "--max-batches", "2", "--batch", "16"]


def _write(path, values, names=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"c{i}" for i in range(values.shape[1])]
    lines = ["date," + ",".join(names)]
    lines += [f"t{i}," + ",".join(repr(float(v)) for v in row) for i, row in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def synth(tmp_path):
    t = np.arange(400)
    rng = np.random.default_rng(0)
    v = np.c_[np.sin(2 * np.pi * t / 24), np.cos(2 * np.pi * t / 12)] + 0.1 * rng.standard_normal((400, 2))
    return _write(tmp_path / "synth.csv", v)


def _json_blocks(text):
    dec = json.JSONDecoder()
    out, i = [], 0
    while i < len(text):
        j = text.find("{", i)
        if j < 0:
            break
        obj, i = dec.raw_decode(text, j)
        out.append(obj)
    return out


def test_train_writes_artifacts(synth, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(synth), *TINY, "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    for key in ("dataset", "horizon", "mse", "mae", "config_hash", "config"):
        assert key in m
    assert m["horizon"] == 8 and m["mse"] > 0
    assert (out / "checkpoint.npz").exists() and (out / "load_report.json").exists()
    rows = list(csv.DictReader(open(out / "history.csv")))
    assert len(rows) == 1
    echoed = _json_blocks(capsys.readouterr().out)
    assert echoed[0]["config"]["model"]["lookback"] == 32  # resolved config echoed first


def test_train_is_deterministic(synth, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--data", str(synth), *TINY, "--seed", "3",
                     "--out", str(tmp_path / name)]) == 0
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = json.loads((tmp_path / "b" / "metrics.json").read_text())
    assert a["mse"] == b["mse"] and a["config_hash"] == b["config_hash"]


def test_missing_dataset_exit_2(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--horizon", "96"]) == 2
    assert "dataset not found" in capsys.readouterr().err


def test_ablation_run_is_labeled(synth, tmp_path):
    out = tmp_path / "base"
    assert main(["train", "--data", str(synth), *TINY, "--variant", "base", "--loss", "base",
                 "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["run"] == "variant=base loss=base"
    assert m["variant"] == "base" and m["loss"] == "base"


def test_config_precedence(synth, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# file settings\nlr = 0.005\ndim = 6\npatch_len = 4\n")
    argv = ["train", "--data", str(synth), *TINY, "--config", str(cfg), "--out",
            str(tmp_path / "o")]
    argv[argv.index("--dim") + 1] = "4"
    assert main(argv) == 0
    echo = _json_blocks(capsys.readouterr().out)[0]
    assert echo["config"]["train"]["lr"] == 0.005
    assert echo["sources"]["lr"] == "config"
    assert echo["config"]["model"]["embed_dim"] == 4 and echo["sources"]["dim"] == "flag"
    assert echo["config"]["model"]["patch_len"] == 8


def test_bad_config_key_is_usage_error(synth, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 1\n")
    assert main(["train", "--data", str(synth), "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_eval_reproduces_train_metrics(synth, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--data", str(synth), *TINY, "--out", str(out)])
    trained = json.loads((out / "metrics.json").read_text())
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(synth),
                 "--out", str(tmp_path / "ev")]) == 0
    ev = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert ev["mse"] == trained["mse"] and ev["mae"] == trained["mae"]
    assert ev["config_hash"] == trained["config_hash"]
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(synth),
                 "--metrics-scale", "raw"]) == 0


def test_inspect_checkpoint(synth, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--data", str(synth), *TINY, "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect-checkpoint", str(out / "checkpoint.npz")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["config"]["horizon"] == 8 and info["n_patches"] == 7


def test_train_channel_filter(synth, tmp_path):
    out = tmp_path / "one"
    assert main(["train", "--data", str(synth), *TINY, "--channel", "c1", "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["config"]["data"]["channels"] == ["c1"]


# --- analyze ----------------------------------------------------------------------

def test_analyze_constant(tmp_path, capsys):
    p = _write(tmp_path / "flat.csv", np.full(500, 2.0))
    assert main(["analyze", "--data", str(p), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "analysis.json").read_text())
    ch = rep["channels"][0]
    assert ch["d_drift"] == 0 and ch["d_evolution"] == 0
    assert rep["params"]["adwin_delta"] == 0.002


def test_analyze_step_and_channel_filter(tmp_path, capsys):
    rng = np.random.default_rng(0)
    step = np.r_[rng.normal(0, 0.1, 1000), rng.normal(5, 0.1, 1000)]
    p = _write(tmp_path / "s.csv", np.c_[np.full(2000, 1.0), step, rng.standard_normal(2000)])
    assert main(["analyze", "--data", str(p), "--channel", "1"]) == 0
    rep = _json_blocks(capsys.readouterr().out)[-1]
    assert [c["index"] for c in rep["channels"]] == [1]
    assert rep["channels"][0]["d_drift"] > 0


def test_analyze_bad_channel(tmp_path, capsys):
    p = _write(tmp_path / "flat.csv", np.full(100, 2.0))
    assert main(["analyze", "--data", str(p), "--channel", "5"]) == 2


# --- bench ------------------------------------------------------------------------

def test_empty_suite_is_usage_error(synth):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--suite", "", "--data", str(synth)])
    assert exc.value.code == 2


def _results(out):
    return list(csv.DictReader(open(out / "results.csv")))


def test_bench_main_layout(synth, tmp_path):
    out = tmp_path / "b"
    argv = ["bench", "--suite", "main", "--data", str(synth), *TINY,
            "--horizons", "4,8,12,16", "--out", str(out)]
    argv.remove("--horizon")
    argv.remove("8")
    assert main(argv) == 0
    rows = _results(out)
    assert [r["T"] for r in rows] == ["4", "8", "12", "16", "Avg."]
    mses = [float(r["mse"]) for r in rows[:4]]
    assert float(rows[-1]["mse"]) == pytest.approx(np.mean(mses))
    assert (out / "summary.md").read_text().startswith("| dataset |")


def test_bench_patch_rows_per_horizon(synth, tmp_path):
    out = tmp_path / "p"
    argv = ["bench", "--suite", "patch", "--data", str(synth), "--lookback", "48",
            "--dim", "4", "--attn-dim", "2", "--epochs", "1", "--max-batches", "1",
            "--horizons", "8", "--out", str(out)]
    assert main(argv) == 0
    rows = [r for r in _results(out) if r["T"] == "8"]
    assert [r["value"] for r in rows] == ["4", "8", "16", "32", "48"]
    assert all(r["status"] == "ok" for r in rows)


def test_bench_failures_are_appended_not_fatal(synth, tmp_path):
    out = tmp_path / "f"
    argv = ["bench", "--suite", "patch", "--data", str(synth), "--lookback", "16",
            "--dim", "4", "--attn-dim", "2", "--epochs", "1", "--max-batches", "1",
            "--horizons", "8", "--out", str(out)]
    assert main(argv) == 1  # patch lengths 32 and 48 exceed the lookback
    rows = _results(out)
    status = [r["status"] for r in rows if r.get("T") == "8"]
    assert status == ["ok", "ok", "ok", "error", "error"]
    avg = [r for r in rows if r.get("T") == "Avg."]
    assert [r["status"] for r in avg] == ["ok", "ok", "ok", "incomplete", "incomplete"]
