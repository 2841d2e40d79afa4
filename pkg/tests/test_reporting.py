import csv
import math

import numpy as np
import pytest

from dpltta import reporting as R


def _records(method="pl-ce", seed=0, n=4):
    out = []
    acc = 0.0
    for i in range(n):
        acc = (acc * i + (i % 2)) / (i + 1)
        out.append({"iter": i, "method": method, "seed": seed,
                    "loss": 0.1 + 0.2 * i, "n_confident": i,
                    "cum_acc": acc})
    return out


def test_trace_round_trip(tmp_path):
    path = str(tmp_path / "trace.csv")
    recs = _records()
    recs[1]["loss"] = float("nan")
    R.write_trace_csv(path, recs)
    back = R.read_trace_csv(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a["iter"] == b["iter"]
        assert a["method"] == b["method"]
        assert a["seed"] == b["seed"]
        assert a["n_confident"] == b["n_confident"]
        np.testing.assert_array_equal(a["loss"], b["loss"])
        assert a["cum_acc"] == b["cum_acc"]


def test_trace_floats_survive_exactly(tmp_path):
    # repr round trip keeps full float64 precision, not a printf truncation
    path = str(tmp_path / "trace.csv")
    recs = _records()
    recs[0]["cum_acc"] = 1.0 / 3.0
    recs[0]["loss"] = math.pi
    R.write_trace_csv(path, recs)
    back = R.read_trace_csv(path)
    assert back[0]["cum_acc"] == 1.0 / 3.0
    assert back[0]["loss"] == math.pi


def test_trace_rewrite_byte_identical(tmp_path):
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    recs = _records()
    R.write_trace_csv(p1, recs)
    R.write_trace_csv(p2, recs)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_trace_path_naming(tmp_path):
    assert R.trace_path("runs", "dpl-full", 3).endswith("trace_dpl-full_3.csv")


def test_write_json_deterministic(tmp_path):
    p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    obj = {"b": 1, "a": [1, 2, 3], "c": {"y": 0.5, "x": None}}
    R.write_json(p1, obj)
    R.write_json(p2, obj)
    assert open(p1, "rb").read() == open(p2, "rb").read()
    assert R.read_json(p1) == obj


def test_summarize_runs_population_std():
    per_method = {"pl-ce": [
        {"seed": 0, "final_accuracy": 0.5},
        {"seed": 1, "final_accuracy": 0.7},
    ]}
    out = R.summarize_runs(per_method)
    block = out["pl-ce"]
    assert block["mean_final_acc"] == pytest.approx(0.6, abs=1e-15)
    assert block["std_final_acc"] == pytest.approx(0.1, abs=1e-15)
    assert set(block["per_seed"]) == {"0", "1"}
    assert block["per_seed"]["1"]["final_accuracy"] == 0.7


def _fake_run_dir(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    per_method = {}
    finals = {}
    for method, base in (("pl-ce", 0.4), ("dpl-full", 0.6)):
        summaries = []
        for seed in (0, 1):
            recs = _records(method, seed, n=5)
            recs[-1]["cum_acc"] = base + 0.01 * seed
            R.write_trace_csv(R.trace_path(str(runs), method, seed), recs)
            summaries.append({
                "method": method, "seed": seed,
                "final_accuracy": recs[-1]["cum_acc"],
                "error_rate": 1 - recs[-1]["cum_acc"],
                "n_seen": 10,
                "pred_hist": [4, 3, 2, 1, 0],
                "confusion": [[2, 0, 0, 0, 0], [1, 1, 0, 0, 0],
                              [0, 0, 2, 0, 0], [0, 0, 0, 2, 0],
                              [1, 0, 0, 0, 1]],
                "aborted": False, "abort_reason": None,
            })
            finals.setdefault(method, []).append(recs[-1]["cum_acc"])
    per_method = {m: [] for m in ("pl-ce", "dpl-full")}
    for method in per_method:
        for seed in (0, 1):
            per_method[method].append({
                "seed": seed,
                "final_accuracy": finals[method][seed],
                "pred_hist": [4, 3, 2, 1, 0],
                "confusion": [[2, 0, 0, 0, 0], [1, 1, 0, 0, 0],
                              [0, 0, 2, 0, 0], [0, 0, 0, 2, 0],
                              [1, 0, 0, 0, 1]],
            })
    R.write_json(str(runs / "summary.json"),
                 {"config": {}, "methods": R.summarize_runs(per_method)})
    return runs, finals


def test_build_report(tmp_path):
    runs, finals = _fake_run_dir(tmp_path)
    out = str(tmp_path / "series.csv")
    result = R.build_report(str(runs), out)
    assert result["series_rows"] == 2 * 2 * 5
    for method, accs in finals.items():
        assert result["recomputed_mean_final_acc"][method] == pytest.approx(
            float(np.mean(accs)), abs=1e-15)

    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert {r["method"] for r in rows} == {"pl-ce", "dpl-full"}
    last = [r for r in rows if r["method"] == "pl-ce"
            and r["seed"] == "0"][-1]
    assert float(last["cum_acc"]) == finals["pl-ce"][0]

    with open(result["hist_path"], newline="") as fh:
        hrows = list(csv.DictReader(fh))
    assert len(hrows) == 2 * 2 * 5
    row0 = hrows[0]
    assert set(row0) == {"method", "seed", "class", "pred_count", "gt_count"}
    # gt counts come from confusion row sums
    assert [int(r["gt_count"]) for r in hrows[:5]] == [2, 2, 2, 2, 2]
    assert [int(r["pred_count"]) for r in hrows[:5]] == [4, 3, 2, 1, 0]


def test_build_report_missing_summary(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError):
        R.build_report(str(empty), str(tmp_path / "out.csv"))


def test_build_report_missing_trace(tmp_path):
    runs, _ = _fake_run_dir(tmp_path)
    (runs / "trace_pl-ce_1.csv").unlink()
    with pytest.raises(FileNotFoundError):
        R.build_report(str(runs), str(tmp_path / "out.csv"))
