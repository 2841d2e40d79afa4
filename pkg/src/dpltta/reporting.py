"""Trace and summary persistence plus report aggregation.

Traces are one CSV row per online iteration; floats are written with repr so
a rerun under the same config produces byte-identical files. The report
command turns a run directory into plot-ready long-format CSV series and a
per-class prediction histogram table.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

TRACE_COLUMNS = ("iter", "method", "seed", "loss", "n_confident", "cum_acc")


def trace_path(out_dir, method, seed):
    return os.path.join(out_dir, f"trace_{method}_{seed}.csv")


def write_trace_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r["iter"], r["method"], r["seed"], repr(r["loss"]),
                        r["n_confident"], repr(r["cum_acc"])])


def read_trace_csv(path):
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append({
                "iter": int(row["iter"]),
                "method": row["method"],
                "seed": int(row["seed"]),
                "loss": float(row["loss"]),
                "n_confident": int(row["n_confident"]),
                "cum_acc": float(row["cum_acc"]),
            })
    return records


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def summarize_runs(per_method):
    """per_method: {method: [AdaptationTrace.summary() dicts, one per seed]}.
    Mean/std use the population convention (ddof=0)."""
    out = {}
    for method, summaries in per_method.items():
        accs = [s["final_accuracy"] for s in summaries]
        out[method] = {
            "mean_final_acc": float(np.mean(accs)),
            "std_final_acc": float(np.std(accs)),
            "per_seed": {str(s["seed"]): s for s in summaries},
        }
    return out


def build_report(runs_dir, out_path):
    """Aggregate a run directory into two CSVs.

    ``out_path`` gets long-format cumulative-accuracy series (method, seed,
    iter, cum_acc); a sibling file with suffix ``_hist.csv`` gets per-class
    prediction counts against ground-truth counts, from summary.json. The
    returned dict carries recomputed per-method final-accuracy means for
    cross-checking against the stored summary.
    """
    summary_file = os.path.join(runs_dir, "summary.json")
    if not os.path.exists(summary_file):
        raise FileNotFoundError(summary_file)
    summary = read_json(summary_file)
    rows = []
    finals = {}
    for method, block in sorted(summary["methods"].items()):
        for seed_str in sorted(block["per_seed"], key=int):
            path = trace_path(runs_dir, method, int(seed_str))
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            records = read_trace_csv(path)
            for r in records:
                rows.append((method, r["seed"], r["iter"], r["cum_acc"]))
            finals.setdefault(method, []).append(records[-1]["cum_acc"])
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("method", "seed", "iter", "cum_acc"))
        for method, seed, it, acc in rows:
            w.writerow((method, seed, it, repr(acc)))
    hist_path = os.path.splitext(out_path)[0] + "_hist.csv"
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("method", "seed", "class", "pred_count", "gt_count"))
        for method, block in sorted(summary["methods"].items()):
            for seed_str in sorted(block["per_seed"], key=int):
                s = block["per_seed"][seed_str]
                conf = np.array(s["confusion"])
                gt_counts = conf.sum(axis=1)
                for k, (pc, gc) in enumerate(zip(s["pred_hist"], gt_counts)):
                    w.writerow((method, seed_str, k, int(pc), int(gc)))
    return {"series_rows": len(rows),
            "hist_path": hist_path,
            "recomputed_mean_final_acc": {
                m: float(np.mean(v)) for m, v in finals.items()}}
