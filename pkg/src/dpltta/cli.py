"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 I/O error, 3 config
validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import engine, reporting, verify
from .config import load_experiment_config
from .errors import ConfigError, DataFormatError
from .model import ModelConfig, PrototypeClassifier, save_checkpoint


def _cmd_gen_data(args):
    os.makedirs(args.out, exist_ok=True)
    if args.spec:
        with open(args.spec) as fh:
            doc = json.load(fh)
        specs = [D.DomainSpec(**s) for s in doc["domains"]]
        per_domain = doc.get("per_domain", args.per_domain)
        classes = doc.get("classes", args.classes)
        size = doc.get("size", args.size)
        names = [f"domain_{s.domain_id}.bin" for s in specs]
    else:
        sources, target = D.make_domain_suite(args.shift_level, seed=args.seed)
        specs = sources + [target]
        per_domain = args.per_domain
        classes = args.classes
        size = args.size
        names = [f"source_{i}.bin" for i in range(len(sources))] + ["target.bin"]
    for spec, name in zip(specs, names):
        ds = D.generate(spec, per_domain, class_count=classes, image_size=size)
        path = os.path.join(args.out, name)
        D.save_dataset(ds, path)
        print(f"{name}: domain {spec.domain_id}, {len(ds)} samples, "
              f"{classes} classes, {size}x{size}")
    return 0


def _cmd_pretrain(args):
    datasets = [D.load_dataset(p) for p in args.data]
    merged = D.concat_datasets(datasets)
    model = PrototypeClassifier(
        ModelConfig(class_count=merged.class_count,
                    image_size=merged.image_size,
                    norm_mode=args.norm),
        seed=args.seed)
    result = engine.pretrain(
        model, merged, epochs=args.epochs,
        opt_spec=engine.OptimizerSpec(kind="adam", lr=args.lr),
        val_fraction=args.val_fraction, batch_size=args.batch_size,
        seed=args.seed, objective=args.objective)
    save_checkpoint(model, args.out, extra={"pretrain": result})
    acc = result["best_val_acc"]
    print(f"checkpoint written to {args.out}")
    print("validation accuracy: "
          + ("n/a (0 epochs)" if acc is None else f"{acc:.4f}"))
    return 0


def _cmd_adapt(args):
    cfg = load_experiment_config(args.config)
    summary = engine.run_experiment(cfg)
    for method in cfg["methods"]:
        block = summary["methods"][method]
        print(f"{method}: mean final acc {block['mean_final_acc']:.4f} "
              f"(std {block['std_final_acc']:.4f}, "
              f"{len(block['per_seed'])} seeds)")
    print(f"traces and summary written to {cfg['out_dir']}")
    return 0


def _cmd_verify(args):
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    failures = verify.run_suites(names)
    return 1 if failures else 0


def _cmd_report(args):
    result = reporting.build_report(args.runs, args.out)
    print(f"wrote {result['series_rows']} series rows to {args.out}")
    print(f"wrote prediction histogram to {result['hist_path']}")
    for method, acc in sorted(result["recomputed_mean_final_acc"].items()):
        print(f"{method}: mean final acc {acc:.4f} (recomputed from traces)")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="dpltta",
        description="Desk-scale test-time adaptation lab: prototype losses, "
                    "feature style transfer, synthetic domain shifts.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic domain datasets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--spec", help="JSON file with explicit domain specs")
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--size", type=int, default=24)
    g.add_argument("--per-domain", type=int, default=600)
    g.add_argument("--shift-level", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("pretrain", help="train a source model on labeled data")
    t.add_argument("--data", nargs="+", required=True,
                   help="dataset files (merged)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int, default=12)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--objective", choices=("ce", "dpl"), default="ce")
    t.add_argument("--norm", choices=("batch", "identity"), default="batch")
    t.set_defaults(fn=_cmd_pretrain)

    a = sub.add_parser("adapt", help="run an adaptation experiment matrix")
    a.add_argument("--config", required=True, help="experiment JSON file")
    a.set_defaults(fn=_cmd_adapt)

    v = sub.add_parser("verify", help="run property verification suites")
    v.add_argument("--suite", default="all",
                   choices=tuple(verify.SUITES) + ("all",))
    v.set_defaults(fn=_cmd_verify)

    r = sub.add_parser("report", help="aggregate run traces into CSV series")
    r.add_argument("--runs", required=True, help="run directory")
    r.add_argument("--out", required=True, help="series CSV path")
    r.set_defaults(fn=_cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except ConfigError as e:
        print("config validation error:", file=sys.stderr)
        for problem in e.problems:
            print(f"  {problem}", file=sys.stderr)
        return 3
    except DataFormatError as e:
        print(f"data format error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError,
            NotADirectoryError) as e:
        name = getattr(e, "filename", None) or e
        print(f"i/o error: {name}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
