"""Experiment config documents: a single JSON format, strictly validated.

Unknown keys are rejected at every level and hyperparameters are
range-checked before anything touches the filesystem.
"""

from __future__ import annotations

import json
from dataclasses import fields

from .engine import METHODS, AdaptConfig, OptimizerSpec, validate_adapt_fields
from .errors import ConfigError

TOP_KEYS = {"checkpoint", "dataset", "methods", "seeds", "out_dir",
            "adapt", "optimizer"}
REQUIRED_KEYS = {"checkpoint", "dataset", "methods", "seeds", "out_dir"}
ADAPT_KEYS = {f.name for f in fields(AdaptConfig)} - {"method", "seed",
                                                      "optimizer"}
OPT_KEYS = {f.name for f in fields(OptimizerSpec)}


def validate_experiment_config(doc):
    problems = []
    if not isinstance(doc, dict):
        return ["config root must be a JSON object"]
    unknown = set(doc) - TOP_KEYS
    if unknown:
        problems.append(f"unknown keys: {sorted(unknown)}")
    missing = REQUIRED_KEYS - set(doc)
    if missing:
        problems.append(f"missing required keys: {sorted(missing)}")
    methods = doc.get("methods")
    if methods is not None:
        if not isinstance(methods, list) or not methods:
            problems.append("methods: must be a nonempty list")
        else:
            bad = [m for m in methods if m not in METHODS]
            if bad:
                problems.append(f"methods: unknown entries {bad}, "
                                f"expected subset of {list(METHODS)}")
    seeds = doc.get("seeds")
    if seeds is not None:
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) for s in seeds)):
            problems.append("seeds: must be a nonempty list of integers")
    for key in ("checkpoint", "dataset", "out_dir"):
        if key in doc and not isinstance(doc[key], str):
            problems.append(f"{key}: must be a path string")
    adapt = doc.get("adapt", {})
    if not isinstance(adapt, dict):
        problems.append("adapt: must be an object")
    else:
        unknown = set(adapt) - ADAPT_KEYS
        if unknown:
            problems.append(f"adapt: unknown keys {sorted(unknown)}")
        merged = {"method": "dpl-full", **adapt}
        problems.extend(f"adapt.{p}" for p in validate_adapt_fields(merged))
    opt = doc.get("optimizer", {})
    if not isinstance(opt, dict):
        problems.append("optimizer: must be an object")
    else:
        unknown = set(opt) - OPT_KEYS
        if unknown:
            problems.append(f"optimizer: unknown keys {sorted(unknown)}")
        if opt.get("kind", "adam") not in ("adam", "sgd-momentum"):
            problems.append(
                f"optimizer.kind: expected adam or sgd-momentum, "
                f"got {opt.get('kind')!r}")
        if not opt.get("lr", 5e-5) >= 0:
            problems.append(f"optimizer.lr: must be >= 0, got {opt.get('lr')}")
    return problems


def load_experiment_config(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: not valid JSON ({e})"])
    problems = validate_experiment_config(doc)
    if problems:
        raise ConfigError(problems)
    return doc
