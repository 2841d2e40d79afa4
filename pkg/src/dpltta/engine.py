"""Online adaptation loop, source pre-training, and the optimizers.

The online protocol per batch: predict (metrics are computed from these
pre-update predictions), pseudo-label, optionally style-transfer, build the
configured loss, run the optimizer step(s) over the scoped parameters, then
refresh the memory bank. Each batch is seen once. Ground-truth labels are
read only on the metrics path.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import reporting
from .autodiff import Tape
from .data import load_dataset, stream as make_stream
from .errors import ContractError, DataFormatError, DegenerateInputError, \
    EmptyBatchError
from .memory import MemoryBank
from .model import SCOPES, load_checkpoint
from .styletx import StylePairing, pair_and_transfer, transfer_with_pairs

METHODS = ("source-frozen", "pl-ce", "entropy", "dpl-o", "dpl-star", "dpl-full")
RESET_POLICIES = ("never", "on-domain-change")
NORM_POLICIES = ("auto", "batch", "running")


@dataclass
class OptimizerSpec:
    kind: str = "adam"  # adam | sgd-momentum
    lr: float = 5e-5
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd-momentum"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ContractError(f"lr must be >= 0, got {self.lr}")


class Optimizer:
    """Parameter updates happen here, outside any tape."""

    def __init__(self, params, spec: OptimizerSpec):
        self.params = list(params)
        self.spec = spec
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        s = self.spec
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if s.kind == "sgd-momentum":
                self.m[i] = s.momentum * self.m[i] + g
                p.data = p.data - s.lr * self.m[i]
            else:
                self.m[i] = s.beta1 * self.m[i] + (1 - s.beta1) * g
                self.v[i] = s.beta2 * self.v[i] + (1 - s.beta2) * g * g
                mh = self.m[i] / (1 - s.beta1 ** self.t)
                vh = self.v[i] / (1 - s.beta2 ** self.t)
                p.data = p.data - s.lr * mh / (np.sqrt(vh) + s.eps)

    def reset_state(self):
        self.t = 0
        for i in range(len(self.params)):
            self.m[i][:] = 0.0
            self.v[i][:] = 0.0

    def state_dict(self):
        return {"t": self.t,
                "m": [a.copy() for a in self.m],
                "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


@dataclass
class AdaptConfig:
    method: str = "dpl-full"
    alpha: float = 0.9
    tau: float = 0.1
    eta: float = 0.9
    beta: float = 1.0
    batch_size: int = 32
    steps_per_batch: int = 1
    scope: str = "full"
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    pairing: str = "off"
    reset_policy: str = "never"
    seed: int = 0
    norm_stats: str = "auto"
    # second-pass forwarding of transferred maps reuses the first pass's
    # normalization statistics unless this is set
    refresh_transfer_stats: bool = False
    # with steps_per_batch=2, the second step recomputes the forward but
    # keeps the first step's pseudo-labels unless this is set
    refresh_pseudo_labels: bool = False
    on_empty: str = "reg-only"  # reg-only | skip
    style_grad: bool = False
    taped_memory: bool = False
    adain_eps: float = 1e-5

    def __post_init__(self):
        problems = validate_adapt_fields(self.__dict__)
        if problems:
            raise ContractError("; ".join(problems))

    def batch_stats(self):
        if self.norm_stats != "auto":
            return self.norm_stats == "batch"
        return self.method != "source-frozen"


def validate_adapt_fields(d):
    """Range checks shared by AdaptConfig and the JSON config loader."""
    p = []
    if d.get("method") not in METHODS:
        p.append(f"method: expected one of {METHODS}, got {d.get('method')!r}")
    if not 0.0 < d.get("alpha", 0.9) < 1.0:
        p.append(f"alpha: must lie in (0,1), got {d.get('alpha')}")
    if not d.get("tau", 0.1) > 0:
        p.append(f"tau: must be > 0, got {d.get('tau')}")
    if not 0.0 <= d.get("eta", 0.9) <= 1.0:
        p.append(f"eta: must lie in [0,1], got {d.get('eta')}")
    if not d.get("beta", 1.0) >= 0:
        p.append(f"beta: must be >= 0, got {d.get('beta')}")
    if d.get("batch_size", 32) < 1:
        p.append(f"batch_size: must be >= 1, got {d.get('batch_size')}")
    if d.get("steps_per_batch", 1) not in (1, 2):
        p.append(f"steps_per_batch: must be 1 or 2, got {d.get('steps_per_batch')}")
    if d.get("scope", "full") not in SCOPES:
        p.append(f"scope: expected one of {SCOPES}, got {d.get('scope')!r}")
    if d.get("pairing", "off") not in StylePairing.MODES:
        p.append(f"pairing: expected one of {StylePairing.MODES}, "
                 f"got {d.get('pairing')!r}")
    if d.get("reset_policy", "never") not in RESET_POLICIES:
        p.append(f"reset_policy: expected one of {RESET_POLICIES}, "
                 f"got {d.get('reset_policy')!r}")
    if d.get("norm_stats", "auto") not in NORM_POLICIES:
        p.append(f"norm_stats: expected one of {NORM_POLICIES}, "
                 f"got {d.get('norm_stats')!r}")
    if d.get("on_empty", "reg-only") not in ("reg-only", "skip"):
        p.append(f"on_empty: expected reg-only or skip, got {d.get('on_empty')!r}")
    return p


@dataclass
class AdaptationTrace:
    method: str
    seed: int
    records: list = field(default_factory=list)
    confusion: np.ndarray = None  # ground truth x prediction counts
    n_seen: int = 0
    n_correct: int = 0
    aborted: bool = False
    abort_reason: str = None

    @property
    def final_accuracy(self):
        return self.n_correct / self.n_seen if self.n_seen else float("nan")

    @property
    def pred_hist(self):
        return self.confusion.sum(axis=0)

    def summary(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "final_accuracy": self.final_accuracy,
            "error_rate": 1.0 - self.final_accuracy,
            "n_seen": self.n_seen,
            "pred_hist": self.pred_hist.tolist(),
            "confusion": self.confusion.tolist(),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }


def zero_grads(model):
    for _, p in model.named_params():
        p.grad = None


class _BatchPlan:
    """Pseudo-labels and pairing fixed on the first step of a batch."""

    def __init__(self, plb, pairs):
        self.plb = plb
        self.pairs = pairs


def _forward_loss(model, images, n_stream, cfg, bank, plan, rng):
    """One taped forward + loss build. Returns (tape, loss, fp, plan)."""
    tape = Tape()
    with tape:
        fp = model.forward(images, batch_stats=cfg.batch_stats())
        if plan is None or cfg.refresh_pseudo_labels:
            plb = L.pseudo_label(fp.logits.data, cfg.alpha)
            plb.confident_mask[n_stream:] = False
            pairs = None
        else:
            plb = plan.plb
            pairs = plan.pairs
        if cfg.pairing != "off":
            if pairs is None:
                pairing = StylePairing(cfg.pairing)
                tr = pair_and_transfer(
                    fp.style_maps, plb, pairing, rng, eps=cfg.adain_eps,
                    style_grad=cfg.style_grad, n_stream=n_stream)
                pairs = tr.pairs
            else:
                tr = transfer_with_pairs(fp.style_maps, plb, pairs,
                                         eps=cfg.adain_eps,
                                         style_grad=cfg.style_grad)
        else:
            tr, pairs = None, np.zeros((0, 2), dtype=np.int64)
        if tr is not None and tr.n_aug:
            tap = model.config.style_tap
            stats = (None if cfg.refresh_transfer_stats
                     else fp.norm_stats[tap:])
            tr_features, _ = model.forward_from_style_maps(
                tr.style_maps, batch_stats=cfg.batch_stats(), norm_stats=stats)
            features = ad.concat([fp.features, tr_features], axis=0)
            use_plb = L.PseudoLabelBatch(
                np.concatenate([plb.pseudo_labels, tr.labels]),
                np.concatenate([plb.confidences, tr.confidences]),
                np.concatenate([plb.confident_mask,
                                np.ones(tr.n_aug, dtype=bool)]),
                plb.alpha)
            pairs = tr.pairs
        else:
            features = fp.features
            use_plb = plb
        loss = _dispatch_loss(model, cfg, bank, features, use_plb,
                              fp.logits, n_stream)
    return tape, loss, fp, plb, _BatchPlan(plb, pairs)


def _dispatch_loss(model, cfg, bank, features, plb, logits, n_stream):
    if cfg.method == "pl-ce":
        idx = plb.confident_indices
        if idx.size == 0:
            raise EmptyBatchError("no confident samples")
        return L.ce_loss(ad.gather_rows(features, idx),
                         plb.pseudo_labels[idx], model.W)
    if cfg.method == "entropy":
        if logits.shape[0] != n_stream:
            logits = ad.gather_rows(logits, np.arange(n_stream))
        return L.entropy_loss(logits)
    if cfg.method == "dpl-o":
        return L.dpl_o_loss(features, plb, model.W, cfg.tau)
    if cfg.method == "dpl-star":
        return L.dpl_star_loss(features, plb, model.W, cfg.tau)
    if cfg.method == "dpl-full":
        if cfg.on_empty == "skip" and plb.n_confident == 0:
            raise EmptyBatchError("no confident samples")
        return L.dpl_loss(features, plb, model.W, bank, cfg.tau, cfg.beta,
                          taped_memory=cfg.taped_memory)
    raise ContractError(f"no loss for method {cfg.method!r}")


def adapt(model, batches, cfg: AdaptConfig, bank=None, source_state=None,
          probe=None):
    """Run the online loop over ``batches`` and return the trace.

    ``source_state`` is the snapshot restored on domain change (defaults to
    the entry state). The bank defaults to a fresh one seeded from the
    current prototypes.
    """
    c = model.class_count
    trace = AdaptationTrace(cfg.method, cfg.seed,
                            confusion=np.zeros((c, c), dtype=np.int64))
    if source_state is None:
        source_state = model.snapshot()
    if bank is None:
        bank = MemoryBank(model.W, cfg.eta)
    optimizer = Optimizer(model.select_params(cfg.scope), cfg.optimizer)
    pairing_buf = StylePairing(cfg.pairing)
    prev_domain = None
    for batch in batches:
        domain = int(batch.domain_tags[0])
        if (cfg.reset_policy == "on-domain-change" and prev_domain is not None
                and domain != prev_domain):
            model.restore(source_state)
            bank.reset(model.W)
            optimizer.reset_state()
            pairing_buf = StylePairing(cfg.pairing)
        prev_domain = domain
        n_stream = len(batch)
        images = batch.images
        carried = pairing_buf.take_carried() if cfg.pairing == "cross-batch" \
            else None
        if carried is not None:
            images = np.concatenate([images, carried], axis=0)
        rng = np.random.default_rng([cfg.seed, 0, batch.index])
        zero_grads(model)
        if cfg.method == "source-frozen":
            tape, loss, plan = None, None, None
            fp = model.forward(images, batch_stats=cfg.batch_stats())
            plb = L.pseudo_label(fp.logits.data, cfg.alpha)
            plb.confident_mask[n_stream:] = False
        else:
            try:
                tape, loss, fp, plb, plan = _forward_loss(
                    model, images, n_stream, cfg, bank, None, rng)
            except DegenerateInputError as e:
                trace.aborted = True
                trace.abort_reason = \
                    f"degenerate input at batch {batch.index}: {e}"
                break
            except EmptyBatchError:
                tape, loss, plan = None, None, None
                fp = model.forward(images, batch_stats=cfg.batch_stats())
                plb = L.pseudo_label(fp.logits.data, cfg.alpha)
                plb.confident_mask[n_stream:] = False
        preds = fp.logits.data[:n_stream].argmax(axis=1)
        if probe is not None:
            probe("predict", batch.index)
        gt = batch.metrics_labels()
        trace.n_seen += n_stream
        trace.n_correct += int((preds == gt).sum())
        np.add.at(trace.confusion, (gt, preds), 1)
        loss_val = float("nan")
        if cfg.method != "source-frozen" and loss is not None:
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                trace.aborted = True
                trace.abort_reason = f"non-finite loss at batch {batch.index}"
                trace.records.append(_record(batch.index, cfg, loss_val,
                                             plb, trace))
                break
            tape.backward(loss.value)
            if probe is not None:
                probe("update", batch.index)
            optimizer.step()
            for step in range(1, cfg.steps_per_batch):
                zero_grads(model)
                try:
                    tape2, loss2, _, _, plan = _forward_loss(
                        model, images, n_stream, cfg, bank, plan, rng)
                except (EmptyBatchError, DegenerateInputError):
                    break
                if not np.isfinite(loss2.item()):
                    trace.aborted = True
                    trace.abort_reason = \
                        f"non-finite loss at batch {batch.index} step {step}"
                    break
                tape2.backward(loss2.value)
                optimizer.step()
            if trace.aborted:
                trace.records.append(_record(batch.index, cfg, loss_val,
                                             plb, trace))
                break
            if cfg.method == "dpl-full":
                bank.update(fp.features.data, plb)
        trace.records.append(_record(batch.index, cfg, loss_val, plb, trace))
        if cfg.pairing == "cross-batch":
            unconf = np.flatnonzero(~plb.confident_mask[:n_stream])
            pairing_buf.store(batch.images[unconf])
    return trace


def _record(index, cfg, loss_val, plb, trace):
    return {
        "iter": index,
        "method": cfg.method,
        "seed": cfg.seed,
        "loss": loss_val,
        "n_confident": plb.n_confident,
        "cum_acc": trace.n_correct / trace.n_seen,
        "pred_counts": trace.pred_hist.tolist(),
    }


# -- evaluation and pre-training ------------------------------------------------

def evaluate(model, images, labels, batch_size=64, batch_stats=False):
    correct = 0
    for start in range(0, len(images), batch_size):
        x = images[start:start + batch_size].astype(np.float64)
        fp = model.forward(x, batch_stats=batch_stats)
        preds = fp.logits.data.argmax(axis=1)
        correct += int((preds == labels[start:start + batch_size]).sum())
    return correct / len(images)


def pretrain(model, dataset, epochs, opt_spec=None, val_fraction=0.2,
             batch_size=32, seed=0, objective="ce", dpl_params=None):
    """ERM training on ground-truth labels with an 80/20 validation split;
    the returned snapshot is the epoch with the highest validation accuracy.

    ``objective`` may be "dpl" (supervised ablation): the combined prototype
    loss driven by ground-truth labels at full confidence, with the memory
    bank updated per batch.
    """
    if opt_spec is None:
        opt_spec = OptimizerSpec(kind="adam", lr=1e-3)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_val = max(1, int(round(val_fraction * len(dataset)))) if epochs else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    optimizer = Optimizer(model.select_params("full"), opt_spec)
    dp = {"tau": 0.1, "eta": 0.9, "beta": 1.0}
    if dpl_params:
        dp.update(dpl_params)
    bank = MemoryBank(model.W, dp["eta"])
    best = {"val_acc": -1.0, "state": model.snapshot(), "epoch": -1}
    history = []
    for epoch in range(epochs):
        ep_rng = np.random.default_rng([seed, 1, epoch])
        perm = train_idx[ep_rng.permutation(len(train_idx))]
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            x = dataset.images[idx].astype(np.float64)
            y = dataset.labels[idx].astype(np.int64)
            zero_grads(model)
            tape = Tape()
            with tape:
                fp = model.forward(x, batch_stats=True, update_running=True)
                if objective == "ce":
                    loss = L.ce_loss(fp.features, y, model.W)
                else:
                    plb = L.PseudoLabelBatch(y, np.ones(len(y)),
                                             np.ones(len(y), dtype=bool), 0.5)
                    loss = L.dpl_loss(fp.features, plb, model.W, bank,
                                      dp["tau"], dp["beta"])
                tape.backward(loss.value)
            optimizer.step()
            if objective == "dpl":
                bank.update(fp.features.data, plb)
            losses.append(loss.item())
        val_acc = evaluate(model, dataset.images[val_idx],
                           dataset.labels[val_idx])
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_acc": val_acc})
        if val_acc > best["val_acc"]:
            best = {"val_acc": val_acc, "state": model.snapshot(),
                    "epoch": epoch}
    model.restore(best["state"])
    return {"best_epoch": best["epoch"],
            "best_val_acc": best["val_acc"] if epochs else None,
            "history": history}


# -- experiment driver -----------------------------------------------------------

def run_experiment(config):
    """Adapt every (method, seed) cell of a validated experiment config over
    one target stream; writes one trace CSV per cell and a summary JSON.
    Returns the summary dict."""
    ckpt_path = config["checkpoint"]
    data_path = config["dataset"]
    for path in (ckpt_path, data_path):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    dataset = load_dataset(data_path)
    overrides = dict(config.get("adapt", {}))
    opt_spec = OptimizerSpec(**config.get("optimizer", {}))
    per_method = {}
    for method in config["methods"]:
        summaries = []
        for seed in config["seeds"]:
            model, _ = load_checkpoint(ckpt_path)
            cfg = AdaptConfig(method=method, seed=int(seed),
                              optimizer=opt_spec, **overrides)
            batches = make_stream(dataset, cfg.batch_size, seed=int(seed))
            trace = adapt(model, batches, cfg)
            reporting.write_trace_csv(
                reporting.trace_path(out_dir, method, seed), trace.records)
            summaries.append(trace.summary())
        per_method[method] = summaries
    summary = {"config": config,
               "methods": reporting.summarize_runs(per_method)}
    reporting.write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


# -- run state -------------------------------------------------------------------
# magic "DPLSTAT1", u32 little-endian header length, JSON header with the
# stream cursor and an array manifest, float64 payloads in manifest order.

STATE_MAGIC = b"DPLSTAT1"


def save_run_state(path, model, bank, optimizer, cursor, pairing=None):
    arrays = []
    for name, t in model.named_params():
        arrays.append((f"model.{name}", t.data))
    for name, b in model.named_buffers():
        arrays.append((f"model.{name}", b))
    arrays.append(("bank.features", bank.features))
    arrays.append(("bank.counters", bank.counters.astype(np.float64)))
    for i, a in enumerate(optimizer.m):
        arrays.append((f"opt.m.{i}", a))
    for i, a in enumerate(optimizer.v):
        arrays.append((f"opt.v.{i}", a))
    carried = pairing._buffer if pairing is not None else None
    if carried is not None:
        arrays.append(("pairing.buffer", carried.astype(np.float64)))
    header = {
        "cursor": int(cursor),
        "bank_eta": bank.eta,
        "opt_t": optimizer.t,
        "manifest": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(STATE_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_run_state(path, model, bank, optimizer, pairing=None):
    """Restores in place; returns the stream cursor."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != STATE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:8]!r}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = json.loads(blob[12:12 + hlen].decode())
    offset = 12 + hlen
    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    state = {}
    for name, t in model.named_params():
        state[name] = arrays[f"model.{name}"]
    for name, _ in model.named_buffers():
        state[name] = arrays[f"model.{name}"]
    model.restore(state)
    bank.load_state_dict({"features": arrays["bank.features"],
                          "counters": arrays["bank.counters"].astype(np.int64),
                          "eta": header["bank_eta"]})
    optimizer.load_state_dict({
        "t": header["opt_t"],
        "m": [arrays[f"opt.m.{i}"] for i in range(len(optimizer.params))],
        "v": [arrays[f"opt.v.{i}"] for i in range(len(optimizer.params))],
    })
    if pairing is not None:
        buf = arrays.get("pairing.buffer")
        pairing._buffer = None if buf is None else buf.astype(np.float64)
    return header["cursor"]
