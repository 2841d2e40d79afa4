"""Objectives: pseudo-labeling with confidence filtering, the CE and entropy
baselines, the prototype-centric losses (original and aggregated forms), the
memory regularizer, and their weighted combination.

The prototype-centric losses score cosine similarity between class prototype
rows and features; each per-class term involves exactly one prototype row, so
its gradient touches no other row. CE couples every row per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyBatchError, ShapeMismatchError


def _softmax_rows(a):
    m = a.max(axis=-1, keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PseudoLabelBatch:
    pseudo_labels: np.ndarray  # int, argmax class, ties to the lowest index
    confidences: np.ndarray    # max softmax probability
    confident_mask: np.ndarray  # confidence strictly above alpha
    alpha: float

    @property
    def confident_indices(self):
        return np.flatnonzero(self.confident_mask)

    @property
    def n_confident(self):
        return int(self.confident_mask.sum())


def pseudo_label(logits, alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    probs = _softmax_rows(data)
    labels = probs.argmax(axis=1)  # argmax returns the first (lowest) index
    conf = probs[np.arange(len(labels)), labels]
    return PseudoLabelBatch(labels.astype(np.int64), conf, conf > alpha, alpha)


@dataclass
class LossValue:
    value: Tensor  # scalar, tape-attached
    breakdown: dict
    n_confident: int
    classes_present: int

    def item(self):
        return self.value.item()


def ce_loss(features, labels, W):
    """Mean cross-entropy of dot-product logits over pre-filtered samples."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise EmptyBatchError("no confident samples for CE")
    logits = ad.matmul(features, ad.transpose(W))
    nll = ad.logsumexp(logits, axis=1) - ad.pick(logits, labels)
    value = ad.tmean(nll)
    return LossValue(value, {"ce": value.item()}, n, len(np.unique(labels)))


def entropy_loss(logits):
    """Mean Shannon entropy of the softmax predictions, all samples."""
    ls = ad.log_softmax(logits, axis=1)
    h = -ad.tsum(ad.exp(ls) * ls, axis=1)
    value = ad.tmean(h)
    n = logits.shape[0]
    return LossValue(value, {"entropy": value.item()}, n, 0)


def _confident_view(features, plb):
    idx = plb.confident_indices
    if idx.size == 0:
        raise EmptyBatchError("no confident samples")
    if features.shape[0] != plb.pseudo_labels.shape[0]:
        raise ShapeMismatchError(
            f"features rows {features.shape[0]} != batch size "
            f"{plb.pseudo_labels.shape[0]}")
    return ad.gather_rows(features, idx), plb.pseudo_labels[idx]


def dpl_o_loss(features, plb, W, tau):
    """Per-sample prototype-centric loss.

    For each confident sample i with label y_i, contrasts cos(w_{y_i}, z_i)
    against cos(w_{y_i}, z_j) over confident samples j of other classes.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    zc, y = _confident_view(features, plb)
    n = y.shape[0]
    sims = ad.gather_rows(ad.cosine_matrix(W, zc), y) * (1.0 / tau)  # (n, n)
    pos = ad.pick(sims, np.arange(n))
    # denominator: the positive plus same-row sims to other-class samples
    neg_mask = (y[None, :] != y[:, None]).astype(np.float64)
    table = ad.concat([ad.reshape(pos, (n, 1)), sims], axis=1)
    mask = np.concatenate([np.ones((n, 1)), neg_mask], axis=1)
    value = ad.tmean(ad.masked_logsumexp(table, mask, axis=1) - pos)
    return LossValue(value, {"dpl_o": value.item()}, n, len(np.unique(y)))


def dpl_star_loss(features, plb, W, tau):
    """Aggregated prototype-centric loss, one term per class present.

    Term k contrasts the summed similarity of class-k samples to w_k against
    the summed similarity of all confident samples to w_k.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    zc, y = _confident_view(features, plb)
    present = np.unique(y)
    sims = ad.gather_rows(ad.cosine_matrix(W, zc), present) * (1.0 / tau)
    member = (y[None, :] == present[:, None]).astype(np.float64)
    terms = ad.logsumexp(sims, axis=1) - ad.masked_logsumexp(sims, member, axis=1)
    value = ad.tmean(terms)
    return LossValue(value, {"dpl_star": value.item()},
                     y.shape[0], present.shape[0])


def reg_loss(W, bank, tau, taped_memory=False):
    """Prototype-centric term over the memory bank's per-class pseudo-features.

    All classes participate. Pseudo-features are constants unless
    ``taped_memory`` is set (ablation switch); by default the gradient pulls
    prototypes toward memory only.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    zs = bank.features_tensor() if taped_memory else Tensor(bank.features)
    c = W.shape[0]
    if zs.shape != W.shape:
        raise ShapeMismatchError(
            f"memory shape {zs.shape} does not match prototypes {W.shape}")
    sims = ad.cosine_matrix(W, zs) * (1.0 / tau)  # (C, C)
    pos = ad.pick(sims, np.arange(c))
    value = ad.tmean(ad.logsumexp(sims, axis=1) - pos)
    return LossValue(value, {"reg": value.item()}, 0, c)


def dpl_loss(features, plb, W, bank, tau, beta, taped_memory=False):
    """Aggregated prototype loss plus beta times the memory regularizer.

    With beta == 0 this is arithmetically identical to dpl_star_loss. An
    empty confident set zeroes the first term but the regularizer still
    applies; with beta == 0 as well there is nothing to compute and the
    empty-batch signal propagates.
    """
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    star = None
    try:
        star = dpl_star_loss(features, plb, W, tau)
    except EmptyBatchError:
        if beta == 0:
            raise
    if beta == 0:
        return LossValue(star.value, {"dpl_star": star.breakdown["dpl_star"]},
                         star.n_confident, star.classes_present)
    reg = reg_loss(W, bank, tau, taped_memory=taped_memory)
    if star is None:
        value = beta * reg.value
        breakdown = {"dpl_star": 0.0, "reg": reg.breakdown["reg"]}
        return LossValue(value, breakdown, 0, 0)
    value = star.value + beta * reg.value
    breakdown = {"dpl_star": star.breakdown["dpl_star"],
                 "reg": reg.breakdown["reg"]}
    return LossValue(value, breakdown, star.n_confident, star.classes_present)
