"""Per-channel feature statistics and adaptive instance normalization, plus
the pairing strategies that move unconfident-sample styles onto confident
samples (within one batch, or carried from the previous batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatchError

# Added under the square root before taking sigma. Denormal-scale, so any
# realistic variance is bit-identical, but the sqrt gradient stays finite on
# exactly-constant channels.
_VAR_FLOOR = 1e-300


@dataclass
class ChannelStats:
    mu: Tensor     # (C,) for a single map, (N, C) for a batch
    sigma: Tensor  # population standard deviation, same shape


def _as_nchw(f):
    f = f if isinstance(f, Tensor) else Tensor(f)
    if f.ndim == 3:
        return ad.reshape(f, (1,) + f.shape), True
    if f.ndim == 4:
        return f, False
    raise ShapeMismatchError(f"expected (C,H,W) or (N,C,H,W), got {f.shape}")


def _stats_keepdims(f):
    mu = ad.tmean(f, axis=(2, 3), keepdims=True)
    var = ad.tmean((f - mu) * (f - mu), axis=(2, 3), keepdims=True)
    return mu, ad.sqrt(var + _VAR_FLOOR)


def channel_stats(f):
    x, single = _as_nchw(f)
    mu, sigma = _stats_keepdims(x)
    shape = (x.shape[1],) if single else (x.shape[0], x.shape[1])
    return ChannelStats(ad.reshape(mu, shape), ad.reshape(sigma, shape))


def adain(content, style, eps=1e-5, style_grad=False):
    """Re-standardize ``content`` per channel and re-color it with ``style``'s
    channel statistics.

    Differentiable through ``content``; the style branch is detached unless
    ``style_grad`` is set. Spatial sizes may differ, channel counts may not.
    ``eps`` pads the content sigma in the denominator, so a constant channel
    maps to the style mean instead of dividing by zero.
    """
    c, c_single = _as_nchw(content)
    s, _ = _as_nchw(style)
    if c.shape[1] != s.shape[1]:
        raise ShapeMismatchError(
            f"channel mismatch: content {c.shape[1]}, style {s.shape[1]}")
    if s.shape[0] not in (1, c.shape[0]):
        raise ShapeMismatchError(
            f"style batch {s.shape[0]} incompatible with content {c.shape[0]}")
    mu_c, sigma_c = _stats_keepdims(c)
    if style_grad:
        mu_s, sigma_s = _stats_keepdims(s)
    else:
        sd = s.data
        mu_s = sd.mean(axis=(2, 3), keepdims=True)
        sigma_s = np.sqrt(((sd - mu_s) ** 2).mean(axis=(2, 3), keepdims=True))
    out = sigma_s * ((c - mu_c) / (sigma_c + eps)) + mu_s
    if c_single:
        return ad.reshape(out, out.shape[1:])
    return out


class StylePairing:
    """Pairing mode plus the one-batch carryover buffer.

    two-pass: style sources are this batch's unconfident samples.
    cross-batch: raw unconfident images are buffered and forwarded together
    with the next batch, serving as style sources there. off: no transfer.
    """

    MODES = ("off", "two-pass", "cross-batch")

    def __init__(self, mode="off"):
        if mode not in self.MODES:
            raise ValueError(f"unknown pairing mode {mode!r}")
        self.mode = mode
        self._buffer = None

    def take_carried(self):
        imgs, self._buffer = self._buffer, None
        return imgs

    def store(self, images):
        self._buffer = np.array(images) if len(images) else None

    def state_dict(self):
        return {"mode": self.mode, "buffer": self._buffer}

    def load_state_dict(self, state):
        self.mode = state["mode"]
        self._buffer = None if state["buffer"] is None else np.array(state["buffer"])


@dataclass
class TransferResult:
    style_maps: Tensor | None   # (n_aug, C_f, H, W), None when nothing paired
    labels: np.ndarray          # confident samples' pseudo-labels
    confidences: np.ndarray     # copied from the confident samples
    pairs: np.ndarray           # (n_aug, 2) rows of (confident, source) index

    @property
    def n_aug(self):
        return len(self.labels)


def _empty_result():
    return TransferResult(None, np.zeros(0, dtype=np.int64),
                          np.zeros(0), np.zeros((0, 2), dtype=np.int64))


def transfer_with_pairs(style_maps, plb, pairs, eps=1e-5, style_grad=False):
    """Apply a fixed (confident, source) pairing to the given style maps."""
    if len(pairs) == 0:
        return _empty_result()
    conf_idx, choice = pairs[:, 0], pairs[:, 1]
    content = ad.gather_rows(style_maps, conf_idx)
    if style_grad:
        source = ad.gather_rows(style_maps, choice)
    else:
        source = Tensor(style_maps.data[choice])
    transferred = adain(content, source, eps=eps, style_grad=style_grad)
    return TransferResult(transferred, plb.pseudo_labels[conf_idx].copy(),
                          plb.confidences[conf_idx].copy(), pairs)


def pair_and_transfer(style_maps, plb, pairing, rng, eps=1e-5,
                      style_grad=False, n_stream=None):
    """Build style-transferred maps for every confident stream sample.

    Each confident sample is paired with a uniformly drawn source (iid, with
    replacement): in two-pass mode an unconfident sample of the same batch,
    in cross-batch mode one of the carried rows appended after the first
    ``n_stream`` rows. The transferred map keeps the confident sample's
    pseudo-label and confidence. Returns an empty result when either side of
    the pairing is missing.
    """
    n_total = style_maps.shape[0]
    if n_stream is None:
        n_stream = n_total
    if pairing.mode == "off":
        return _empty_result()
    stream_mask = plb.confident_mask[:n_stream]
    conf_idx = np.flatnonzero(stream_mask)
    if pairing.mode == "two-pass":
        source_idx = np.flatnonzero(~stream_mask)
    else:
        source_idx = np.arange(n_stream, n_total)
    if conf_idx.size == 0 or source_idx.size == 0:
        return _empty_result()
    choice = source_idx[rng.integers(0, source_idx.size, size=conf_idx.size)]
    pairs = np.stack([conf_idx, choice], axis=1)
    return transfer_with_pairs(style_maps, plb, pairs, eps=eps,
                               style_grad=style_grad)
