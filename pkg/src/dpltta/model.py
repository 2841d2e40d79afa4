"""Small convolutional classifier whose bias-free head rows act as class
prototypes.

Two conv blocks (conv, per-channel norm, relu), a style tap after the first
block for feature-statistics transfer, global average pooling, then logits
z @ W.T with no bias. All parameters are float64 autodiff leaves.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DataFormatError, ShapeMismatchError

SCOPES = ("full", "norm-affine-only", "classifier-only", "extractor-only")
NORM_MODES = ("batch", "identity")

CKPT_MAGIC = b"DPLCKPT1"


@dataclass
class ModelConfig:
    in_channels: int = 3
    image_size: int = 24
    channels: tuple = (8, 16)
    kernel_size: int = 3
    class_count: int = 5
    norm_mode: str = "batch"
    style_tap: int = 1  # tap the output of this many leading blocks
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.norm_mode not in NORM_MODES:
            raise ContractError(f"unknown norm_mode {self.norm_mode!r}")
        if not 1 <= self.style_tap <= len(self.channels):
            raise ContractError(
                f"style_tap {self.style_tap} outside 1..{len(self.channels)}")


class NormLayer:
    """Per-channel normalization with affine scale and shift.

    batch mode standardizes with statistics of the tensor being normalized
    (population variance); identity mode applies only the affine map, which
    keeps samples independent of their batchmates. Running buffers are
    refreshed only when ``update_running`` is set (pre-training).
    """

    def __init__(self, channels, mode, eps=1e-5, momentum=0.1):
        self.channels = channels
        self.mode = mode
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def apply(self, x, batch_stats=True, stats=None, update_running=False):
        """Returns (normalized tensor, stats actually used or None)."""
        cshape = (1, self.channels, 1, 1)
        gamma = ad.reshape(self.gamma, cshape)
        beta = ad.reshape(self.beta, cshape)
        if self.mode == "identity":
            return x * gamma + beta, None
        if stats is not None:
            mu_c, var_c = stats
            xn = (x - mu_c.reshape(cshape)) / np.sqrt(
                var_c.reshape(cshape) + self.eps)
            return xn * gamma + beta, (mu_c, var_c)
        if batch_stats:
            mu = ad.tmean(x, axis=(0, 2, 3), keepdims=True)
            var = ad.tmean((x - mu) * (x - mu), axis=(0, 2, 3), keepdims=True)
            used = (mu.data.reshape(-1).copy(), var.data.reshape(-1).copy())
            if update_running:
                m = self.momentum
                self.running_mean = (1 - m) * self.running_mean + m * used[0]
                self.running_var = (1 - m) * self.running_var + m * used[1]
            xn = (x - mu) / ad.sqrt(var + self.eps)
            return xn * gamma + beta, used
        mu_c, var_c = self.running_mean, self.running_var
        xn = (x - mu_c.reshape(cshape)) / np.sqrt(var_c.reshape(cshape) + self.eps)
        return xn * gamma + beta, (mu_c.copy(), var_c.copy())


@dataclass
class ForwardPass:
    style_maps: Tensor
    features: Tensor
    logits: Tensor
    norm_stats: list = field(default_factory=list)


class PrototypeClassifier:
    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        self.convs = []
        self.norms = []
        c_prev = config.in_channels
        for c_out in config.channels:
            fan_in = c_prev * k * k
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_prev, k, k))
            self.convs.append(Tensor(w, requires_grad=True))
            self.norms.append(NormLayer(c_out, config.norm_mode,
                                        config.bn_eps, config.bn_momentum))
            c_prev = c_out
        self.feature_dim = config.channels[-1]
        head = rng.normal(0.0, 1.0 / np.sqrt(self.feature_dim),
                          size=(config.class_count, self.feature_dim))
        self.W = Tensor(head, requires_grad=True)
        self.pad = k // 2

    @property
    def class_count(self):
        return self.config.class_count

    # -- parameter bookkeeping ---------------------------------------------

    def named_params(self):
        out = []
        for i, (w, n) in enumerate(zip(self.convs, self.norms)):
            out.append((f"conv{i}.weight", w))
            out.append((f"norm{i}.gamma", n.gamma))
            out.append((f"norm{i}.beta", n.beta))
        out.append(("head.W", self.W))
        return out

    def named_buffers(self):
        out = []
        for i, n in enumerate(self.norms):
            out.append((f"norm{i}.running_mean", n.running_mean))
            out.append((f"norm{i}.running_var", n.running_var))
        return out

    def set_buffer(self, name, value):
        idx = int(name.split(".")[0][len("norm"):])
        if name.endswith("running_mean"):
            self.norms[idx].running_mean = value
        elif name.endswith("running_var"):
            self.norms[idx].running_var = value
        else:
            raise ContractError(f"unknown buffer {name!r}")

    def select_params(self, scope):
        if scope not in SCOPES:
            raise ContractError(f"unknown scope {scope!r}, expected one of {SCOPES}")
        named = self.named_params()
        if scope == "full":
            return [t for _, t in named]
        if scope == "classifier-only":
            return [self.W]
        if scope == "norm-affine-only":
            return [t for name, t in named if ".gamma" in name or ".beta" in name]
        return [t for name, t in named if name != "head.W"]

    def snapshot(self):
        state = {name: t.data.copy() for name, t in self.named_params()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def restore(self, state):
        names = {n for n, _ in self.named_params()}
        names |= {n for n, _ in self.named_buffers()}
        if set(state) != names:
            missing = names - set(state)
            extra = set(state) - names
            raise ContractError(
                f"snapshot keys mismatch (missing {sorted(missing)}, "
                f"extra {sorted(extra)})")
        for name, t in self.named_params():
            if state[name].shape != t.data.shape:
                raise ContractError(
                    f"snapshot shape mismatch for {name}: "
                    f"{state[name].shape} vs {t.data.shape}")
            t.data = state[name].copy()
            t.grad = None
        for name, _ in self.named_buffers():
            self.set_buffer(name, state[name].copy())

    # -- forward -------------------------------------------------------------

    def forward(self, x, batch_stats=True, norm_stats=None, update_running=False):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatchError(
                f"expected (N, {self.config.in_channels}, H, W), got {x.shape}")
        tap = self.config.style_tap
        h = x
        used = []
        for i in range(tap):
            h = ad.conv2d(h, self.convs[i], pad=self.pad)
            h, st = self.norms[i].apply(
                h, batch_stats=batch_stats,
                stats=None if norm_stats is None else norm_stats[i],
                update_running=update_running)
            used.append(st)
            h = ad.relu(h)
        style_maps = h
        features, logits, tail_used = self._tail(
            style_maps, batch_stats=batch_stats,
            norm_stats=None if norm_stats is None else norm_stats[tap:],
            update_running=update_running)
        return ForwardPass(style_maps, features, logits, used + tail_used)

    def forward_from_style_maps(self, style_maps, batch_stats=True,
                                norm_stats=None):
        """Resume the forward pass from the style tap.

        ``norm_stats`` holds the stats for the blocks after the tap, e.g. a
        slice of a previous ForwardPass.norm_stats[config.style_tap:].
        """
        features, logits, _ = self._tail(style_maps, batch_stats=batch_stats,
                                         norm_stats=norm_stats)
        return features, logits

    def _tail(self, h, batch_stats=True, norm_stats=None, update_running=False):
        tap = self.config.style_tap
        used = []
        for j, i in enumerate(range(tap, len(self.convs))):
            h = ad.conv2d(h, self.convs[i], pad=self.pad)
            h, st = self.norms[i].apply(
                h, batch_stats=batch_stats,
                stats=None if norm_stats is None else norm_stats[j],
                update_running=update_running)
            used.append(st)
            h = ad.relu(h)
        features = ad.global_avg_pool(h)
        logits = ad.matmul(features, ad.transpose(self.W))
        return features, logits, used


# -- checkpoint format --------------------------------------------------------
# magic "DPLCKPT1", u32 little-endian header length, JSON header holding the
# architecture config and a tensor manifest (name, shape, kind), then raw
# little-endian float64 payloads in manifest order.

def save_checkpoint(model, path, extra=None):
    manifest = []
    payloads = []
    for name, t in model.named_params():
        manifest.append({"name": name, "shape": list(t.data.shape),
                         "kind": "param"})
        payloads.append(np.ascontiguousarray(t.data, dtype="<f8"))
    for name, b in model.named_buffers():
        manifest.append({"name": name, "shape": list(b.shape),
                         "kind": "buffer"})
        payloads.append(np.ascontiguousarray(b, dtype="<f8"))
    cfg = asdict(model.config)
    cfg["channels"] = list(cfg["channels"])
    header = {"config": cfg, "manifest": manifest}
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for p in payloads:
        buf.write(p.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (model, extra-dict-or-None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CKPT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:8]!r}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = json.loads(blob[12:12 + hlen].decode())
    cfg = dict(header["config"])
    cfg["channels"] = tuple(cfg["channels"])
    model = PrototypeClassifier(ModelConfig(**cfg), seed=0)
    offset = 12 + hlen
    state = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        state[entry["name"]] = arr.reshape(shape).astype(np.float64)
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after payloads")
    model.restore(state)
    return model, header.get("extra")
