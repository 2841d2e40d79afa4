"""Procedural multi-domain shape dataset.

Class identity is geometry (disk, ring, cross, bar, triangle); domain
identity is appearance (brightness, contrast, channel mixing, background
texture, noise). Every sample is a pure function of (domain spec, spec seed,
sample index), so files regenerate bit-identically. A scalar shift level
places the target domain's style at a chosen distance from the sources.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataFormatError

CLASS_NAMES = ("disk", "ring", "cross", "bar", "triangle")
CORRUPTION_TYPES = ("gaussian-noise", "contrast", "blur", "pixelate")

DATA_MAGIC = b"DPLDATA1"


@dataclass
class DomainSpec:
    domain_id: int
    brightness: float = 0.0
    contrast: float = 1.0
    color_mix: tuple = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    texture_freq: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.color_mix = tuple(tuple(float(v) for v in row)
                               for row in self.color_mix)

    def mix_matrix(self):
        return np.array(self.color_mix, dtype=np.float64)


def _mix_matrix(strength):
    """Blend identity with a cyclic channel permutation; strength in [-1,1]."""
    perm = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=np.float64)
    if strength < 0:
        perm = perm.T
    s = abs(float(strength))
    return (1 - s) * np.eye(3) + s * perm


def make_domain_suite(shift_level=1.0, seed=0):
    """Three source domains with mild style spread plus one target whose
    style distance from the sources scales with ``shift_level`` (0 is near
    the source cloud, 1 is severe)."""
    lv = float(shift_level)
    sources = [
        DomainSpec(0, 0.00, 1.00, _mix_matrix(0.0), 0.0, 0.020, seed=seed + 0),
        DomainSpec(1, 0.06, 1.12, _mix_matrix(0.06), 2.0, 0.015, seed=seed + 1),
        DomainSpec(2, -0.06, 0.90, _mix_matrix(-0.06), 3.0, 0.025, seed=seed + 2),
    ]
    target = DomainSpec(3, -0.10 * lv, 1.0 - 0.5 * lv, _mix_matrix(0.6 * lv),
                        6.0 * lv, 0.12 * lv, seed=seed + 3)
    return sources, target


@dataclass
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_TYPES:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not 1 <= int(self.severity) <= 5:
            raise ValueError(f"severity must be 1..5, got {self.severity}")
        self.severity = int(self.severity)


@dataclass
class ShapeDataset:
    images: np.ndarray       # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray       # (N,) int32
    domain_tags: np.ndarray  # (N,) int32
    class_count: int
    specs: list = field(default_factory=list)

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_size(self):
        return self.images.shape[2]


# -- rendering ----------------------------------------------------------------

def _soft_rect(u, v, half_l, half_w):
    return np.clip(np.minimum(half_l - np.abs(u), half_w - np.abs(v)) + 0.5,
                   0.0, 1.0)


def _shape_mask(label, size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size / 2 - 0.5 + rng.uniform(-2.0, 2.0)
    cy = size / 2 - 0.5 + rng.uniform(-2.0, 2.0)
    r = rng.uniform(0.23, 0.33) * size
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    if label == 0:  # disk
        return np.clip(r - dist + 0.5, 0.0, 1.0)
    if label == 1:  # ring
        outer = np.clip(r - dist + 0.5, 0.0, 1.0)
        inner = np.clip((r - 2.6) - dist + 0.5, 0.0, 1.0)
        return np.clip(outer - inner, 0.0, 1.0)
    theta = rng.uniform(0.0, np.pi)
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    if label == 2:  # cross: two perpendicular bars
        w = 1.6
        return np.maximum(_soft_rect(u, v, r, w), _soft_rect(v, u, r, w))
    if label == 3:  # bar
        return _soft_rect(u, v, r, 1.6)
    # triangle via three inward half-planes
    angles = theta + np.deg2rad([90.0, 210.0, 330.0])
    vx = cx + r * np.cos(angles)
    vy = cy + r * np.sin(angles)
    d = np.full_like(dist, np.inf)
    for i in range(3):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % 3], vy[(i + 1) % 3]
        ex, ey = x2 - x1, y2 - y1
        norm = np.hypot(ex, ey)
        nx, ny = -ey / norm, ex / norm
        if nx * (cx - x1) + ny * (cy - y1) < 0:
            nx, ny = -nx, -ny
        d = np.minimum(d, nx * (xx - x1) + ny * (yy - y1))
    return np.clip(d + 0.5, 0.0, 1.0)


def _render(label, spec, size, rng):
    mask = _shape_mask(label, size, rng)
    fg = rng.uniform(0.75, 0.95)
    gray = 0.15 + (fg - 0.15) * mask
    img = np.repeat(gray[None, :, :], 3, axis=0)
    if spec.texture_freq > 0:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        phi = rng.uniform(0.0, np.pi)
        psi = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(2 * np.pi * spec.texture_freq
                      * (xx * np.cos(phi) + yy * np.sin(phi)) / size + psi)
        img = img + 0.12 * wave[None, :, :] * (1.0 - mask)[None, :, :]
    img = np.einsum("ck,khw->chw", spec.mix_matrix(), img)
    img = (img - 0.5) * spec.contrast + 0.5 + spec.brightness
    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def generate(spec, n, class_count=5, image_size=24):
    if n < class_count:
        raise ValueError(f"need at least {class_count} samples, got {n}")
    if class_count > len(CLASS_NAMES):
        raise ValueError(f"at most {len(CLASS_NAMES)} shape classes available")
    images = np.empty((n, 3, image_size, image_size), dtype=np.float32)
    labels = (np.arange(n) % class_count).astype(np.int32)
    for i in range(n):
        rng = np.random.default_rng([spec.seed, i])
        images[i] = _render(int(labels[i]), spec, image_size, rng).astype(
            np.float32)
    tags = np.full(n, spec.domain_id, dtype=np.int32)
    return ShapeDataset(images, labels, tags, class_count, [spec])


# -- corruptions ---------------------------------------------------------------

_NOISE_SIGMA = (0.04, 0.08, 0.12, 0.18, 0.26)
_CONTRAST_GAIN = (0.75, 0.6, 0.45, 0.33, 0.22)
_BLUR_PASSES = (1, 2, 3, 4, 5)
_PIXELATE_BLOCK = (2, 3, 4, 6, 8)


def box_blur(img, k):
    """Single box-blur pass with a k x k kernel, reflect padding; k=1 is the
    identity."""
    if k == 1:
        return img
    pad = k // 2
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for a in range(k):
        for b in range(k):
            out += padded[:, a:a + img.shape[1], b:b + img.shape[2]]
    return out / (k * k)


def apply_contrast(img, gain):
    return (img - 0.5) * gain + 0.5


def pixelate(img, block):
    c, h, w = img.shape
    if h % block or w % block:
        raise ValueError(f"block {block} does not divide {h}x{w}")
    small = img.reshape(c, h // block, block, w // block, block).mean(axis=(2, 4))
    return np.repeat(np.repeat(small, block, axis=1), block, axis=2)


def corrupt(dataset, cspec):
    out = np.empty_like(dataset.images)
    sev = cspec.severity - 1
    for i in range(len(dataset)):
        img = dataset.images[i].astype(np.float64)
        if cspec.kind == "gaussian-noise":
            rng = np.random.default_rng([cspec.seed, i])
            img = img + _NOISE_SIGMA[sev] * rng.standard_normal(img.shape)
        elif cspec.kind == "contrast":
            img = apply_contrast(img, _CONTRAST_GAIN[sev])
        elif cspec.kind == "blur":
            for _ in range(_BLUR_PASSES[sev]):
                img = box_blur(img, 3)
        else:
            img = pixelate(img, _PIXELATE_BLOCK[sev])
        out[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return ShapeDataset(out, dataset.labels.copy(), dataset.domain_tags.copy(),
                        dataset.class_count, list(dataset.specs))


# -- streaming -----------------------------------------------------------------

class StreamBatch:
    """One online batch. Ground-truth labels ride along for metrics only;
    the loss path receives images and never this accessor."""

    def __init__(self, index, images, hidden_labels, domain_tags):
        self.index = index
        self.images = images
        self.domain_tags = domain_tags
        self._hidden_labels = hidden_labels

    def __len__(self):
        return self.images.shape[0]

    def metrics_labels(self):
        return self._hidden_labels


def stream(dataset, batch_size, seed):
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    batches = []
    for bi, start in enumerate(range(0, len(dataset), batch_size)):
        idx = order[start:start + batch_size]
        batches.append(StreamBatch(
            bi,
            dataset.images[idx].astype(np.float64),
            dataset.labels[idx].astype(np.int64),
            dataset.domain_tags[idx].copy()))
    return batches


def concat_datasets(datasets):
    if not datasets:
        raise ValueError("nothing to concatenate")
    k = datasets[0].class_count
    if any(d.class_count != k for d in datasets):
        raise ValueError("datasets disagree on class count")
    specs = []
    for d in datasets:
        specs.extend(d.specs)
    return ShapeDataset(
        np.concatenate([d.images for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        np.concatenate([d.domain_tags for d in datasets]),
        k, specs)


# -- persistence ----------------------------------------------------------------
# magic "DPLDATA1", u32 little-endian header length, JSON header (counts,
# image shape, class count, domain specs with seeds), then raw little-endian
# float32 images, int32 labels, int32 domain tags.

def save_dataset(dataset, path):
    header = {
        "n": len(dataset),
        "image_shape": list(dataset.images.shape[1:]),
        "class_count": dataset.class_count,
        "specs": [asdict(s) for s in dataset.specs],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(DATA_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
    buf.write(np.ascontiguousarray(dataset.domain_tags, dtype="<i4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != DATA_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 12:
        raise DataFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    try:
        header = json.loads(blob[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: unreadable header: {e}") from e
    n = header["n"]
    shape = tuple(header["image_shape"])
    count = n * int(np.prod(shape))
    expected = 12 + hlen + 4 * count + 8 * n
    if len(blob) < expected:
        raise DataFormatError(
            f"{path}: truncated, {len(blob)} bytes for {expected} expected")
    offset = 12 + hlen
    images = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    offset += count * 4
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=offset)
    offset += n * 4
    tags = np.frombuffer(blob, dtype="<i4", count=n, offset=offset)
    offset += n * 4
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after payloads")
    specs = [DomainSpec(**s) for s in header["specs"]]
    return ShapeDataset(images.reshape((n,) + shape).copy(),
                        labels.copy().astype(np.int32),
                        tags.copy().astype(np.int32),
                        header["class_count"], specs)
