"""Patch-grid image features, PGM/PPM I/O and a planted-signal face generator."""

from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DataFormatError, InvalidParameterError, ShapeMismatchError
from ..estimators import TideModel, TrainConfig, tide_train
from ..mechanism import LeakageReport, MechanismConfig, identify_leaking, obfuscate

log = logging.getLogger(__name__)

FACE_SIZE = 64
# Rows/columns whose brightness depends on the attribute in synthetic_face_gen.
SIGNAL_ROWS = (40, 56)
SIGNAL_COLS = (20, 44)
# The lower-center block that contains the signal region.
PLANTED_ROWS = (32, 64)
PLANTED_COLS = (16, 48)


@dataclass
class RasterImage:
    """Grayscale (H, W) or colour (H, W, 3) pixels with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ShapeMismatchError(f"unsupported pixel array shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise InvalidParameterError("pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


# -- PNM I/O --------------------------------------------------------------

_PNM_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pnm(path) -> RasterImage:
    """Read a binary PGM (P5) or PPM (P6) file."""
    with open(path, "rb") as f:
        data = f.read()
    m = _PNM_HEADER.match(data)
    if not m:
        raise DataFormatError(f"{path}: not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 65536:
        raise DataFormatError(f"{path}: maxval {maxval} out of range")
    ch = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * ch
    body = data[m.end():m.end() + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise DataFormatError(f"{path}: truncated pixel data")
    px = np.frombuffer(body, dtype=dtype).astype(np.float64) / maxval
    return RasterImage(px.reshape(h, w) if ch == 1 else px.reshape(h, w, 3))


def write_pnm(path, img: RasterImage, maxval: int = 255) -> None:
    """Write a binary PGM/PPM, rounding pixels to ``maxval`` levels."""
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    q = np.rint(np.clip(img.pixels, 0, 1) * maxval).astype(dtype)
    magic = "P5" if img.channels == 1 else "P6"
    with open(path, "wb") as f:
        f.write(f"{magic}\n{img.width} {img.height}\n{maxval}\n".encode("ascii"))
        f.write(q.tobytes())


# -- patches --------------------------------------------------------------

@dataclass(frozen=True)
class PatchSpec:
    """Square p x p patches in raster order (left to right, top to bottom)."""

    p: int

    def grid(self, height: int, width: int) -> tuple:
        if self.p < 1 or self.p > min(height, width):
            raise InvalidParameterError(f"patch size {self.p} does not fit a {height}x{width} image")
        if height % self.p or width % self.p:
            raise InvalidParameterError(f"patch size {self.p} does not divide {height}x{width}")
        return height // self.p, width // self.p


def image_to_features(img: RasterImage, spec: PatchSpec) -> np.ndarray:
    """Raster-ordered patches, shape (m, channels * p * p)."""
    px = img.pixels if img.channels == 3 else img.pixels[:, :, None]
    gh, gw = spec.grid(img.height, img.width)
    p = spec.p
    blocks = px.reshape(gh, p, gw, p, px.shape[2]).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, p * p * px.shape[2]).copy()


def features_to_image(features, spec: PatchSpec, height: int, width: int, channels: int = 1) -> np.ndarray:
    """Inverse of :func:`image_to_features`; returns the raw pixel array (unclipped)."""
    f = np.asarray(features, dtype=np.float64)
    gh, gw = spec.grid(height, width)
    p = spec.p
    if f.shape != (gh * gw, p * p * channels):
        raise ShapeMismatchError(f"expected features of shape {(gh * gw, p * p * channels)}, got {f.shape}")
    px = f.reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4).reshape(height, width, channels)
    return px[:, :, 0] if channels == 1 else px


def planted_patches(spec: PatchSpec, size: int = FACE_SIZE) -> list:
    """Raster indices of patches inside the planted lower-center block."""
    gh, gw = spec.grid(size, size)
    p = spec.p
    return [r * gw + c for r in range(gh) for c in range(gw)
            if PLANTED_ROWS[0] <= r * p and (r + 1) * p <= PLANTED_ROWS[1]
            and PLANTED_COLS[0] <= c * p and (c + 1) * p <= PLANTED_COLS[1]]


# -- synthetic faces --------------------------------------------------------

def synthetic_face_gen(n: int, seed: int):
    """Procedural 64x64 grayscale faces with a binary attribute.

    Every image has a background gradient, an elliptical face of random
    brightness and position jitter, two dark eyes and pixel noise; none of
    these depend on the attribute. The attribute only changes the mouth:
    for s = 1 a bright arc ("smile") is drawn, for s = 0 a flat dim line.
    All attribute-dependent pixels lie in rows 40:56 and columns 20:44
    (``SIGNAL_ROWS``, ``SIGNAL_COLS``), inside the planted block rows 32:64,
    columns 16:48.

    Returns
    -------
    images : ndarray, shape (n, 64, 64), values in [0, 1]
    labels : ndarray of int, shape (n,)
    """
    if n < 100:
        raise InvalidParameterError("generate at least 100 faces")
    rng = np.random.default_rng(seed)
    size = FACE_SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    labels = rng.integers(0, 2, size=n)
    images = np.empty((n, size, size))
    for k in range(n):
        tilt = rng.uniform(-0.3, 0.3)
        img = 0.25 + 0.15 * (tilt * (xx - 32) + (yy - 32)) / 64.0
        cy, cx = 30 + rng.uniform(-2, 2), 32 + rng.uniform(-2, 2)
        face = ((yy - cy) / 26.0) ** 2 + ((xx - cx) / 20.0) ** 2 <= 1.0
        img[face] = rng.uniform(0.5, 0.7)
        for ex in (cx - 8, cx + 8):
            eye = ((yy - (cy - 6)) / 2.5) ** 2 + ((xx - ex) / 3.5) ** 2 <= 1.0
            img[eye] = rng.uniform(0.05, 0.2)
        mouth = _mouth_mask(labels[k], yy, xx, rng)
        img[mouth] = 0.95 if labels[k] else 0.35
        img += 0.03 * rng.standard_normal((size, size))
        images[k] = np.clip(img, 0.0, 1.0)
    return images, labels


def _mouth_mask(s: int, yy, xx, rng):
    r0, r1 = SIGNAL_ROWS
    c0, c1 = SIGNAL_COLS
    inside = (yy >= r0) & (yy < r1) & (xx >= c0) & (xx < c1)
    width = rng.uniform(8, 10)
    mid = 0.5 * (c0 + c1) + rng.uniform(-1.5, 1.5)
    u = (xx - mid) / width
    if s:
        band = np.abs(yy - (50.0 - 6.0 * u * u)) <= 1.2
    else:
        band = np.abs(yy - 47.0) <= 1.0
    return inside & band & (np.abs(u) <= 1.0)


# -- training and obfuscation ------------------------------------------------

IMAGE_HIDDEN = (32, 32)
IMAGE_TRAIN = TrainConfig(epochs=100, batch_size=64, learning_rate=0.01, weight_decay=0.01,
                          initial_accumulator=1e-4, attribute_init_scale=1.0)


def train_image_tide(images, labels, spec: PatchSpec, M: float = 5.0,
                     hidden: Sequence[int] = IMAGE_HIDDEN,
                     config: Optional[TrainConfig] = None) -> TideModel:
    """Prefix-masked TIDE over raster-ordered patches of a stack of images.

    The empirical feature radius (largest patch norm) is stored in the
    model metadata as ``K_empirical``.
    """
    feats = np.stack([image_to_features(RasterImage(im), spec) for im in images])
    n, m, r = feats.shape
    config = config or IMAGE_TRAIN
    model = tide_train(np.asarray(labels, dtype=np.float64)[:, None], feats.reshape(n, m * r), hidden, M,
                       config, n_features=m, prefix=True)
    model.metadata.update({
        "patch_size": spec.p,
        "image_shape": list(np.asarray(images[0]).shape),
        "K_empirical": float(np.linalg.norm(feats, axis=2).max()),
        "K_convention": 1.0,
        "s_alphabet": sorted({int(v) for v in np.asarray(labels).ravel()}),
    })
    return model


def heatmap_image(report: LeakageReport, spec: PatchSpec, height: int, width: int) -> RasterImage:
    """Per-patch scores scaled to [0, 1] (infinite scores map to 1)."""
    scores = report.scores_by_feature()
    finite = scores[np.isfinite(scores)]
    top = finite.max() if finite.size and finite.max() > 0 else 1.0
    level = np.where(np.isfinite(scores), scores / top, 1.0)
    p = spec.p
    feats = np.repeat(level[:, None], p * p, axis=1)
    return RasterImage(np.clip(features_to_image(feats, spec, height, width), 0, 1))


def obfuscate_image(img: RasterImage, model: TideModel, config: MechanismConfig, spec: PatchSpec,
                    seed: int, s_alphabet: Sequence = (0, 1)):
    """Detect leaking patches and add calibrated noise to them.

    Returns
    -------
    raw : ndarray
        Obfuscated pixels, unclamped unless ``config.clamp_output``.
    display : RasterImage
        Copy of ``raw`` clamped to [0, 1] for viewing.
    heatmap : RasterImage
        Per-patch leakage scores.
    report : LeakageReport
    """
    feats = image_to_features(img, spec)
    if model.n_features != feats.shape[0] or model.feature_dim != feats.shape[1]:
        raise ShapeMismatchError(
            f"model expects {model.n_features} patches of {model.feature_dim} values, "
            f"image gives {feats.shape[0]} of {feats.shape[1]}")
    report = identify_leaking(model, feats, list(s_alphabet), config.eps)
    noisy = obfuscate(feats, report, config.lam, seed, clamp_output=config.clamp_output)
    raw = features_to_image(noisy, spec, img.height, img.width, img.channels)
    display = RasterImage(np.clip(raw, 0, 1))
    return raw, display, heatmap_image(report, spec, img.height, img.width), report


def load_image_dir(directory) -> tuple:
    """Images and labels from ``labels.csv`` (file,label) in ``directory``."""
    path = os.path.join(directory, "labels.csv")
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows or not {"file", "label"} <= set(rows[0]):
        raise DataFormatError(f"{path}: expected columns file,label")
    images, labels = [], []
    for k, row in enumerate(rows, start=2):
        try:
            labels.append(int(row["label"]))
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {k}: bad label {row['label']!r}") from exc
        images.append(read_pnm(os.path.join(directory, row["file"])).pixels)
    return np.stack(images), np.array(labels)


def save_image_dir(directory, images, labels) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["file", "label"])
        for k, (im, lab) in enumerate(zip(images, labels)):
            name = f"face_{k:05d}.pgm"
            write_pnm(os.path.join(directory, name), RasterImage(im))
            w.writerow([name, int(lab)])
