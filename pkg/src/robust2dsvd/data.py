"""Image loading, normalization and outlier injection."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .decomp2d import SampleSet

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    """Malformed or missing input data."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used for every random draw in this package (numpy Philox, counter-based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


# ------------------------------------------------------------------ IDX


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head != count:
        raise DataError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims).copy()


def write_idx(path, array) -> None:
    a = np.asarray(array)
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("IDX payload must fit in uint8")
        a = a.astype(np.uint8)
    if a.ndim == 3:
        magic = IMAGE_MAGIC
    elif a.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise ValueError("IDX writer supports image stacks (3-D) and label vectors (1-D)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * a.ndim, *a.shape))
        fh.write(a.tobytes())


def load_idx(images_path, labels_path=None) -> SampleSet:
    images = read_idx(images_path)
    if images.ndim != 3:
        raise DataError(f"{images_path} is not an image file")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise DataError(f"{labels_path} is not a label file")
        if len(labels) != len(images):
            raise DataError(f"{len(images)} images but {len(labels)} labels")
        labels = labels.astype(np.int64)
    return SampleSet(images.astype(np.float64), labels)


# ------------------------------------------------------- image folders


def _pgm_tokens(raw, count):
    # header tokens, skipping '#' comments; returns tokens and the data offset
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise DataError("truncated PGM header")
        tokens.append(raw[i:j])
        i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, off = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise DataError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * dtype.itemsize
    if len(raw) - off < n:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=dtype, count=w * h, offset=off).reshape(h, w).astype(np.float64)


def write_pgm(path, image) -> None:
    a = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(a.tobytes())


def _read_image(path):
    if path.lower().endswith(".pgm"):
        return read_pgm(path)
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_image_dir(path, labels_from_subdirs: bool = False) -> SampleSet:
    """Load every ``.pgm`` / ``.csv`` image under ``path`` in sorted-name order.

    With ``labels_from_subdirs`` each immediate subdirectory is one class
    (labels are assigned in sorted subdirectory order).
    """
    if not os.path.isdir(path):
        raise DataError(f"{path} is not a directory")

    def files(d):
        return [os.path.join(d, f) for f in sorted(os.listdir(d)) if f.lower().endswith((".pgm", ".csv"))]

    if labels_from_subdirs:
        classes = sorted(d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d)))
        paths, labels = [], []
        for c, name in enumerate(classes):
            found = files(os.path.join(path, name))
            paths += found
            labels += [c] * len(found)
    else:
        paths, labels = files(path), None
    if not paths:
        raise DataError(f"no images found in {path}")
    images = [_read_image(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"images in {path} have differing sizes {sorted(shapes)}")
    return SampleSet(np.stack(images), None if labels is None else np.asarray(labels))


def load_mnist_sample(digits_per_class: int | None = None, seed: int | None = None) -> SampleSet:
    """The 5000-image MNIST subset bundled with ``mlxtend`` (500 per digit), as 28x28 images.

    Optionally keeps ``digits_per_class`` images per digit, drawn with ``seed``.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover
        raise DataError("the bundled MNIST subset needs the optional 'mlxtend' package") from exc
    X, y = mnist_data()
    X = X.reshape(-1, 28, 28).astype(np.float64)
    y = y.astype(np.int64)
    if digits_per_class is not None:
        rng = make_rng(0 if seed is None else seed)
        keep = np.concatenate(
            [np.sort(rng.choice(np.flatnonzero(y == d), digits_per_class, replace=False)) for d in range(10)]
        )
        X, y = X[keep], y[keep]
    return SampleSet(X, y)


# ------------------------------------------------------ preprocessing


def normalize_frobenius(data) -> SampleSet:
    """Scale each sample to unit Frobenius norm; all-zero samples are left as zeros."""
    s = data if isinstance(data, SampleSet) else SampleSet(np.asarray(data, dtype=float))
    X = s.samples
    norms = np.sqrt(np.einsum("ijk,ijk->i", X, X))
    safe = np.where(norms > 0, norms, 1.0)
    return SampleSet(X / safe[:, None, None], s.labels)


@dataclass(frozen=True)
class OutlierConfig:
    """``mode="scaled"`` multiplies a random fraction of the samples by ``magnitude``;
    ``mode="dummy"`` appends ``count`` uniform-noise images drawn from ``low..high``."""

    mode: str = "scaled"
    fraction: float = 0.05
    magnitude: float = 50.0
    count: int = 0
    low: float = 0.0
    high: float = 255.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("scaled", "dummy", "none"):
            raise ValueError(f"unknown outlier mode {self.mode!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must be in [0, 1]")
        if not self.magnitude > 0:
            raise ValueError("magnitude must be positive")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if self.high < self.low:
            raise ValueError("high must be >= low")


@dataclass(frozen=True)
class ContaminatedSet:
    data: SampleSet
    outlier_indices: np.ndarray
    clean: SampleSet

    @property
    def inlier_mask(self):
        mask = np.ones(len(self.data), dtype=bool)
        mask[self.outlier_indices] = False
        return mask


def inject_outliers(data, config: OutlierConfig) -> ContaminatedSet:
    """Return a contaminated copy of ``data`` plus the sorted outlier indices.

    Dummy images get label ``-1`` when the input is labeled.
    """
    s = data if isinstance(data, SampleSet) else SampleSet(np.asarray(data, dtype=float))
    rng = make_rng(config.seed)
    N = len(s)
    if config.mode == "none":
        return ContaminatedSet(s, np.zeros(0, dtype=np.int64), s)
    if config.mode == "scaled":
        count = int(np.floor(config.fraction * N))
        idx = np.sort(rng.choice(N, size=count, replace=False)).astype(np.int64)
        X = s.samples.copy()
        X[idx] *= config.magnitude
        return ContaminatedSet(SampleSet(X, s.labels), idx, s)
    m, n = s.shape
    dummies = rng.uniform(config.low, config.high, size=(config.count, m, n))
    X = np.concatenate([s.samples, dummies])
    labels = None if s.labels is None else np.concatenate([s.labels, np.full(config.count, -1, dtype=s.labels.dtype)])
    idx = np.arange(N, N + config.count, dtype=np.int64)
    return ContaminatedSet(SampleSet(X, labels), idx, s)
