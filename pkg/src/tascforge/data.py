"""Datasets: synthetic source/target image sets, IDX files, splits, class weights."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, ClassTooSmall, CountMismatch, EmptyClass, TruncatedFile


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, h, w, c), values in [0, 1]
    labels: np.ndarray  # (n,) int
    class_count: int
    split: str = "all"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images, {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label outside [0, class_count)")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, idx, split=None):
        return Dataset(self.images[idx], self.labels[idx], self.class_count,
                       split or self.split)


# Fixed distortion separating the target domain from the source domain.
TARGET_ROTATION = np.pi / 5
TARGET_INTENSITY_SHIFT = 0.2
TARGET_CONTRAST = 0.5
NOISE_SIGMA = 0.1


def _class_pattern(cls, classes):
    """Orientation and spatial frequency that identify a class."""
    theta = np.pi * cls / classes
    freq = 1.5 + (cls % 3) * 0.75
    return theta, freq


def generate_synthetic(classes, samples_per_class, h, w, c, rng, style="source"):
    """Oriented Gabor-like blobs, one orientation/frequency per class.

    Every sample jitters the blob centre and phase and adds pixel noise with
    sigma 0.1.  The ``target`` style rotates every pattern by a fixed angle
    lowers its contrast and brightens it, so source-trained features transfer imperfectly.
    """
    if min(classes, samples_per_class, h, w, c) < 1:
        raise ValueError("all counts must be >= 1")
    if style not in ("source", "target"):
        raise ValueError(f"unknown style {style!r}")
    n = classes * samples_per_class
    labels = np.repeat(np.arange(classes), samples_per_class)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    images = np.empty((n, h, w, c))
    for s in range(n):
        theta, freq = _class_pattern(labels[s], classes)
        if style == "target":
            theta += TARGET_ROTATION
        cy, cx = rng.uniform(-0.3, 0.3, 2)
        phase = rng.uniform(-np.pi, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        envelope = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.8)
        amplitude = 0.4
        if style == "target":
            amplitude *= TARGET_CONTRAST
        base = 0.5 + amplitude * envelope * np.cos(2 * np.pi * freq * u + phase)
        if style == "target":
            base = base + TARGET_INTENSITY_SHIFT
        for ch in range(c):
            images[s, :, :, ch] = base * (1.0 - 0.15 * ch)
        images[s] += rng.normal(0.0, NOISE_SIGMA, (h, w, c))
    return Dataset(np.clip(images, 0.0, 1.0), labels, classes, style)


# -- IDX container ----------------------------------------------------------

_IDX_TYPES = {
    0x08: np.dtype("u1"), 0x09: np.dtype("i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


def read_idx(path):
    """Read an IDX file into an array with its declared type and dims."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0 or buf[2] not in _IDX_TYPES:
        raise BadMagic(f"{path}: not an IDX file")
    dtype, ndim = _IDX_TYPES[buf[2]], buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFile(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims)) if ndim else 1
    need = header + count * dtype.itemsize
    if len(buf) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=header).reshape(dims)


def write_idx(path, array):
    """Write an unsigned-byte (or other supported type) IDX file."""
    array = np.asarray(array)
    code = {v.kind + str(v.itemsize): k for k, v in _IDX_TYPES.items()}
    key = array.dtype.kind + str(array.dtype.itemsize)
    if key not in code:
        raise ValueError(f"dtype {array.dtype} has no IDX code")
    dtype = _IDX_TYPES[code[key]]
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, code[key], array.ndim]))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(dtype).tobytes())


def load_idx(images_path, labels_path, class_count=None):
    """Images (n, h, w) or (n, h, w, c) plus labels (n,) from IDX files.

    Unsigned-byte pixels are scaled by 1/255; other types are clipped to [0, 1].
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise BadMagic(f"{labels_path}: labels must be one-dimensional")
    if images.ndim not in (3, 4):
        raise BadMagic(f"{images_path}: images must have 3 or 4 dims")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.ndim == 3:
        images = images[..., None]
    if images.dtype == np.uint8:
        pixels = images.astype(np.float64) / 255.0
    else:
        pixels = np.clip(images.astype(np.float64), 0.0, 1.0)
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if class_count is None else class_count
    return Dataset(pixels, labels, k, "all")


# -- splitting and weights --------------------------------------------------

def split(dataset, val_fraction, rng):
    """Stratified train/validation split.

    Each class sends ``round(n_c * val_fraction)`` samples to validation,
    clamped so that both sides keep at least one sample.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    counts = dataset.class_counts()
    train_idx, val_idx = [], []
    for k in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ClassTooSmall(f"class {k} has {counts[k]} sample(s)")
        members = members[rng.permutation(len(members))]
        n_val = int(np.clip(round(len(members) * val_fraction), 1, len(members) - 1))
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    train_idx, val_idx = np.sort(train_idx), np.sort(val_idx)
    return dataset.subset(train_idx, "train"), dataset.subset(val_idx, "val")


def class_weights(train):
    """w_k = 1 / N_k for the training split."""
    counts = train.class_counts()
    if np.any(counts == 0):
        raise EmptyClass(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    return 1.0 / counts.astype(np.float64)
