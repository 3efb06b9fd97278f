"""IDX reading/writing, a speckled-shape generator, few-shot/noisy corruption and batching."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, FormatError

IDX_UBYTE = 0x08
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SHAPES = ("ellipse", "rectangle", "wedge", "cross", "tshape", "lshape", "bar")
BACKGROUND = 0.04
FOREGROUND = 0.2


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W, values in [0, 1]
    labels: np.ndarray  # N, int64
    class_names: list = field(default_factory=list)
    split_tag: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be N x C x H x W, got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        if not self.class_names:
            self.class_names = [str(c) for c in range(int(self.labels.max(initial=0)) + 1)]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("label outside [0, num_classes)")

    def __len__(self):
        return self.images.shape[0]

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class CorruptionSpec:
    few_shot_per_class: int | None = None
    label_noise_rate: float = 0.0
    speckle_looks: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.few_shot_per_class is not None and self.few_shot_per_class < 1:
            raise ConfigError("few_shot_per_class must be positive")
        if not 0 <= self.label_noise_rate < 1:
            raise ConfigError("label_noise_rate must lie in [0, 1)")
        if self.speckle_looks is not None and self.speckle_looks < 1:
            raise ConfigError("speckle_looks must be positive")


# ---------------------------------------------------------------- IDX


def _open_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, allowed_ndim: tuple, what: str):
    if len(raw) < 4:
        raise FormatError(f"{what}: truncated magic number", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if raw[0:2] != b"\0\0" or raw[2] != IDX_UBYTE or raw[3] not in allowed_ndim:
        raise FormatError(f"{what}: bad magic 0x{magic:08x}", offset=0)
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{what}: truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims))
    if len(raw) < header_end + count:
        raise FormatError(
            f"{what}: expected {count} data bytes, found {len(raw) - header_end}", offset=len(raw)
        )
    if len(raw) > header_end + count:
        raise FormatError(f"{what}: trailing bytes after data", offset=header_end + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    return data


def read_idx(path_images, path_labels, class_names=None, split_tag="train") -> Dataset:
    """Load an IDX image/label pair (optionally gzipped); pixels are scaled by 1/255.

    Image files may be 3-D (N x H x W, one channel) or 4-D (N x C x H x W).
    """
    images = _parse_idx(_open_bytes(path_images), (3, 4), "images")
    labels = _parse_idx(_open_bytes(path_labels), (1,), "labels")
    if images.ndim == 3:
        images = images[:, None]
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4
        )
    labels = labels.astype(np.int64)
    if class_names is None:
        class_names = [str(c) for c in range(int(labels.max(initial=0)) + 1)]
    return Dataset(images.astype(np.float64) / 255.0, labels, list(class_names), split_tag)


def write_idx(d: Dataset, path_images, path_labels) -> None:
    """Write ``d`` as uncompressed IDX, quantizing pixels to ``round(255 * x)``."""
    pix = np.clip(np.rint(d.images * 255.0), 0, 255).astype(np.uint8)
    if pix.shape[1] == 1:
        pix = pix[:, 0]
    with open(path_images, "wb") as f:
        f.write(struct.pack(">I", 0x00000800 | pix.ndim))
        f.write(struct.pack(f">{pix.ndim}I", *pix.shape))
        f.write(pix.tobytes())
    with open(path_labels, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(d.labels)))
        f.write(d.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------- synthesis


def _mask(shape: str, x, y):
    ax, ay = np.abs(x), np.abs(y)
    if shape == "ellipse":
        return (x / 11.0) ** 2 + (y / 4.0) ** 2 <= 1.0
    if shape == "rectangle":
        return (ax <= 7.0) & (ay <= 7.0)
    if shape == "wedge":
        return (x >= -9.0) & (x <= 9.0) & (ay <= 6.0 * (9.0 - x) / 18.0)
    if shape == "cross":
        return ((ax <= 9.0) & (ay <= 2.5)) | ((ay <= 9.0) & (ax <= 2.5))
    if shape == "tshape":
        return ((ax <= 9.0) & (y >= -9.0) & (y <= -4.0)) | ((ax <= 2.5) & (y >= -4.0) & (y <= 9.0))
    if shape == "lshape":
        return ((x >= -8.0) & (x <= -3.0) & (ay <= 9.0)) | ((x >= -8.0) & (x <= 8.0) & (y >= 4.0) & (y <= 9.0))
    if shape == "bar":
        return (ax <= 11.0) & (ay <= 2.0)
    raise ConfigError(f"unknown shape {shape!r}")


def render_shape(shape: str, size: int, angle: float, scale: float, shift=(0.0, 0.0)) -> np.ndarray:
    """Binary mask of ``shape`` on a ``size`` x ``size`` grid.

    Shape coordinates are laid out for a 32-pixel canvas and rescaled.
    """
    unit = size / 32.0
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx - c - shift[0] * unit) / (unit * scale)
    v = (yy - c - shift[1] * unit) / (unit * scale)
    ca, sa = np.cos(angle), np.sin(angle)
    return _mask(shape, ca * u + sa * v, -sa * u + ca * v)


def apply_speckle(clean: np.ndarray, looks: int | None, rng) -> np.ndarray:
    """Multiply by the mean of ``looks`` unit-mean exponentials (Gamma(L, 1/L))."""
    if looks is None:
        return clean.copy()
    return clean * rng.gamma(shape=looks, scale=1.0 / looks, size=clean.shape)


def _quantize(x):
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def gen_speckled_shapes(num_classes=3, per_class=80, size=32, looks=2, seed=0,
                        max_rotation=np.pi / 6, split_tag="train") -> Dataset:
    """Speckled single-channel shape images, one shape family per class.

    Geometry (pose, scale, offset) and speckle come from independent streams
    of ``seed``, so changing ``looks`` leaves the clean scenes unchanged.
    ``looks=None`` renders noise-free images.
    """
    if not 3 <= num_classes <= len(SHAPES):
        raise ConfigError(f"num_classes must lie in [3, {len(SHAPES)}]")
    if size < 16:
        raise ConfigError("image size must be at least 16")
    if per_class < 1:
        raise ConfigError("per_class must be positive")
    geo_seq, speckle_seq = np.random.SeedSequence(seed).spawn(2)
    geo, speckle = np.random.default_rng(geo_seq), np.random.default_rng(speckle_seq)

    n = num_classes * per_class
    clean = np.empty((n, 1, size, size))
    labels = np.repeat(np.arange(num_classes), per_class)
    for i, cls in enumerate(labels):
        angle = geo.uniform(-max_rotation, max_rotation)
        scale = geo.uniform(0.8, 1.1)
        shift = geo.uniform(-2.0, 2.0, size=2)
        mask = render_shape(SHAPES[cls], size, angle, scale, shift)
        clean[i, 0] = np.where(mask, FOREGROUND, BACKGROUND)
    images = _quantize(apply_speckle(clean, looks, speckle))
    return Dataset(images, labels, list(SHAPES[:num_classes]), split_tag)


# ---------------------------------------------------------------- corruption / batching


def corrupt(d: Dataset, spec: CorruptionSpec) -> Dataset:
    """Stratified few-shot subsample, then flip ``floor(rate * N)`` labels.

    Flipped labels move to a uniformly chosen different class. When
    ``spec.speckle_looks`` is set the selected images are additionally
    speckled; otherwise image bytes are untouched.
    """
    rng = np.random.default_rng(spec.seed)
    idx = np.arange(len(d))
    if spec.few_shot_per_class is not None:
        counts = d.class_counts()
        if counts.min() < spec.few_shot_per_class:
            raise DataError(
                f"cannot draw {spec.few_shot_per_class} per class; smallest class has {counts.min()}"
            )
        keep = [
            np.sort(rng.choice(np.flatnonzero(d.labels == c), spec.few_shot_per_class, replace=False))
            for c in range(d.num_classes)
        ]
        idx = np.sort(np.concatenate(keep))
    images = d.images[idx].copy()
    labels = d.labels[idx].copy()

    n_flip = int(np.floor(spec.label_noise_rate * len(labels)))
    if n_flip:
        flip = rng.choice(len(labels), n_flip, replace=False)
        labels[flip] = (labels[flip] + rng.integers(1, d.num_classes, size=n_flip)) % d.num_classes
    if spec.speckle_looks is not None:
        images = _quantize(apply_speckle(images, spec.speckle_looks, rng))
    return replace(d, images=images, labels=labels)


def standardize(train: Dataset, *others: Dataset):
    """Shift/scale every dataset by the training set's global pixel mean and std."""
    mu, sd = train.images.mean(), train.images.std()
    sd = sd if sd > 0 else 1.0
    return [replace(x, images=(x.images - mu) / sd) for x in (train, *others)]


def batch_indices(n: int, batch_size: int, epoch_seed: int):
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(d: Dataset, batch_size: int, epoch_seed: int):
    """Seeded shuffle into contiguous batches; the final short batch is kept."""
    for idx in batch_indices(len(d), batch_size, epoch_seed):
        yield d.images[idx], d.labels[idx]
