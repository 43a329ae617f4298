"""IDX (MNIST / Fashion-MNIST) ingestion, batching and a synthetic dataset."""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, TruncatedDataError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# (split, kind) -> accepted basenames; a ".gz" suffix is also tried.
_IDX_NAMES = {
    ("train", "images"): ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    ("train", "labels"): ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    ("test", "images"): ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    ("test", "labels"): ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


@dataclass(frozen=True)
class LabeledDataset:
    """Images as an ``(N, D)`` float64 array in [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10
    shape: tuple = (28, 28)

    def __post_init__(self):
        object.__setattr__(self, "images", np.asarray(self.images, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.images.ndim != 2:
            raise DimensionError(f"images must be (N, D), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DimensionError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.images.shape[1]

    def subset(self, index):
        return LabeledDataset(self.images[index], self.labels[index], self.n_classes, self.shape)


def _header(data, magic, n_dims, what):
    need = 4 + 4 * n_dims
    if len(data) < need:
        raise TruncatedDataError(
            f"{what}: header needs {need} bytes, got {len(data)}", need, len(data)
        )
    (observed,) = struct.unpack(">I", data[:4])
    if observed != magic:
        raise FormatError(
            f"{what}: bad magic 0x{observed:08x}, expected 0x{magic:08x}"
        )
    return struct.unpack(f">{n_dims}I", data[4:need]), need


def _payload(data, offset, count, what):
    actual = len(data) - offset
    if actual < count:
        raise TruncatedDataError(
            f"{what}: payload truncated, expected {count} bytes, got {actual}",
            count,
            actual,
        )
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)


def parse_idx_images(data):
    """Parse an IDX3 image file into an ``(N, rows*cols)`` array of b/255."""
    data = bytes(data)
    (n, rows, cols), offset = _header(data, IMAGES_MAGIC, 3, "idx images")
    raw = _payload(data, offset, n * rows * cols, "idx images")
    return raw.reshape(n, rows * cols) / 255.0


def parse_idx_labels(data):
    data = bytes(data)
    (n,), offset = _header(data, LABELS_MAGIC, 1, "idx labels")
    return _payload(data, offset, n, "idx labels").astype(np.int64)


def idx_image_shape(data):
    """``(rows, cols)`` from an IDX3 header."""
    (_, rows, cols), _ = _header(bytes(data[:16]), IMAGES_MAGIC, 3, "idx images")
    return rows, cols


def serialize_idx_images(images, rows, cols):
    """Inverse of :func:`parse_idx_images` for values on the b/255 grid."""
    images = np.asarray(images)
    if images.ndim != 2 or images.shape[1] != rows * cols:
        raise DimensionError(f"images shape {images.shape} does not match {rows}x{cols}")
    raw = np.rint(images * 255.0).astype(np.uint8)
    return struct.pack(">4I", IMAGES_MAGIC, len(images), rows, cols) + raw.tobytes()


def serialize_idx_labels(labels):
    labels = np.asarray(labels)
    return struct.pack(">2I", LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def _read_maybe_gzip(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def find_idx_file(data_dir, split, kind):
    data_dir = Path(data_dir)
    for name in _IDX_NAMES[(split, kind)]:
        for candidate in (data_dir / name, data_dir / f"{name}.gz"):
            if candidate.is_file():
                return candidate
    raise FileNotFoundError(
        f"no {split} {kind} IDX file in {data_dir} "
        f"(looked for {', '.join(_IDX_NAMES[(split, kind)])}[.gz])"
    )


def load_idx_split(data_dir, split):
    """Load ``split`` ("train" or "test") from a directory of IDX files."""
    raw_images = _read_maybe_gzip(find_idx_file(data_dir, split, "images"))
    raw_labels = _read_maybe_gzip(find_idx_file(data_dir, split, "labels"))
    images = parse_idx_images(raw_images)
    labels = parse_idx_labels(raw_labels)
    return LabeledDataset(images, labels, 10, idx_image_shape(raw_images))


def synthetic_quadrant_dataset(n, d, classes, seed=0, noise=0.1):
    """Block-indicator dataset: class c lights up coordinate block c.

    Samples are assigned round-robin to classes, so labels are balanced
    whenever ``classes`` divides ``n``. With ``noise == 0`` every image is
    exactly its block indicator.
    """
    if d % classes:
        raise DimensionError(f"d={d} is not divisible by classes={classes}")
    block = d // classes
    labels = np.arange(n) % classes
    images = np.zeros((n, d))
    for c in range(classes):
        images[labels == c, c * block:(c + 1) * block] = 1.0
    if noise:
        rng = np.random.default_rng(seed)
        images = images + noise * rng.standard_normal((n, d))
    return LabeledDataset(images, labels.astype(np.int64), classes, (1, d))


def epoch_rng(seed, epoch, stream=0):
    """Counter-based generator keyed on ``(seed, epoch, stream)``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, epoch * 4 + stream], dtype=np.uint64)))


class BatchIterator:
    """Shuffled mini-batches; epoch ``e`` uses a permutation keyed on (seed, e)."""

    def __init__(self, dataset, batch_size, seed=0):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0

    def batch_indices(self, epoch):
        order = epoch_rng(self.seed, epoch).permutation(len(self.dataset))
        return [order[i:i + self.batch_size] for i in range(0, len(order), self.batch_size)]

    def __iter__(self):
        for index in self.batch_indices(self.epoch):
            yield self.dataset.images[index], self.dataset.labels[index]
        self.epoch += 1

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)
