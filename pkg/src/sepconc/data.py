"""Dataset ingestion: MNIST IDX, CIFAR-10 binary, subsets, augmentation, standardization."""
import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrayio import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataFormatError, InvariantError
from .fisher import LabeledBatch

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
DATASETS = ("mnist", "cifar10", "synthetic-gmm", "radial")
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {"train": [f"data_batch_{i}.bin" for i in range(1, 6)], "test": ["test_batch.bin"]}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    root: str = None
    split: str = "train"
    subset: int = None
    flip: bool = False
    crop: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigurationError(f"unknown dataset {self.name!r}; expected one of {DATASETS}")
        if self.split not in ("train", "test"):
            raise ConfigurationError(f"split must be train or test, got {self.split!r}")
        if self.subset is not None and self.subset < 1:
            raise ConfigurationError(f"subset size must be positive, got {self.subset}")


def _read_bytes(path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def parse_idx(buf, expected_magic):
    """Decode an unsigned-byte IDX buffer into an array."""
    if len(buf) < 4:
        raise DataFormatError("file shorter than the IDX magic number", len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise DataFormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise DataFormatError(f"truncated IDX header ({ndim} dimensions)", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = int(np.prod(dims))
    if len(buf) < head + size:
        raise DataFormatError(f"truncated IDX payload: need {size} bytes after the header, have {len(buf) - head}", len(buf))
    if len(buf) > head + size:
        raise DataFormatError("trailing bytes after IDX payload", head + size)
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=head).reshape(dims)


def write_idx(path, array):
    """Write a ``uint8`` array as IDX (images need 3 dims, labels 1)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | a.ndim
    Path(path).write_bytes(struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes())


def load_mnist(spec):
    """MNIST split as ``(N, 1, 28, 28)`` reals in ``[0, 1]`` (standardize with :func:`standardization_stats`)."""
    if spec.root is None:
        raise ConfigurationError("MNIST needs a root directory holding the IDX files")
    img_name, lab_name = MNIST_FILES[spec.split]
    images = parse_idx(_read_bytes(Path(spec.root) / img_name), IDX_IMAGES)
    labels = parse_idx(_read_bytes(Path(spec.root) / lab_name), IDX_LABELS)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise DataFormatError(f"image/label files disagree: {images.shape} vs {labels.shape}", 0)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"label {labels[bad]} out of range", 8 + bad)
    batch = LabeledBatch(images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64), 10)
    return _maybe_subset(batch, spec)


def parse_cifar(buf):
    if len(buf) % CIFAR_RECORD:
        raise DataFormatError(
            f"size {len(buf)} is not a multiple of the {CIFAR_RECORD}-byte record", len(buf) - len(buf) % CIFAR_RECORD
        )
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"label byte {labels[bad]} out of range (record misaligned?)", bad * CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def _cifar_dir(root):
    root = Path(root)
    nested = root / "cifar-10-batches-bin"
    return nested if nested.is_dir() else root


def load_cifar10(spec):
    """CIFAR-10 split as ``(N, 3, 32, 32)`` reals in ``[0, 1]``."""
    if spec.root is None:
        raise ConfigurationError("CIFAR-10 needs a root directory holding the binary batches")
    images, labels = [], []
    for name in CIFAR_FILES[spec.split]:
        x, y = parse_cifar(_read_bytes(_cifar_dir(spec.root) / name))
        images.append(x)
        labels.append(y)
    batch = LabeledBatch(np.concatenate(images).astype(np.float64) / 255.0, np.concatenate(labels), 10)
    return _maybe_subset(batch, spec)


def _maybe_subset(batch, spec):
    return stratified_subset(batch, spec.subset, spec.seed) if spec.subset else batch


def stratified_subset(batch, size, seed=0):
    """``size`` samples with class counts as equal as possible, sorted by original index."""
    if size >= len(batch):
        return batch
    rng = np.random.default_rng(seed)
    c = batch.n_classes
    per = np.full(c, size // c)
    per[rng.permutation(c)[: size - per.sum()]] += 1
    chosen = []
    for k in range(c):
        pool = np.flatnonzero(batch.labels == k)
        if len(pool) < per[k]:
            raise ConfigurationError(f"class {k} has {len(pool)} samples, cannot draw {per[k]}")
        chosen.append(rng.choice(pool, per[k], replace=False))
    idx = np.sort(np.concatenate(chosen))
    return LabeledBatch(batch.samples[idx], batch.labels[idx], c)


def hflip(images):
    return np.asarray(images)[..., ::-1]


def random_crop(images, rng, pad=4):
    """Zero-pad by ``pad`` then crop back to the original size at a random offset per image."""
    images = np.asarray(images)
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, 2 * pad + 1, n)
    ox = rng.integers(0, 2 * pad + 1, n)
    out = np.empty_like(images)
    for i in range(n):
        out[i] = padded[i, :, oy[i]:oy[i] + h, ox[i]:ox[i] + w]
    return out


def make_augment(flip=True, crop=True, pad=4):
    """Training-time augmentation callable ``(images, rng) -> images``."""
    if not (flip or crop):
        return None

    def augment(images, rng):
        out = images
        if flip:
            mask = rng.random(len(out)) < 0.5
            out = out.copy()
            out[mask] = out[mask][..., ::-1]
        if crop:
            out = random_crop(out, rng, pad)
        return out

    return augment


def pad_to_multiple(images, m):
    """Symmetric zero padding of the spatial sides up to a multiple of ``m``."""
    images = np.asarray(images)
    h, w = images.shape[-2:]
    ph, pw = -h % m, -w % m
    width = [(0, 0)] * (images.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    return np.pad(images, width)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-coordinate mean and scale, tagged with the split they came from."""
    mean: np.ndarray
    std: np.ndarray
    source: str = "train"

    def apply(self, images):
        return (np.asarray(images) - self.mean) / self.std

    def save(self, path):
        save_checkpoint(path, [({"role": "mean", "source": self.source}, self.mean.reshape(1, -1)),
                               ({"role": "std", "source": self.source}, self.std.reshape(1, -1))])

    @classmethod
    def load(cls, path, shape):
        blocks = {meta["role"]: (meta, arr) for meta, arr in load_checkpoint(path)}
        return cls(blocks["mean"][1].reshape(shape), blocks["std"][1].reshape(shape), blocks["mean"][0]["source"])


def standardization_stats(images, split="train", cache=None):
    """Fit statistics on the training split only; ``cache`` is reused when present."""
    if split != "train":
        raise InvariantError(f"standardization statistics must come from the training split, not {split!r}")
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ConfigurationError("cannot standardize an empty split")
    if cache is not None and Path(cache).exists():
        return StandardizationStats.load(cache, images.shape[1:])
    mean = images.mean(axis=0)
    std = images.std(axis=0)
    stats = StandardizationStats(mean, np.where(std > 0, std, 1.0), "train")
    if cache is not None:
        stats.save(cache)
    return stats


def first_image_digest(batch):
    """SHA-256 of the first image's raw bytes (as 8-bit values)."""
    first = np.rint(np.asarray(batch.samples[0]) * 255).astype(np.uint8)
    return hashlib.sha256(first.tobytes()).hexdigest()


def load_pair(name, root, subset=None, seed=0, pad_multiple=None, cache=None):
    """Standardized ``(train, test)`` with statistics from the training split only."""
    loader = {"mnist": load_mnist, "cifar10": load_cifar10}.get(name)
    if loader is None:
        raise ConfigurationError(f"{name!r} is not an image dataset")
    train = loader(DatasetSpec(name, root, "train", subset, seed=seed))
    test = loader(DatasetSpec(name, root, "test", seed=seed))
    stats = standardization_stats(train.samples, "train", cache)
    out = []
    for b in (train, test):
        x = stats.apply(b.samples)
        if pad_multiple:
            x = pad_to_multiple(x, pad_multiple)
        out.append(LabeledBatch(x, b.labels, b.n_classes))
    return out[0], out[1]
