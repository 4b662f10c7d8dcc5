"""Dataset loading, generation and deterministic splitting.

Real corpora are read from their canonical byte formats: CIFAR-10 binary
batches (3073-byte records, label byte + channel-major RGB planes) and the
MNIST IDX pair (big-endian headers, magics 0x803/0x801).  Writers for both
formats exist so fixtures and stand-in datasets can be produced and round
tripped exactly.  Synthetic generators cover the frame-classification task
(Gaussian class clusters at the 1353-in / 61-out dimensionality) and an
image task with per-class templates for exercising the CNN family when no
real corpus is on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs

import numpy as np

from .errors import DataFormatError

CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixels
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

DATA_DIR_ENV = "QBNET_DATA_DIR"


@dataclass
class Dataset:
    features: np.ndarray  # (num_samples, *feature_dims), float32
    labels: np.ndarray  # (num_samples,), int64
    num_classes: int
    name: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have one row per sample")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       name if name is not None else self.name)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    valid_count: int
    seed: int = 0

    def __post_init__(self):
        if self.train_count < 1 or self.valid_count < 1:
            raise ValueError("split counts must be positive")


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition by a seed-deterministic permutation: first train_count samples
    go to train, the next valid_count to valid."""
    if spec.train_count + spec.valid_count > len(dataset):
        raise ValueError(
            f"split {spec.train_count}+{spec.valid_count} exceeds dataset size {len(dataset)}"
        )
    perm = np.random.Generator(np.random.PCG64(spec.seed)).permutation(len(dataset))
    tr = perm[: spec.train_count]
    va = perm[spec.train_count: spec.train_count + spec.valid_count]
    return dataset.subset(tr, dataset.name + "-train"), dataset.subset(va, dataset.name + "-valid")


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------

def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD != 0:
        raise DataFormatError(f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError(f"{path}: label byte {labels.max()} > 9")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return pixels, labels


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Read data_batch_1..5.bin and test_batch.bin; pixels scaled to [0, 1]."""
    directory = Path(directory)
    parts = []
    for name in CIFAR_TRAIN_FILES:
        path = directory / name
        if not path.exists():
            raise DataFormatError(f"missing CIFAR-10 batch file {path}")
        parts.append(_read_cifar_file(path))
    feats = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    test_path = directory / CIFAR_TEST_FILE
    if not test_path.exists():
        raise DataFormatError(f"missing CIFAR-10 test file {test_path}")
    tf, tl = _read_cifar_file(test_path)
    return (Dataset(feats, labels, 10, "cifar10-train"),
            Dataset(tf, tl, 10, "cifar10-test"))


def _write_cifar_file(path: Path, features: np.ndarray, labels: np.ndarray) -> None:
    pixels = np.rint(features.reshape(len(labels), -1) * 255.0).astype(np.uint8)
    rec = np.empty((len(labels), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = pixels
    path.write_bytes(rec.tobytes())


def write_cifar10(train: Dataset, test: Dataset, directory) -> None:
    """Write datasets in the CIFAR-10 binary layout (train spread over the five
    batch files).  Pixel values must sit on the k/255 grid for an exact
    round trip."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bounds = np.linspace(0, len(train), num=6, dtype=int)
    for name, lo, hi in zip(CIFAR_TRAIN_FILES, bounds[:-1], bounds[1:]):
        _write_cifar_file(directory / name, train.features[lo:hi], train.labels[lo:hi])
    _write_cifar_file(directory / CIFAR_TEST_FILE, test.features, test.labels)


# ---------------------------------------------------------------------------
# MNIST IDX format
# ---------------------------------------------------------------------------

def _read_idx_pair(image_path: Path, label_path: Path) -> tuple[np.ndarray, np.ndarray]:
    for path in (image_path, label_path):
        if not path.exists():
            raise DataFormatError(f"missing IDX file {path}")
    img = image_path.read_bytes()
    if len(img) < 16:
        raise DataFormatError(f"{image_path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{image_path}: bad magic 0x{magic:08x}")
    if len(img) != 16 + n * rows * cols:
        raise DataFormatError(f"{image_path}: payload does not match header dims")
    lab = label_path.read_bytes()
    if len(lab) < 8:
        raise DataFormatError(f"{label_path}: truncated header")
    lmagic, ln = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"{label_path}: bad magic 0x{lmagic:08x}")
    if ln != n:
        raise DataFormatError(f"label count {ln} != image count {n}")
    if len(lab) != 8 + ln:
        raise DataFormatError(f"{label_path}: payload does not match header count")
    feats = np.frombuffer(img, dtype=np.uint8, offset=16).astype(np.float32) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{label_path}: label {labels.max()} > 9")
    return feats.reshape(n, rows * cols), labels


def load_mnist_idx(directory) -> tuple[Dataset, Dataset]:
    """Read the standard IDX pairs; features are flat rows in [0, 1]."""
    directory = Path(directory)
    out = []
    for part, (img_name, lab_name) in MNIST_FILES.items():
        feats, labels = _read_idx_pair(directory / img_name, directory / lab_name)
        out.append(Dataset(feats, labels, 10, f"mnist-{part}"))
    return out[0], out[1]


def write_mnist_idx(train: Dataset, test: Dataset, directory,
                    rows: int = 28, cols: int = 28) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part, ds in (("train", train), ("test", test)):
        img_name, lab_name = MNIST_FILES[part]
        pixels = np.rint(ds.features.reshape(len(ds), rows * cols) * 255.0).astype(np.uint8)
        with open(directory / img_name, "wb") as f:
            f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(ds), rows, cols))
            f.write(pixels.tobytes())
        with open(directory / lab_name, "wb") as f:
            f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(ds)))
            f.write(ds.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------

def _balanced_labels(n_samples: int, n_classes: int) -> np.ndarray:
    # round-robin keeps every prefix balanced within +-1
    return (np.arange(n_samples) % n_classes).astype(np.int64)


def synth_frames(n_samples: int, n_features: int = 1353, n_classes: int = 61,
                 class_separation: float = 3.0, seed: int = 0) -> Dataset:
    """Gaussian class clusters: class c is N(mu_c, I) with mu_c a fixed random
    direction of length class_separation.  Classes are balanced within +-1."""
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    if class_separation < 0:
        raise ValueError("class separation must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    directions = rng.standard_normal((n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    mu = class_separation * directions
    labels = _balanced_labels(n_samples, n_classes)
    feats = rng.standard_normal((n_samples, n_features)) + mu[labels]
    return Dataset(feats.astype(np.float32), labels, n_classes,
                   f"synth-frames-{n_samples}x{n_features}")


def synth_images(n_samples: int, n_classes: int = 10, image_shape=(3, 32, 32),
                 contrast: float = 0.4, noise: float = 0.25, jitter: int = 2,
                 seed: int = 0) -> Dataset:
    """Per-class sparse block templates with spatial jitter and pixel noise,
    quantized to the k/255 grid so the CIFAR/IDX byte formats round-trip
    exactly.

    Templates follow natural image statistics: a dark background with a
    sparse set of bright 4x4 blocks of amplitude `contrast`.  Each sample is
    the class template cyclically shifted by up to `jitter` pixels per axis,
    so classes have real intra-class variability and task difficulty scales
    smoothly with the contrast/noise/jitter knobs."""
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    if noise < 0 or contrast < 0 or jitter < 0:
        raise ValueError("noise, contrast and jitter must be non-negative")
    c, h, w = image_shape
    rng = np.random.Generator(np.random.PCG64(seed))
    coarse = 0.08 + contrast * (rng.random((n_classes, c, h // 4, w // 4)) < 0.3)
    templates = np.kron(coarse, np.ones((1, 1, 4, 4)))
    labels = _balanced_labels(n_samples, n_classes)
    imgs = templates[labels]
    if jitter > 0:
        shifts = rng.integers(-jitter, jitter + 1, size=(n_samples, 2))
        for dy, dx in {(int(a), int(b)) for a, b in shifts}:
            mask = (shifts[:, 0] == dy) & (shifts[:, 1] == dx)
            imgs[mask] = np.roll(imgs[mask], (dy, dx), axis=(2, 3))
    imgs = imgs + noise * rng.standard_normal((n_samples, c, h, w))
    imgs = np.clip(imgs, 0.0, 1.0)
    imgs = np.rint(imgs * 255.0) / 255.0
    return Dataset(imgs.astype(np.float32), labels, n_classes,
                   f"synth-images-{n_samples}x{c}x{h}x{w}")


def save_dataset_npz(dataset: Dataset, path) -> None:
    np.savez(path, features=dataset.features, labels=dataset.labels,
             num_classes=np.int64(dataset.num_classes), name=np.str_(dataset.name))


def load_dataset_npz(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing dataset file {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            return Dataset(z["features"], z["labels"], int(z["num_classes"]), str(z["name"]))
    except (KeyError, ValueError, OSError) as exc:
        raise DataFormatError(f"{path}: not a qbnet dataset archive ({exc})") from exc


# ---------------------------------------------------------------------------
# dataset resolution for the sweep/CLI/service layers
# ---------------------------------------------------------------------------

@dataclass
class DataBundle:
    train: Dataset
    valid: Dataset
    test: Dataset


def _query_int(q, key, default):
    return int(q[key][0]) if key in q else default


def _query_float(q, key, default):
    return float(q[key][0]) if key in q else default


def resolve_dataset(identifier: str, data_dir=None) -> DataBundle:
    """Turn an identifier like "mnist?train=6000&valid=1000" into datasets.

    Supported bases: cifar10, mnist (read from data_dir), synth-frames,
    synth-images (generated), npz:<path> (one archive split three ways).
    Query keys: train, valid, test (counts), seed (split/generation seed) and
    the generator parameters features, classes, sep, noise.
    """
    base, _, query = identifier.partition("?")
    q = parse_qs(query)
    seed = _query_int(q, "seed", 0)
    data_dir = Path(data_dir) if data_dir is not None else None

    def _dir_for(name: str) -> Path:
        if data_dir is None:
            raise DataFormatError(f"dataset {name!r} needs a data directory")
        sub = data_dir / name
        return sub if sub.is_dir() else data_dir

    if base == "cifar10":
        full_train, test = load_cifar10(_dir_for("cifar10"))
        tr = _query_int(q, "train", 40000)
        va = _query_int(q, "valid", 10000)
    elif base == "mnist":
        full_train, test = load_mnist_idx(_dir_for("mnist"))
        tr = _query_int(q, "train", 50000)
        va = _query_int(q, "valid", 10000)
    elif base in ("synth-frames", "synth-images"):
        tr = _query_int(q, "train", 5000)
        va = _query_int(q, "valid", 1000)
        te = _query_int(q, "test", 1000)
        if base == "synth-frames":
            full = synth_frames(tr + va + te, n_features=_query_int(q, "features", 1353),
                                n_classes=_query_int(q, "classes", 61),
                                class_separation=_query_float(q, "sep", 3.0), seed=seed)
        else:
            shape = (1, 28, 28) if _query_int(q, "channels", 3) == 1 else (3, 32, 32)
            full = synth_images(tr + va + te, n_classes=_query_int(q, "classes", 10),
                                image_shape=shape,
                                contrast=_query_float(q, "contrast", 0.4),
                                jitter=_query_int(q, "jitter", 2),
                                noise=_query_float(q, "noise", 0.25), seed=seed)
        full_train = full.subset(np.arange(tr + va))
        test = full.subset(np.arange(tr + va, tr + va + te), full.name + "-test")
    elif base.startswith("npz:"):
        full = load_dataset_npz(base[4:])
        tr = _query_int(q, "train", max(1, int(0.8 * len(full)) - 1))
        va = _query_int(q, "valid", max(1, len(full) - tr - max(1, len(full) // 10)))
        te = _query_int(q, "test", len(full) - tr - va)
        if tr + va + te > len(full):
            raise DataFormatError(f"requested splits exceed archive size {len(full)}")
        perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(full))
        return DataBundle(full.subset(perm[:tr]), full.subset(perm[tr:tr + va]),
                          full.subset(perm[tr + va:tr + va + te], full.name + "-test"))
    else:
        raise DataFormatError(f"unknown dataset identifier {identifier!r}")

    if "test" in q:
        test = test.subset(np.arange(_query_int(q, "test", len(test))))
    train, valid = split(full_train, SplitSpec(tr, va, seed))
    return DataBundle(train, valid, test)
