"""Datasets: IDX (MNIST) parsing, permuted-pixel tasks and synthetic 2-D clouds."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Batch

DATA_ENV = "GEONET_DATA"

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IDXError(ValueError):
    pass


class BadMagic(IDXError):
    pass


class TruncatedPayload(IDXError):
    pass


class CountMismatch(IDXError):
    pass


@dataclass(frozen=True)
class TaskDataset:
    """A train/test pair.  ``scale``/``shift`` record the affine map applied at load."""

    train: Batch
    test: Batch
    name: str = "task"
    scale: float = 1.0
    shift: float = 0.0
    permutation: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.train.inputs.shape[1] != self.test.inputs.shape[1]:
            raise ValueError("train and test feature dimensions differ")

    @property
    def n_features(self) -> int:
        return self.train.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return int(max(self.train.labels.max(), self.test.labels.max())) + 1


def _read_header(buf: bytes, magic: int, ndim: int, path) -> tuple:
    if len(buf) < 4 + 4 * ndim:
        raise TruncatedPayload(f"{path}: truncated header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise BadMagic(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack(">" + "I" * ndim, buf[4:4 + 4 * ndim])


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 image array of shape (N, rows*cols)."""
    buf = Path(path).read_bytes()
    n, rows, cols = _read_header(buf, IMAGES_MAGIC, 3, path)
    need = n * rows * cols
    payload = buf[16:]
    if len(payload) < need:
        raise TruncatedPayload(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,) = _read_header(buf, LABELS_MAGIC, 1, path)
    payload = buf[8:]
    if len(payload) < n:
        raise TruncatedPayload(f"{path}: truncated payload ({len(payload)} of {n} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=n)


def load_idx(images_path, labels_path) -> Batch:
    """Parse an IDX image/label pair; pixels are divided by 255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatch(
            f"count mismatch: {len(images)} images vs {len(labels)} labels")
    return Batch(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path,
              shape: tuple = None):
    """Write uint8 images (N, rows*cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n = images.shape[0]
    if shape is None:
        side = int(round(np.sqrt(images.shape[1])))
        shape = (side, images.shape[1] // side) if side * side == images.shape[1] else (1, images.shape[1])
    Path(images_path).write_bytes(
        struct.pack(">IIII", IMAGES_MAGIC, n, *shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def mnist_dir(path=None) -> Path:
    """Resolve the MNIST directory: explicit path, then $GEONET_DATA/mnist, then $GEONET_DATA."""
    if path is not None:
        return Path(path)
    root = os.environ.get(DATA_ENV)
    if root is None:
        raise FileNotFoundError(f"no MNIST directory given and ${DATA_ENV} is unset")
    root = Path(root)
    return root / "mnist" if (root / "mnist").is_dir() else root


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem} not found in {directory}")


def load_mnist(path=None, n_train: int = 10_000, n_test: int = 2_000, seed: int = 0,
               name: str = "mnist") -> TaskDataset:
    """MNIST as a TaskDataset; ``n_train``/``n_test`` = None keeps the full split.

    Subsets are drawn without replacement by a seeded generator and kept in
    file order, so the same arguments always give identical arrays.
    """
    d = mnist_dir(path)
    splits = {}
    rng = np.random.default_rng(seed)
    for split, limit in (("train", n_train), ("test", n_test)):
        img, lab = MNIST_FILES[split]
        b = load_idx(_find(d, img), _find(d, lab))
        if limit is not None and limit < len(b):
            b = b.subset(np.sort(rng.choice(len(b), size=limit, replace=False)))
        splits[split] = b
    return TaskDataset(splits["train"], splits["test"], name=name, scale=1 / 255.0)


def permutation_for(n_features: int, seed: int) -> np.ndarray:
    """Seed 0 is the identity; any other seed gives a fixed random permutation."""
    if seed == 0:
        return np.arange(n_features)
    return np.random.default_rng([seed, 0x5EED]).permutation(n_features)


def permute_features(batch: Batch, perm: np.ndarray) -> Batch:
    return Batch(batch.inputs[:, perm], batch.labels)


def make_permuted_task(base: TaskDataset, seed: int) -> TaskDataset:
    perm = permutation_for(base.n_features, seed)
    return TaskDataset(permute_features(base.train, perm), permute_features(base.test, perm),
                       name=f"{base.name}-perm{seed}", scale=base.scale, shift=base.shift,
                       permutation=perm)


def _split(X, y, rng) -> tuple[Batch, Batch]:
    order = rng.permutation(len(y))
    n_train = int(round(0.8 * len(y)))
    tr, te = order[:n_train], order[n_train:]
    if len(te) == 0:
        te = tr[-1:]
    return Batch(X[tr], y[tr]), Batch(X[te], y[te])


def make_synthetic(kind: str, n_per_class: int, classes: int, seed: int,
                   spread: float = 0.5) -> TaskDataset:
    """2-D labelled point clouds with an 80/20 train/test split.

    ``gaussians`` places class centres evenly on a circle of radius 3*sqrt(2)
    (two classes sit at +(3, 3) and -(3, 3)); ``spread`` is the per-axis std.
    ``spirals`` draws interleaved arms of one full turn with noise ``spread``/5.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    X, y = [], []
    for c in range(classes):
        if kind == "gaussians":
            ang = np.pi / 4 + 2 * np.pi * c / classes
            centre = 3 * np.sqrt(2) * np.array([np.cos(ang), np.sin(ang)])
            pts = centre + spread * rng.standard_normal((n_per_class, 2))
        elif kind == "spirals":
            t = np.linspace(0.0, 1.0, n_per_class)
            r = 0.2 + 2.8 * t
            th = 2 * np.pi * t + 2 * np.pi * c / classes
            pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
            pts += (spread / 5) * rng.standard_normal(pts.shape)
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        X.append(pts)
        y.append(np.full(n_per_class, c))
    train, test = _split(np.concatenate(X), np.concatenate(y), rng)
    return TaskDataset(train, test, name=f"{kind}{classes}")
