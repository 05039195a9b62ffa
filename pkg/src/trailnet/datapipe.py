"""Image preprocessing, splits, batching and dataset directory I/O."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import LABELS
from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)

BATCH_SIZE = 128


def resize_400_to_100(image: np.ndarray) -> np.ndarray:
    """4x4 block mean per channel, rounded half up."""
    image = np.asarray(image)
    if image.shape != (400, 400, 3):
        raise InputError(f"resize expects a 400x400x3 image, got {image.shape}")
    sums = image.reshape(100, 4, 100, 4, 3).sum(axis=(1, 3), dtype=np.uint32)
    return ((sums + 8) // 16).astype(np.uint8)


def normalize(image: np.ndarray) -> np.ndarray:
    """Per-image, per-channel min-max scaling to [0, 1]; constant channels -> 0."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3:
        raise InputError(f"normalize expects an (H, W, C) image, got {img.shape}")
    lo = img.min(axis=(0, 1))
    span = img.max(axis=(0, 1)) - lo
    safe = np.where(span > 0, span, 1)
    out = (img - lo) / safe
    out[..., span == 0] = 0
    return out


def normalize_batch(images: np.ndarray) -> np.ndarray:
    imgs = np.asarray(images, dtype=np.float32)
    lo = imgs.min(axis=(1, 2), keepdims=True)
    span = imgs.max(axis=(1, 2), keepdims=True) - lo
    out = (imgs - lo) / np.where(span > 0, span, 1)
    out *= span > 0
    return out


@dataclass
class Dataset:
    images: np.ndarray  # (N, 100, 100, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "all"
    source: str = ""
    world_seeds: set[int] = field(default_factory=set)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], split, self.source, set(self.world_seeds))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=3)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.64
    val: float = 0.16
    test: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1) > 1e-9 or min(self.train, self.val, self.test) < 0:
            raise ConfigurationError(f"split fractions must be non-negative and sum to 1: {self}")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Floor the train and validation shares, remainder to test."""
    n_train = math.floor(n * spec.train + 1e-9)
    n_val = math.floor(n * spec.val + 1e-9)
    return n_train, n_val, n - n_train - n_val


def stratified_order(labels: np.ndarray, seed) -> np.ndarray:
    """Seeded shuffle that interleaves classes evenly.

    Each sample's key is its shuffled rank within its class scaled to [0, 1),
    so any contiguous cut of the result keeps the whole-set class shares.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labels))
    key = np.empty(len(labels))
    for c in np.unique(labels):
        members = perm[labels[perm] == c]
        key[members] = (np.arange(len(members)) + rng.random()) / len(members)
    return np.lexsort((perm.argsort(), key))


def split(data: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    n = len(data)
    if n < 10:
        raise InputError(f"need at least 10 samples to split, got {n}")
    order = stratified_order(data.labels, [spec.seed, 0x5917])
    a, b, _ = split_sizes(n, spec)
    return (
        data.subset(order[:a], "train"),
        data.subset(order[a : a + b], "val"),
        data.subset(order[a + b :], "test"),
    )


def batches(data: Dataset, size: int = BATCH_SIZE, epoch_seed: int = 0) -> Iterator[np.ndarray]:
    """Index arrays for one epoch; reshuffled per seed, final short batch kept."""
    if len(data) == 0:
        raise InputError("cannot batch an empty dataset")
    if size < 1:
        raise ConfigurationError(f"batch size must be positive, got {size}")
    order = np.random.default_rng(epoch_seed).permutation(len(data))
    for i in range(0, len(order), size):
        yield order[i : i + size]


def read_manifest(root) -> list[dict]:
    path = Path(root) / "manifest.tsv"
    if not path.exists():
        raise InputError(f"no manifest.tsv in {root}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _scan(root: Path) -> list[tuple[str, int, int | None]]:
    """(relative path, label, world seed) for every image under root."""
    if (root / "manifest.tsv").exists():
        rows = read_manifest(root)
        return [(r["path"], LABELS.index(r["label"]), int(r["world_seed"])) for r in rows]
    entries = []
    for label, name in enumerate(LABELS):
        d = root / name
        if not d.is_dir():
            raise InputError(f"missing class directory {d}")
        entries += [(f"{name}/{p.name}", label, None) for p in sorted(d.glob("*.ppm"))]
    return entries


def _load_images(root: Path, rels: list[str]) -> np.ndarray:
    from .scenegen.ppm import read_ppm

    out = np.empty((len(rels), 100, 100, 3), dtype=np.uint8)
    for i, rel in enumerate(rels):
        img = read_ppm(root / rel)
        if img.shape == (400, 400, 3):
            img = resize_400_to_100(img)
        if img.shape != (100, 100, 3):
            raise InputError(f"{rel}: expected a 100x100 or 400x400 RGB image, got {img.shape}")
        out[i] = img
    return out


def load_dataset(root) -> Dataset:
    """Load every image of a dataset directory, normalized."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset directory {root} does not exist")
    entries = _scan(root)
    if not entries:
        raise InputError(f"no images under {root}")
    images = normalize_batch(_load_images(root, [e[0] for e in entries]))
    labels = np.array([e[1] for e in entries], dtype=np.int64)
    seeds = {e[2] for e in entries if e[2] is not None}
    return Dataset(images, labels, "all", str(root), seeds)


def load_real_style_testset(directory, per_class: int = 4000, seed: int = 0) -> Dataset:
    """Class-balanced sample from a dataset directory (generated or external).

    Every class gets the same count: per_class, capped by the scarcest class.
    """
    root = Path(directory)
    for name in LABELS:
        if not (root / name).is_dir():
            raise InputError(f"missing class directory {root / name}")
    entries = _scan(root)
    by_class = [[e for e in entries if e[1] == c] for c in range(3)]
    available = min(len(c) for c in by_class)
    take = min(per_class, available)
    if take < per_class:
        warnings.warn(
            f"requested {per_class} images per class but only {available} available; using {take}",
            stacklevel=2,
        )
    if take == 0:
        raise InputError(f"no images in at least one class under {root}")
    rng = np.random.default_rng([seed, 0xBA1])
    chosen = []
    for c in range(3):
        pick = rng.choice(len(by_class[c]), size=take, replace=False)
        chosen += [by_class[c][i] for i in sorted(pick)]
    images = normalize_batch(_load_images(root, [e[0] for e in chosen]))
    labels = np.array([e[1] for e in chosen], dtype=np.int64)
    seeds = {e[2] for e in chosen if e[2] is not None}
    return Dataset(images, labels, "shifted-test", str(root), seeds)


def from_samples(samples, split_tag: str = "all") -> Dataset:
    """Dataset straight from in-memory LabeledSamples."""
    raw = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return Dataset(normalize_batch(raw), labels, split_tag, "memory", {s.world_seed for s in samples})
