"""Datasets and the non-IID, class-imbalanced client partition."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidConfigError, PartitionInfeasibleError
from .nn import Batch

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise InvalidConfigError(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} do not line up"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidConfigError(f"labels outside [0, {self.class_count})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> Batch:
        return Batch(self.inputs[indices], self.labels[indices])

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)


@dataclass(frozen=True)
class Partition:
    client_indices: tuple[np.ndarray, ...]

    @property
    def client_count(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.client_indices]


def _read_header(raw: bytes, path: Path, fields: list[str]) -> list[int]:
    need = 4 * len(fields)
    if len(raw) < need:
        missing = fields[len(raw) // 4]
        raise FormatError(f"{path}: truncated header, missing '{missing}'", field=missing)
    return list(struct.unpack(f">{len(fields)}I", raw[:need]))


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    magic, count, rows, cols = _read_header(raw, path, ["magic", "count", "rows", "cols"])
    if magic != IMAGES_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}", "magic")
    body = raw[16:]
    expected = count * rows * cols
    if len(body) < expected:
        raise FormatError(
            f"{path}: truncated pixel data, header 'count' says {count} images of "
            f"{rows}x{cols} ({expected} bytes) but {len(body)} bytes follow",
            "count",
        )
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    magic, count = _read_header(raw, path, ["magic", "count"])
    if magic != LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}", "magic")
    body = raw[8:]
    if len(body) < count:
        raise FormatError(
            f"{path}: truncated label data, header 'count' says {count} but {len(body)} bytes follow",
            "count",
        )
    return np.frombuffer(body, dtype=np.uint8, count=count).copy()


def load_mnist(images_path, labels_path) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}",
            "count",
        )
    if labels.size and labels.max() > 9:
        raise FormatError(f"{labels_path}: label value {labels.max()} outside 0..9", "labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), 10)


def class_means(class_count: int, dim: int, low: float = 0.0, high: float = 0.8) -> np.ndarray:
    """One vertex of the {low, high}^dim lattice per class.

    With ``dim >= class_count`` class c switches on its own block of
    ``dim // class_count`` coordinates. Otherwise coordinate j carries bit
    (j mod nbits) of c. Either way distinct classes sit at least
    ``high - low`` apart.
    """
    if dim >= class_count:
        block = dim // class_count
        code = np.zeros((class_count, dim))
        for c in range(class_count):
            code[c, c * block:(c + 1) * block] = 1.0
    else:
        nbits = max(1, math.ceil(math.log2(class_count)))
        if dim < nbits:
            raise InvalidConfigError(
                f"dim={dim} cannot separate {class_count} classes (need >= {nbits})"
            )
        code = ((np.arange(class_count)[:, None] >> (np.arange(dim)[None, :] % nbits)) & 1).astype(
            np.float64
        )
    return low + (high - low) * code


def gen_synthetic(class_count: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs clipped to [0, 1], ordered by class."""
    if class_count < 2:
        raise InvalidConfigError(f"class_count must be >= 2, got {class_count}")
    if per_class < 1:
        raise InvalidConfigError(f"per_class must be >= 1, got {per_class}")
    if not spread > 0:
        raise InvalidConfigError(f"spread must be > 0, got {spread}")
    means = class_means(class_count, dim)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, spread, size=(class_count, per_class, dim))
    inputs = np.clip(means[:, None, :] + noise, 0.0, 1.0).reshape(-1, dim)
    labels = np.repeat(np.arange(class_count), per_class)
    return Dataset(inputs, labels, class_count)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise InvalidConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(len(dataset) * test_fraction)))
    test_ix, train_ix = np.sort(order[:n_test]), np.sort(order[n_test:])
    pick = lambda ix: Dataset(dataset.inputs[ix], dataset.labels[ix], dataset.class_count)
    return pick(train_ix), pick(test_ix)


def partition_noniid(
    dataset: Dataset,
    client_count: int,
    shard_clients: int,
    shard_size: int | None,
    majority_class: int,
    seed: int,
) -> Partition:
    """Shard clients first, then single-class "majority" clients.

    Every sample of ``majority_class`` is reserved for the last
    ``client_count - shard_clients`` clients and dealt out as evenly as
    possible. The remaining samples are sorted by label and cut into
    contiguous shards; shard i goes to client i. Leftovers stay unassigned.
    ``shard_size=None`` uses the largest size that fits; an oversized request
    is clamped with a warning.
    """
    if client_count < 1 or not 0 <= shard_clients <= client_count:
        raise InvalidConfigError(
            f"need 0 <= shard_clients <= client_count, got {shard_clients} and {client_count}"
        )
    if not 0 <= majority_class < dataset.class_count:
        raise InvalidConfigError(f"majority_class {majority_class} outside label range")
    rng = np.random.default_rng(seed)
    n_majority_clients = client_count - shard_clients

    labels = dataset.labels
    if n_majority_clients:
        reserved = np.flatnonzero(labels == majority_class)
        rest = np.flatnonzero(labels != majority_class)
    else:
        reserved = np.empty(0, dtype=np.int64)
        rest = np.arange(len(dataset))
    if len(reserved) < n_majority_clients:
        raise PartitionInfeasibleError(
            f"{len(reserved)} samples of class {majority_class} cannot cover "
            f"{n_majority_clients} majority clients"
        )

    clients: list[np.ndarray] = []
    if shard_clients:
        capacity = len(rest) // shard_clients
        if capacity == 0:
            raise PartitionInfeasibleError(
                f"{len(rest)} non-majority samples cannot fill {shard_clients} shards"
            )
        if shard_size is None:
            shard_size = capacity
        elif shard_size < 1:
            raise InvalidConfigError(f"shard_size must be >= 1, got {shard_size}")
        elif shard_size > capacity:
            logger.warning(
                "shard_size %d x %d shards exceeds %d non-majority samples; clamping to %d",
                shard_size, shard_clients, len(rest), capacity,
            )
            shard_size = capacity
        # shuffle first so the stable label sort picks a random subset within each class
        rest = rest[rng.permutation(len(rest))]
        rest = rest[np.argsort(labels[rest], kind="stable")]
        for i in range(shard_clients):
            clients.append(np.sort(rest[i * shard_size:(i + 1) * shard_size]))

    reserved = reserved[rng.permutation(len(reserved))]
    for chunk in np.array_split(reserved, n_majority_clients) if n_majority_clients else []:
        clients.append(np.sort(chunk))
    return Partition(tuple(clients))
