"""Datasets: IDX ingestion, synthetic generators, and client-shard partitioning.

Partitioning supports balanced, imbalanced (ratio vector), and non-IID
(classes-per-client) modes; every mode is seeded, disjoint, and covering.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ShapeError, ConfigError
from .seeds import rng as _rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Canonical 6-client imbalanced split (1%..38%); other client counts fall back
# to the half-bell construction in default_imbalanced_ratios.
CANONICAL_RATIOS_6 = (0.01, 0.03, 0.09, 0.19, 0.30, 0.38)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, *sample_shape) float64
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"inputs count {self.inputs.shape[0]} != labels count {self.labels.shape[0]}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ShapeError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count)


@dataclass(frozen=True)
class PartitionSpec:
    mode: str  # balanced | imbalanced | noniid
    client_count: int
    seed: int
    ratios: Optional[tuple[float, ...]] = None  # imbalanced
    classes_per_client: Optional[int] = None  # noniid

    def __post_init__(self):
        if self.mode not in ("balanced", "imbalanced", "noniid"):
            raise ConfigError(f"partition.mode: unknown mode {self.mode!r}")
        if self.client_count < 1:
            raise ConfigError("partition.client_count: must be >= 1")
        if self.ratios is not None:
            r = tuple(float(x) for x in self.ratios)
            if len(r) != self.client_count:
                raise ConfigError(
                    f"partition.ratios: length {len(r)} != client_count {self.client_count}"
                )
            if any(x <= 0 for x in r):
                raise ConfigError("partition.ratios: all ratios must be > 0")
            if abs(sum(r) - 1.0) > 1e-9:
                raise ConfigError(f"partition.ratios: must sum to 1, got {sum(r)}")
            object.__setattr__(self, "ratios", r)
        if self.mode == "noniid" and (self.classes_per_client is None or self.classes_per_client < 1):
            raise ConfigError("partition.classes_per_client: required for noniid mode")


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray  # int64 indices into the parent dataset

    def __len__(self):
        return self.indices.shape[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    img_raw = open(images_path, "rb").read()
    lbl_raw = open(labels_path, "rb").read()
    if len(img_raw) < 16:
        raise FormatError(f"{images_path}: too short for an IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic {magic:#010x}")
    if len(img_raw) != 16 + count * rows * cols:
        raise FormatError(f"{images_path}: payload size mismatch")
    if len(lbl_raw) < 8:
        raise FormatError(f"{labels_path}: too short for an IDX label header")
    lmagic, lcount = struct.unpack(">II", lbl_raw[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic {lmagic:#010x}")
    if len(lbl_raw) != 8 + lcount:
        raise FormatError(f"{labels_path}: payload size mismatch")
    if count != lcount:
        raise FormatError(f"image count {count} != label count {lcount}")
    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    inputs = pixels.reshape(count, 1, rows, cols)
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, offset=8).astype(np.int64)
    classes = int(labels.max()) + 1 if count else 1
    return Dataset(inputs, labels, classes)


def _smooth_field(gen: np.random.Generator, shape: tuple[int, ...], grid: int = 4) -> np.ndarray:
    """A low-frequency random field: coarse Gaussian grid, bilinear upsample."""
    if len(shape) == 3:
        _, h, w = shape
        coarse = gen.normal(size=(shape[0], grid, grid))
        ys = np.linspace(0, grid - 1, h)
        xs = np.linspace(0, grid - 1, w)
        y0 = np.clip(ys.astype(int), 0, grid - 2)
        x0 = np.clip(xs.astype(int), 0, grid - 2)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        c00 = coarse[:, y0][:, :, x0]
        c01 = coarse[:, y0][:, :, x0 + 1]
        c10 = coarse[:, y0 + 1][:, :, x0]
        c11 = coarse[:, y0 + 1][:, :, x0 + 1]
        return c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx + c10 * fy * (1 - fx) + c11 * fy * fx
    # non-image shapes fall back to white noise means
    return gen.normal(size=shape)


def synth_classification(
    samples: int,
    classes: int,
    sample_shape: Sequence[int],
    seed: int,
    mean_scale: float = 1.0,
) -> Dataset:
    """Class-conditional Gaussian blobs with unit-variance noise.

    Labels are assigned round-robin, so class counts differ by at most one.
    After generation the whole dataset is min-max mapped to [0, 1] (metrics
    and the reconstruction pipeline assume unit-range data). Class means are
    smooth random fields for image-shaped samples, which keeps the blobs
    learnable by small convolutional models.
    """
    if samples < classes:
        raise ConfigError(f"dataset.samples: need at least one sample per class ({classes})")
    shape = tuple(int(d) for d in sample_shape)
    gen = _rng(seed, "synth-cls")
    means = np.stack([mean_scale * _smooth_field(gen, shape) for _ in range(classes)])
    labels = np.arange(samples, dtype=np.int64) % classes
    noise = gen.normal(size=(samples, *shape))
    inputs = means[labels] + noise
    lo, hi = inputs.min(), inputs.max()
    inputs = (inputs - lo) / (hi - lo)
    return Dataset(inputs, labels, classes)


def synth_series(
    samples: int,
    classes: int,
    length: int,
    seed: int,
    noise: float = 0.05,
) -> Dataset:
    """Per-class 1D waveforms: a class-specific sinusoid plus a class-specific
    pulse, with additive Gaussian noise. Sample shape is (1, length), values
    clipped to [0, 1]."""
    if length < 8:
        raise ConfigError(f"dataset.length: must be >= 8, got {length}")
    if samples < classes:
        raise ConfigError(f"dataset.samples: need at least one sample per class ({classes})")
    gen = _rng(seed, "synth-series")
    t = np.arange(length) / length
    freqs = 1.0 + np.arange(classes)
    phases = gen.uniform(0, 2 * np.pi, size=classes)
    centers = gen.uniform(0.15, 0.85, size=classes)
    widths = gen.uniform(0.02, 0.08, size=classes)
    templates = np.empty((classes, length))
    for c in range(classes):
        wave = 0.25 * np.sin(2 * np.pi * freqs[c] * t + phases[c])
        pulse = 0.35 * np.exp(-0.5 * ((t - centers[c]) / widths[c]) ** 2)
        templates[c] = 0.45 + wave + pulse
    labels = np.arange(samples, dtype=np.int64) % classes
    inputs = templates[labels] + noise * gen.normal(size=(samples, length))
    inputs = np.clip(inputs, 0.0, 1.0).reshape(samples, 1, length)
    return Dataset(inputs, labels, classes)


def default_imbalanced_ratios(client_count: int) -> tuple[float, ...]:
    """Half-bell ratios: standard normal density at N points descending from
    2.0 to 0.0, normalized; later clients receive more data."""
    if client_count < 2:
        raise ConfigError("partition.client_count: imbalanced ratios need >= 2 clients")
    xs = np.linspace(2.0, 0.0, client_count)
    dens = np.exp(-0.5 * xs * xs)
    dens /= dens.sum()
    return tuple(float(r) for r in dens)


def _largest_remainder(targets: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of `total` by fractional targets."""
    floors = np.floor(targets).astype(np.int64)
    short = total - floors.sum()
    remainders = targets - floors
    order = np.lexsort((np.arange(len(targets)), -remainders))
    counts = floors.copy()
    counts[order[:short]] += 1
    return counts


def _stratified_counts(class_sizes: np.ndarray, shard_sizes: np.ndarray) -> np.ndarray:
    """Per (class, client) counts: class rows sum to the class size, client
    columns sum to the shard size. Controlled rounding: floors first, then
    per-class remainders go to the clients with the largest fractional parts
    that still have shard capacity."""
    total = class_sizes.sum()
    n_classes, n_clients = len(class_sizes), len(shard_sizes)
    counts = np.zeros((n_classes, n_clients), dtype=np.int64)
    capacity = shard_sizes.astype(np.int64).copy()
    for c in range(n_classes):
        targets = class_sizes[c] * shard_sizes / total
        floors = np.minimum(np.floor(targets).astype(np.int64), capacity)
        counts[c] = floors
        capacity -= floors
        short = class_sizes[c] - floors.sum()
        if short:
            frac = targets - np.floor(targets)
            # prefer large fractional part, then spare capacity, then index
            order = np.lexsort((np.arange(n_clients), -capacity, -frac))
            for k in order:
                if short == 0:
                    break
                if capacity[k] > 0:
                    counts[c, k] += 1
                    capacity[k] -= 1
                    short -= 1
        # every preferred client may have been full; sweep remaining capacity
        while short > 0:
            k = int(np.argmax(capacity))
            counts[c, k] += 1
            capacity[k] -= 1
            short -= 1
    return counts


def partition(dataset: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split a dataset into disjoint, covering client shards."""
    n = len(dataset)
    if n == 0:
        raise ConfigError("partition: dataset is empty")
    if spec.client_count > n:
        raise ConfigError(
            f"partition.client_count: {spec.client_count} clients exceed {n} samples"
        )
    gen = _rng(spec.seed, "partition", spec.mode)
    per_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.class_count)]
    for c in range(dataset.class_count):
        per_class[c] = per_class[c][gen.permutation(len(per_class[c]))]

    if spec.mode == "noniid":
        return _partition_noniid(dataset, spec, per_class, gen)

    if spec.mode == "balanced":
        ratios = np.full(spec.client_count, 1.0 / spec.client_count)
    else:
        if spec.ratios is not None:
            ratios = np.asarray(spec.ratios)
        elif spec.client_count == 6:
            ratios = np.asarray(CANONICAL_RATIOS_6)
        else:
            ratios = np.asarray(default_imbalanced_ratios(spec.client_count))
    shard_sizes = _largest_remainder(ratios * n, n)
    class_sizes = np.array([len(ix) for ix in per_class], dtype=np.int64)
    counts = _stratified_counts(class_sizes, shard_sizes)
    buckets: list[list[np.ndarray]] = [[] for _ in range(spec.client_count)]
    for c, idx in enumerate(per_class):
        offset = 0
        for k in range(spec.client_count):
            take = counts[c, k]
            buckets[k].append(idx[offset : offset + take])
            offset += take
    shards = []
    for k in range(spec.client_count):
        merged = np.sort(np.concatenate(buckets[k])) if buckets[k] else np.empty(0, np.int64)
        shards.append(ClientShard(k, merged.astype(np.int64)))
    return shards


def _partition_noniid(dataset, spec, per_class, gen):
    n_classes = dataset.class_count
    cpc = spec.classes_per_client
    if cpc > n_classes:
        raise ConfigError(
            f"partition.classes_per_client: {cpc} exceeds class count {n_classes}"
        )
    perm = gen.permutation(n_classes)
    assigned: dict[int, list[int]] = {c: [] for c in range(n_classes)}
    client_classes = []
    for k in range(spec.client_count):
        picks = [int(perm[(k * cpc + j) % n_classes]) for j in range(cpc)]
        client_classes.append(picks)
        for c in picks:
            assigned[c].append(k)
    buckets: list[list[np.ndarray]] = [[] for _ in range(spec.client_count)]
    for c in range(n_classes):
        holders = assigned[c]
        if not holders:
            continue  # uncovered class; surfaced by summarize_shards
        pieces = np.array_split(per_class[c], len(holders))
        for k, piece in zip(holders, pieces):
            buckets[k].append(piece)
    shards = []
    for k in range(spec.client_count):
        merged = np.sort(np.concatenate(buckets[k])) if buckets[k] else np.empty(0, np.int64)
        shards.append(ClientShard(k, merged.astype(np.int64)))
    return shards


def summarize_shards(dataset: Dataset, shards: list[ClientShard]) -> dict:
    """Per-client counts and class histograms, plus coverage warnings."""
    histograms = {}
    covered = np.zeros(dataset.class_count, dtype=bool)
    for shard in shards:
        hist = np.bincount(dataset.labels[shard.indices], minlength=dataset.class_count)
        covered |= hist > 0
        histograms[shard.client_id] = hist.tolist()
    missing = [int(c) for c in np.flatnonzero(~covered)]
    return {
        "clients": len(shards),
        "total_samples": int(sum(len(s) for s in shards)),
        "counts": {s.client_id: int(len(s)) for s in shards},
        "class_histograms": histograms,
        "uncovered_classes": missing,
    }
