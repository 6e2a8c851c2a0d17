"""Synthetic classification task, client partitioning, and feature corruption.

The task is a Gaussian-blob classification problem: one isotropic cluster per
class, with cluster centers rescaled so their mean pairwise distance equals a
requested separation. Training data is split across clients with a
Dirichlet-distributed label skew. A configurable fraction of clients is
"low quality": their features carry additive Gaussian noise scaled to the
per-feature spread of the clean training set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .seeding import stream

logger = logging.getLogger(__name__)

QUALITY_CLEAN = 0
QUALITY_CORRUPTED = 1

_CORRUPTION_KINDS = ("gaussian_noise",)
_MAX_PARTITION_ATTEMPTS = 100


@dataclass(frozen=True)
class Sample:
    """One labeled point; quality marks whether features were corrupted."""

    x: np.ndarray
    y: int
    quality: int = QUALITY_CLEAN

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"sample features must be 1-d, got shape {x.shape}")
        object.__setattr__(self, "x", x)
        if int(self.y) < 0:
            raise ValueError(f"label must be non-negative, got {self.y}")
        object.__setattr__(self, "y", int(self.y))
        if self.quality not in (QUALITY_CLEAN, QUALITY_CORRUPTED):
            raise ValueError(f"quality must be 0 or 1, got {self.quality}")


@dataclass(frozen=True)
class LocalDataset:
    """One client's shard; quality is the shared flag of all its samples."""

    samples: tuple[Sample, ...]
    client_id: int
    quality: int = QUALITY_CLEAN

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) == 0:
            raise ValueError(f"client {self.client_id} has an empty shard")
        if any(s.quality != self.quality for s in self.samples):
            raise ValueError(
                f"client {self.client_id}: sample quality flags disagree with shard"
            )

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=np.int64)

    def features(self) -> np.ndarray:
        return np.stack([s.x for s in self.samples])


@dataclass(frozen=True)
class CorruptionSpec:
    """What to do to a low-quality client's features."""

    kind: str = "gaussian_noise"
    severity: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _CORRUPTION_KINDS:
            raise ValueError(
                f"unknown corruption kind {self.kind!r}, expected one of {_CORRUPTION_KINDS}"
            )
        if not (self.severity >= 0.0 and math.isfinite(self.severity)):
            raise ValueError(f"severity must be finite and >= 0, got {self.severity}")


@dataclass(frozen=True)
class PartitionSpec:
    """How training data is spread over clients and which clients degrade."""

    clients: int
    alpha: float
    corrupted_ratio: float
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.clients < 1:
            raise ValueError(f"need at least one client, got {self.clients}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be finite and positive, got {self.alpha}")
        if not 0.0 <= self.corrupted_ratio <= 1.0:
            raise ValueError(
                f"corrupted_ratio must be in [0, 1], got {self.corrupted_ratio}"
            )
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    def n_corrupted(self) -> int:
        # round-half-up so the count is stable against tiny float error in K*ratio
        return int(math.floor(self.clients * self.corrupted_ratio + 0.5))


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation matching `total` exactly, closest to the real quotas.

    Floor every quota, then hand out the remaining units in order of largest
    fractional part (ties broken by lower index).
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    base = np.floor(quotas).astype(np.int64)
    remainder = int(total - base.sum())
    if remainder < 0 or remainder > quotas.size:
        raise ValueError(f"quotas {quotas} inconsistent with total {total}")
    if remainder:
        fractions = quotas - base
        order = np.lexsort((np.arange(quotas.size), -fractions))
        base[order[:remainder]] += 1
    return base


# Within-class standard deviation of every feature.
CLUSTER_STD = 0.25
# The class signal lives in a small latent space that is written into the
# features twice: a "strong" block carries it at full scale and a small
# "echo" block repeats it at ECHO_SCALE. Remaining dimensions are pure
# nuisance (no class signal). Quality corruption adds noise proportional to
# each feature's overall spread, so it drowns the wide strong block while
# the narrow echo block keeps most of its signal; a model is robust to the
# corruption exactly to the extent that it learned the echo rather than
# relying on the strong block alone, mirroring how image degradation
# destroys the most prominent discriminative structure first.
ECHO_SCALE = 0.25


def latent_width(n_features: int) -> int:
    """Size of the latent class-signal space for a given feature count."""
    return max(1, n_features // 5)


def gen_task(
    n_classes: int,
    n_features: int,
    n_per_class: int,
    separation: float,
    seed: int,
) -> tuple[list[Sample], list[Sample]]:
    """Generate the clean task and return (train, test) lists.

    Each class is a Gaussian cluster with within-class std CLUSTER_STD.
    Class centers follow the strong/echo/nuisance layout described above and
    are rescaled so the mean pairwise center distance equals `separation`.
    The split is stratified 80/20 with a largest-remainder allocation, so the
    train set has exactly ceil(0.8 * n) samples and, for reasonable class
    sizes, every class appears on both sides.
    """
    if n_classes < 2:
        raise ValueError(f"need at least two classes, got {n_classes}")
    if n_features < 1:
        raise ValueError(f"need at least one feature, got {n_features}")
    if n_per_class < 5:
        raise ValueError(f"need at least five samples per class, got {n_per_class}")
    if not (separation >= 0.0 and math.isfinite(separation)):
        raise ValueError(f"separation must be finite and >= 0, got {separation}")

    width = latent_width(n_features)
    latent = stream(seed, "centers").standard_normal((n_classes, width))
    centers = np.zeros((n_classes, n_features))
    centers[:, :width] = latent
    echo = latent[:, : max(0, min(width, n_features - width))]
    centers[:, width : width + echo.shape[1]] = ECHO_SCALE * echo
    distances = [
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(n_classes)
        for j in range(i + 1, n_classes)
    ]
    mean_distance = float(np.mean(distances))
    if mean_distance > 0.0:
        centers = centers * (separation / mean_distance)
    else:  # pragma: no cover - essentially impossible for Gaussian draws
        logger.warning("degenerate identical centers; leaving them unscaled")

    total = n_classes * n_per_class
    # ceil(0.8 * total) in exact integer arithmetic; binary floats would
    # occasionally round 0.8 * total just above the true product.
    n_train = (4 * total + 4) // 5
    per_class_train = _largest_remainder(
        np.full(n_classes, 4 * n_per_class / 5), n_train
    )

    train: list[Sample] = []
    test: list[Sample] = []
    for c in range(n_classes):
        points = centers[c] + CLUSTER_STD * stream(seed, "points", c).standard_normal(
            (n_per_class, n_features)
        )
        order = stream(seed, "split", c).permutation(n_per_class)
        take = int(per_class_train[c])
        for idx in order[:take]:
            train.append(Sample(points[idx], c))
        for idx in order[take:]:
            test.append(Sample(points[idx], c))
    return train, test


def dirichlet_partition(train: Sequence[Sample], spec: PartitionSpec) -> list[LocalDataset]:
    """Split training samples into per-client shards with label skew.

    For each class, client proportions are drawn from Dirichlet(alpha * 1)
    and converted to integer counts by largest remainder. Draws leaving any
    client empty are retried a bounded number of times.
    """
    if len(train) == 0:
        raise ValueError("cannot partition an empty training set")
    labels = np.array([s.y for s in train], dtype=np.int64)
    classes = np.unique(labels)
    rng = stream(spec.seed, "dirichlet")

    counts: np.ndarray | None = None
    for _ in range(_MAX_PARTITION_ATTEMPTS):
        attempt = np.zeros((classes.size, spec.clients), dtype=np.int64)
        for row, c in enumerate(classes):
            n_c = int((labels == c).sum())
            proportions = rng.dirichlet(np.full(spec.clients, spec.alpha))
            attempt[row] = _largest_remainder(proportions * n_c, n_c)
        if np.all(attempt.sum(axis=0) > 0):
            counts = attempt
            break
    if counts is None:
        empty = np.flatnonzero(attempt.sum(axis=0) == 0).tolist()
        raise ValueError(
            f"clients {empty} received no samples after "
            f"{_MAX_PARTITION_ATTEMPTS} label-skew draws; "
            "raise alpha or shrink the client count"
        )

    assigned: list[list[Sample]] = [[] for _ in range(spec.clients)]
    for row, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        order = rng.permutation(members.size)
        shuffled = members[order]
        offset = 0
        for k in range(spec.clients):
            take = int(counts[row, k])
            for idx in shuffled[offset : offset + take]:
                assigned[k].append(train[int(idx)])
            offset += take
    return [
        LocalDataset(tuple(shard), client_id=k, quality=QUALITY_CLEAN)
        for k, shard in enumerate(assigned)
    ]


def feature_std(samples: Sequence[Sample]) -> np.ndarray:
    """Per-feature population standard deviation over a sample collection."""
    if len(samples) == 0:
        raise ValueError("cannot take the spread of an empty sample list")
    x = np.stack([s.x for s in samples])
    return x.std(axis=0)


def _noisy_copy(
    samples: Sequence[Sample],
    rng: np.random.Generator,
    scale: np.ndarray,
) -> tuple[Sample, ...]:
    noise = rng.standard_normal((len(samples), scale.size)) * scale
    return tuple(
        Sample(s.x + noise[i], s.y, QUALITY_CORRUPTED) for i, s in enumerate(samples)
    )


def assign_and_corrupt(
    shards: Sequence[LocalDataset], spec: PartitionSpec
) -> list[LocalDataset]:
    """Pick the low-quality clients and corrupt their features in place of the originals.

    The noise scale is severity times the per-feature spread of the full
    clean training set (the union of the shards). Which clients degrade is a
    seeded choice: the first round(clients * ratio) entries of a random
    permutation of client ids. Clean shards are returned untouched.
    """
    if len(shards) != spec.clients:
        raise ValueError(f"expected {spec.clients} shards, got {len(shards)}")
    n_corrupted = spec.n_corrupted()
    if n_corrupted == 0:
        return list(shards)

    all_train = [s for shard in shards for s in shard.samples]
    scale = spec.corruption.severity * feature_std(all_train)
    chosen = set(
        int(k) for k in stream(spec.seed, "corrupt-select").permutation(spec.clients)[:n_corrupted]
    )
    out: list[LocalDataset] = []
    for shard in shards:
        if shard.client_id not in chosen:
            out.append(shard)
            continue
        rng = stream(spec.seed, "corrupt-client", shard.client_id)
        out.append(
            replace(
                shard,
                samples=_noisy_copy(shard.samples, rng, scale),
                quality=QUALITY_CORRUPTED,
            )
        )
    return out


def make_corrupted_test(
    test: Sequence[Sample], spec: PartitionSpec, train_feature_std: np.ndarray
) -> list[Sample]:
    """Corrupted copy of the test set using the clean-train noise scale.

    The scale comes from the clean training set so the test-time corruption
    matches what low-quality clients saw during training. The input list is
    left untouched.
    """
    if len(test) == 0:
        raise ValueError("cannot corrupt an empty test set")
    scale = np.asarray(train_feature_std, dtype=np.float64)
    if scale.shape != test[0].x.shape:
        raise ValueError(
            f"noise scale shape {scale.shape} does not match features {test[0].x.shape}"
        )
    rng = stream(spec.seed, "corrupt-test")
    return list(_noisy_copy(test, rng, spec.corruption.severity * scale))


# --- line-format export / import -------------------------------------------
#
# One sample per line: client_id,quality,y,x_0,...,x_{d-1}
# Reals are written with repr so the round trip is bit-exact. Loose samples
# (for example a test set) use client_id -1.

LOOSE_CLIENT_ID = -1


def sample_to_line(sample: Sample, client_id: int) -> str:
    coords = ",".join(repr(float(v)) for v in sample.x)
    return f"{client_id},{sample.quality},{sample.y},{coords}"


def samples_to_lines(
    samples: Sequence[Sample], client_id: int = LOOSE_CLIENT_ID
) -> list[str]:
    return [sample_to_line(s, client_id) for s in samples]


def shards_to_lines(shards: Sequence[LocalDataset]) -> list[str]:
    lines: list[str] = []
    for shard in shards:
        lines.extend(samples_to_lines(shard.samples, shard.client_id))
    return lines


def line_to_sample(line: str) -> tuple[int, Sample]:
    parts = line.strip().split(",")
    if len(parts) < 4:
        raise ValueError(f"malformed sample line: {line!r}")
    client_id = int(parts[0])
    quality = int(parts[1])
    label = int(parts[2])
    x = np.array([float(v) for v in parts[3:]], dtype=np.float64)
    return client_id, Sample(x, label, quality)


def lines_to_shards(lines: Iterable[str]) -> tuple[list[LocalDataset], list[Sample]]:
    """Rebuild shards (and loose samples) from exported lines."""
    grouped: dict[int, list[Sample]] = {}
    for line in lines:
        if not line.strip():
            continue
        client_id, sample = line_to_sample(line)
        grouped.setdefault(client_id, []).append(sample)
    loose = grouped.pop(LOOSE_CLIENT_ID, [])
    shards = [
        LocalDataset(tuple(samples), client_id=cid, quality=samples[0].quality)
        for cid, samples in sorted(grouped.items())
    ]
    return shards, loose


def write_samples_file(
    path: str, shards: Sequence[LocalDataset], loose: Sequence[Sample] = ()
) -> None:
    lines = shards_to_lines(shards) + samples_to_lines(loose)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_samples_file(path: str) -> tuple[list[LocalDataset], list[Sample]]:
    with open(path, "r", encoding="utf-8") as fh:
        return lines_to_shards(fh)
