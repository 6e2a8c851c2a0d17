"""Deterministic derivation of independent random streams.

Every random decision in the simulator flows from one master seed. Distinct
consumers (data generation, partitioning, corruption, init, per-round batch
shuffles, ...) each get their own stream, derived by folding descriptive tags
into a ``numpy.random.SeedSequence``. Two consequences:

* the same (seed, tags) always yields the same stream, on any platform and
  regardless of how many worker threads run concurrently;
* adding a new consumer with a fresh tag never perturbs existing streams.

String tags are hashed with SHA-256 so the mapping does not depend on the
interpreter's randomized ``hash()``.
"""

from __future__ import annotations

import hashlib

import numpy as np

Tag = int | str


def _tag_entropy(tag: Tag) -> int:
    if isinstance(tag, str):
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    value = int(tag)
    if value < 0:
        raise ValueError(f"stream tags must be non-negative integers, got {tag!r}")
    return value


def _entropy(seed: int, tags: tuple[Tag, ...]) -> list[int]:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return [int(seed)] + [_tag_entropy(t) for t in tags]


def stream(seed: int, *tags: Tag) -> np.random.Generator:
    """Return the RNG for the stream identified by (seed, *tags)."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, tags)))


def derive_seed(seed: int, *tags: Tag) -> int:
    """Collapse a stream identity into a plain non-negative integer seed.

    Used when a downstream component wants a single ``seed`` field rather
    than a generator (for example a partition spec that must be hashable).
    """
    sequence = np.random.SeedSequence(_entropy(seed, tags))
    return int(sequence.generate_state(1, np.uint32)[0])
