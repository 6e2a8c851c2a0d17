"""Evaluation metrics and loss-landscape slices.

Balanced accuracy is the mean of per-class recalls, so a majority class
cannot mask minority-class failure. AUC is computed one-vs-rest per class
with the rank formulation (midranks for ties) and averaged over classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import nn
from .data import Sample
from .nn import ClassPriors, MlpArchitecture


@dataclass(frozen=True)
class EvalMetrics:
    """Accuracy/AUC on the clean and corrupted test sets plus their means."""

    acc_clean: float
    auc_clean: float
    acc_corrupted: float
    auc_corrupted: float

    @property
    def acc_avg(self) -> float:
        return 0.5 * (self.acc_clean + self.acc_corrupted)

    @property
    def auc_avg(self) -> float:
        return 0.5 * (self.auc_clean + self.auc_corrupted)


def balanced_accuracy(
    predictions: Sequence[int], labels: Sequence[int], n_classes: int
) -> float:
    """Mean per-class recall; every class must appear among the labels."""
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError(
            f"predictions and labels must be equal-length 1-d vectors, "
            f"got {preds.shape} and {labs.shape}"
        )
    recalls = []
    for c in range(n_classes):
        mask = labs == c
        if not mask.any():
            raise ValueError(f"class {c} has no examples among the labels")
        recalls.append(float((preds[mask] == c).mean()))
    return float(np.mean(recalls))


def macro_auc_ovr(
    scores: np.ndarray, labels: Sequence[int], n_classes: int
) -> float:
    """One-vs-rest AUC per class via the rank formulation, averaged.

    For class c, with P positives and N negatives, AUC equals
    (sum of positive midranks - P(P+1)/2) / (P*N), which handles tied
    scores by splitting credit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape != (labs.size, n_classes):
        raise ValueError(
            f"scores must have shape (n, {n_classes}), got {scores.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    aucs = []
    for c in range(n_classes):
        positive = labs == c
        n_pos = int(positive.sum())
        n_neg = labs.size - n_pos
        if n_pos == 0 or n_neg == 0:
            raise ValueError(f"class {c} needs both positives and negatives")
        ranks = rankdata(scores[:, c])
        auc = (float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0) / (
            n_pos * n_neg
        )
        aucs.append(auc)
    return float(np.mean(aucs))


def _score_set(
    arch: MlpArchitecture, params: np.ndarray, samples: Sequence[Sample]
) -> tuple[np.ndarray, np.ndarray]:
    x, y = nn.stack_batch(samples)
    return nn.forward_batch(arch, params, x), y


def evaluate(
    arch: MlpArchitecture,
    params: np.ndarray,
    clean_test: Sequence[Sample],
    corrupted_test: Sequence[Sample],
) -> EvalMetrics:
    """Balanced accuracy and macro AUC on both test sets, from raw logits."""
    if len(clean_test) == 0 or len(corrupted_test) == 0:
        raise ValueError("both test sets must be non-empty")
    n_classes = arch.n_classes
    out: dict[str, float] = {}
    for tag, samples in (("clean", clean_test), ("corrupted", corrupted_test)):
        logits, labels = _score_set(arch, params, samples)
        preds = np.argmax(logits, axis=1)
        out[f"acc_{tag}"] = balanced_accuracy(preds, labels, n_classes)
        out[f"auc_{tag}"] = macro_auc_ovr(logits, labels, n_classes)
    return EvalMetrics(**out)


# --- loss-landscape slices ----------------------------------------------------


@dataclass(frozen=True)
class LandscapeSlice:
    """Loss over a 2-d parameter plane around a center point.

    ``offsets`` holds the per-axis displacements (same for x and y);
    ``losses[i, j]`` is the loss at center + offsets[i] * u1 + offsets[j] * u2
    for the orthonormal in-plane directions (u1, u2).
    """

    offsets: np.ndarray
    losses: np.ndarray
    u1: np.ndarray
    u2: np.ndarray


def orthonormal_plane(d1: np.ndarray, d2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt the two directions; error if they are (near) parallel."""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.shape != d2.shape or d1.ndim != 1:
        raise ValueError("directions must be 1-d vectors of equal length")
    n1 = float(np.linalg.norm(d1))
    if n1 <= 0.0:
        raise ValueError("first direction has zero norm")
    u1 = d1 / n1
    residual = d2 - (d2 @ u1) * u1
    n2 = float(np.linalg.norm(residual))
    if n2 <= 1e-12 * max(1.0, float(np.linalg.norm(d2))):
        raise ValueError("directions are parallel; the plane is degenerate")
    return u1, residual / n2


def landscape_on(
    loss_fn: Callable[[np.ndarray], float],
    center: np.ndarray,
    d1: np.ndarray,
    d2: np.ndarray,
    extent: float,
    steps: int,
) -> LandscapeSlice:
    """Evaluate a scalar loss on a (2*extent) x (2*extent) grid in a plane.

    ``steps`` must be odd so the exact center is a grid point.
    """
    if not (extent > 0.0 and np.isfinite(extent)):
        raise ValueError(f"extent must be finite and positive, got {extent}")
    if steps < 3 or steps % 2 == 0:
        raise ValueError(f"steps must be an odd integer >= 3, got {steps}")
    center = np.asarray(center, dtype=np.float64)
    u1, u2 = orthonormal_plane(d1, d2)
    half = steps // 2
    # Build offsets so index `half` is exactly 0.0 and the ends are +-extent.
    offsets = (np.arange(steps) - half) * (extent / half)
    losses = np.empty((steps, steps))
    for i, dx in enumerate(offsets):
        base = center + dx * u1
        for j, dy in enumerate(offsets):
            losses[i, j] = loss_fn(base + dy * u2)
    return LandscapeSlice(offsets=offsets, losses=losses, u1=u1, u2=u2)


def landscape_slice(
    arch: MlpArchitecture,
    params: np.ndarray,
    dataset: Sequence[Sample],
    d1: np.ndarray,
    d2: np.ndarray,
    extent: float,
    steps: int,
    priors: ClassPriors | None = None,
    tau: float = 0.0,
) -> LandscapeSlice:
    """Classifier-loss slice around the given parameters.

    With tau = 0 (default) the raw cross-entropy surface is sliced; passing
    priors and tau > 0 slices the adjusted training loss instead.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    x, y = nn.stack_batch(dataset)
    use_priors = priors if priors is not None else ClassPriors.uniform(arch.n_classes)
    return landscape_on(
        lambda p: nn.batch_loss_xy(arch, p, x, y, use_priors, tau),
        nn.check_params(arch, params),
        d1,
        d2,
        extent,
        steps,
    )
