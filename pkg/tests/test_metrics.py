"""Evaluation metrics and loss-landscape slicing.

Oracles: scikit-learn's balanced_accuracy_score and roc_auc_score, plus
closed-form geometry for the landscape grid.
"""

import numpy as np
import pytest
from sklearn.metrics import balanced_accuracy_score, roc_auc_score

from fedism import nn
from fedism.data import PartitionSpec, feature_std, gen_task, make_corrupted_test
from fedism.metrics import (
    EvalMetrics,
    balanced_accuracy,
    evaluate,
    landscape_on,
    landscape_slice,
    macro_auc_ovr,
    orthonormal_plane,
)
from fedism.seeding import stream

# -------------------------------------------------------- balanced accuracy


def test_balanced_accuracy_matches_sklearn():
    rng = stream(0, "bacc")
    for _ in range(20):
        n_classes = int(rng.integers(2, 6))
        labels = np.concatenate([np.full(3, c) for c in range(n_classes)])
        labels = np.concatenate([labels, rng.integers(0, n_classes, 40)])
        preds = rng.integers(0, n_classes, labels.size)
        ours = balanced_accuracy(preds.tolist(), labels.tolist(), n_classes)
        theirs = balanced_accuracy_score(labels, preds)
        assert ours == pytest.approx(theirs, abs=1e-12)


def test_balanced_accuracy_hand_value():
    # class 0: 2/3 recall, class 1: 1/2 recall -> mean 7/12
    labels = [0, 0, 0, 1, 1]
    preds = [0, 0, 1, 1, 0]
    assert balanced_accuracy(preds, labels, 2) == pytest.approx(7 / 12, abs=1e-15)


def test_balanced_accuracy_requires_all_classes_present():
    with pytest.raises(ValueError):
        balanced_accuracy([0, 1], [0, 0], 2)  # class 1 never appears
    with pytest.raises(ValueError):
        balanced_accuracy([0], [0, 0], 2)  # length mismatch


# ------------------------------------------------------------------- AUC


def test_macro_auc_matches_sklearn_including_ties():
    rng = stream(0, "auc")
    for trial in range(20):
        n_classes = int(rng.integers(2, 5))
        n = 60
        labels = np.concatenate(
            [np.arange(n_classes), rng.integers(0, n_classes, n - n_classes)]
        )
        scores = rng.normal(0.0, 1.0, (n, n_classes))
        if trial % 2 == 0:
            scores = np.round(scores, 1)  # force plenty of ties
        ours = macro_auc_ovr(scores, labels.tolist(), n_classes)
        theirs = sklearn_macro_ovr_auc(labels, scores)
        assert ours == pytest.approx(theirs, abs=1e-10)


def scipy_softmax(scores: np.ndarray) -> np.ndarray:
    z = np.exp(scores - scores.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def sklearn_macro_ovr_auc(labels, scores: np.ndarray) -> float:
    """Macro one-vs-rest AUC via sklearn, averaging explicit binary AUCs.

    Computed per class directly so the same definition covers the binary
    case, which sklearn's multi_class="ovr" mode refuses.
    """
    labels = np.asarray(labels)
    aucs = [
        roc_auc_score((labels == c).astype(int), scores[:, c])
        for c in range(scores.shape[1])
    ]
    return float(np.mean(aucs))


def test_binary_auc_hand_value():
    # scores for positive class: pos {0.9, 0.4}, neg {0.1, 0.4}
    # pairs: (0.9 vs 0.1) win, (0.9 vs 0.4) win, (0.4 vs 0.1) win,
    # (0.4 vs 0.4) tie -> (3 + 0.5) / 4 = 0.875
    scores = np.array([[0.1, 0.9], [0.6, 0.4], [0.9, 0.1], [0.6, 0.4]])
    labels = [1, 1, 0, 0]
    auc_class1_pairs = (3 + 0.5) / 4
    ours = macro_auc_ovr(scores, labels, 2)
    theirs = sklearn_macro_ovr_auc(labels, scores)
    assert ours == pytest.approx(theirs, abs=1e-12)
    # symmetric binary case: both one-vs-rest AUCs equal the pair count above
    assert ours == pytest.approx(auc_class1_pairs, abs=1e-12)


def test_auc_requires_all_classes_present():
    with pytest.raises(ValueError):
        macro_auc_ovr(np.zeros((3, 2)), [0, 0, 0], 2)


def test_eval_metrics_averages():
    m = EvalMetrics(acc_clean=0.9, auc_clean=1.0, acc_corrupted=0.5, auc_corrupted=0.8)
    assert m.acc_avg == pytest.approx(0.7, abs=1e-15)
    assert m.auc_avg == pytest.approx(0.9, abs=1e-15)


def test_evaluate_on_separable_task_scores_high_clean():
    train, test = gen_task(3, 5, 80, 10.0, seed=0)
    spec = PartitionSpec(clients=4, alpha=1.0, corrupted_ratio=0.25, seed=0)
    corrupted = make_corrupted_test(test, spec, feature_std(train))
    arch = nn.MlpArchitecture((5, 16, 3), activation="relu")
    params = nn.init_params(arch, 0)
    priors = nn.ClassPriors.uniform(3)
    x, y = nn.stack_batch(train)
    for _ in range(60):
        _, g = nn.loss_and_grad_xy(arch, params, x, y, priors, 0.0)
        params = params - 0.3 * g
    metrics = evaluate(arch, params, test, corrupted)
    assert metrics.acc_clean > 0.95
    assert metrics.auc_clean > 0.99
    assert metrics.acc_corrupted <= metrics.acc_clean + 1e-9
    assert 0.0 <= metrics.acc_corrupted <= 1.0


# -------------------------------------------------------------- landscape


def test_orthonormal_plane_properties():
    rng = stream(0, "plane")
    d1 = rng.normal(0.0, 1.0, 20)
    d2 = rng.normal(0.0, 1.0, 20)
    u1, u2 = orthonormal_plane(d1, d2)
    assert np.linalg.norm(u1) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(u2) == pytest.approx(1.0, abs=1e-12)
    assert abs(float(u1 @ u2)) < 1e-12
    with pytest.raises(ValueError):
        orthonormal_plane(d1, 2.0 * d1)  # parallel directions span no plane


def test_landscape_center_is_exact_base_loss():
    def loss(p):
        return float(p @ p)

    center = np.array([1.0, 2.0, 3.0])
    u1 = np.array([1.0, 0.0, 0.0])
    u2 = np.array([0.0, 1.0, 0.0])
    slice_ = landscape_on(loss, center, u1, u2, extent=1.0, steps=5)
    half = 5 // 2
    assert slice_.offsets[half] == 0.0
    assert slice_.losses[half, half] == loss(center)
    # quadratic along axis 0: f(center + t*u1) = (1+t)^2 + 13
    t = slice_.offsets[-1]
    assert slice_.losses[-1, half] == pytest.approx((1 + t) ** 2 + 13.0, abs=1e-12)


def test_landscape_offsets_symmetric_and_steps_validated():
    def loss(p):
        return float(p.sum())

    center = np.zeros(2)
    u1, u2 = np.eye(2)
    s = landscape_on(loss, center, u1, u2, extent=2.0, steps=9)
    assert s.offsets[0] == -2.0 and s.offsets[-1] == 2.0
    assert np.allclose(s.offsets + s.offsets[::-1], 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        landscape_on(loss, center, u1, u2, extent=1.0, steps=4)  # even
    with pytest.raises(ValueError):
        landscape_on(loss, center, u1, u2, extent=1.0, steps=1)  # too few


def test_landscape_slice_runs_on_model_loss():
    train, _ = gen_task(3, 4, 20, 6.0, seed=0)
    arch = nn.MlpArchitecture((4, 8, 3), activation="relu")
    params = nn.init_params(arch, 0)
    rng = stream(0, "slice-dirs")
    d1 = rng.normal(0.0, 1.0, arch.n_params)
    d2 = rng.normal(0.0, 1.0, arch.n_params)
    s = landscape_slice(arch, params, train, d1, d2, extent=0.5, steps=5)
    assert s.losses.shape == (5, 5)
    assert np.all(np.isfinite(s.losses))
    x, y = nn.stack_batch(train)
    base = nn.batch_loss_xy(arch, params, x, y, nn.ClassPriors.uniform(3), 0.0)
    assert s.losses[2, 2] == pytest.approx(base, abs=1e-12)
