"""Small dense classifier trained from a flat float64 parameter vector.

The whole model lives in one contiguous ``numpy`` array so that optimizer
steps, perturbations, and aggregation are plain vector arithmetic. The layout
is canonical: for each layer in order, the weight matrix (shape
``(n_out, n_in)``, row-major) followed by the bias vector. Losses are
averaged cross-entropy, optionally with additive logit adjustment computed
from class priors at training time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import used only for annotations
    from .data import Sample

# An objective bundles a scalar loss and its gradient at a parameter vector.
ValueAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths (inputs first, classes last) plus hidden activation."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError(
                f"architecture needs at least input and output widths, got {widths}"
            )
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}, expected one of {_ACTIVATIONS}"
            )

    @property
    def n_features(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """Weight matrix shapes ``(n_out, n_in)`` per layer, in order."""
        widths = self.layer_widths
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    @property
    def n_params(self) -> int:
        return sum(n_out * n_in + n_out for n_out, n_in in self.layer_shapes())


@dataclass(frozen=True)
class ClassPriors:
    """Strictly positive class-probability vector summing to one."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=np.float64)
        object.__setattr__(self, "pi", pi)
        if pi.ndim != 1 or pi.size < 1:
            raise ValueError(f"priors must be a 1-d vector, got shape {pi.shape}")
        if not np.all(np.isfinite(pi)):
            raise ValueError("priors must be finite")
        if np.any(pi <= 0.0):
            raise ValueError(f"priors must be strictly positive, got {pi}")
        if abs(float(pi.sum()) - 1.0) > 1e-9:
            raise ValueError(f"priors must sum to 1, got sum {pi.sum()!r}")

    @property
    def n_classes(self) -> int:
        return self.pi.size

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassPriors":
        if n_classes < 1:
            raise ValueError(f"need at least one class, got {n_classes}")
        return cls(np.full(n_classes, 1.0 / n_classes))

    @classmethod
    def from_labels(
        cls, labels: Sequence[int], n_classes: int, smoothing: float = 1.0
    ) -> "ClassPriors":
        """Empirical priors with additive smoothing.

        Smoothing keeps every prior strictly positive even when a label is
        absent locally, which also keeps the log-prior adjustment finite.
        """
        if smoothing <= 0.0:
            raise ValueError(f"smoothing must be positive, got {smoothing}")
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
        if counts.size > n_classes:
            raise ValueError(
                f"label outside [0, {n_classes}) in {sorted(set(map(int, labels)))}"
            )
        weighted = counts.astype(np.float64) + smoothing
        return cls(weighted / weighted.sum())


def init_params(arch: MlpArchitecture, seed: int) -> np.ndarray:
    """Zero-mean Gaussian weights scaled by 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    chunks: list[np.ndarray] = []
    for n_out, n_in in arch.layer_shapes():
        scale = 1.0 / np.sqrt(n_in)
        chunks.append(rng.normal(0.0, scale, size=n_out * n_in))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def check_params(arch: MlpArchitecture, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != arch.n_params:
        raise ValueError(
            f"parameter vector must have shape ({arch.n_params},), got {params.shape}"
        )
    return params


def split_params(
    arch: MlpArchitecture, params: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (weight, bias) per layer in the canonical layout; no copies."""
    params = check_params(arch, params)
    layers: list[tuple[np.ndarray, np.ndarray]] = []
    offset = 0
    for n_out, n_in in arch.layer_shapes():
        w = params[offset : offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        b = params[offset : offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def forward_batch(arch: MlpArchitecture, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Raw logits for a batch of inputs, shape (n, n_classes)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise ValueError(
            f"inputs must have shape (n, {arch.n_features}), got {x.shape}"
        )
    layers = split_params(arch, params)
    z = x
    for i, (w, b) in enumerate(layers):
        a = z @ w.T + b
        z = _activate(a, arch.activation) if i < len(layers) - 1 else a
    return z


def forward(arch: MlpArchitecture, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Raw logits for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single input vector, got shape {x.shape}")
    return forward_batch(arch, params, x[None, :])[0]


def adjust_logits(logits: np.ndarray, priors: ClassPriors, tau: float) -> np.ndarray:
    """Shift logits by tau * log(prior) per class.

    Training-time correction for skewed local label distributions; evaluation
    always uses raw logits. tau = 0 leaves the logits unchanged.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if tau < 0.0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    if logits.shape[-1] != priors.n_classes:
        raise ValueError(
            f"logits have {logits.shape[-1]} classes but priors have {priors.n_classes}"
        )
    if tau == 0.0:
        return logits.copy()
    return logits + tau * np.log(priors.pi)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce_loss(logits: np.ndarray, label: int) -> float:
    """Cross-entropy of one logit vector against an integer label."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError(f"expected a single logit vector, got shape {logits.shape}")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} outside [0, {logits.size})")
    return float(-_log_softmax(logits)[label])


def stack_batch(batch: "Sequence[Sample]") -> tuple[np.ndarray, np.ndarray]:
    """Stack sample objects into (features, labels) arrays."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    x = np.stack([np.asarray(s.x, dtype=np.float64) for s in batch])
    y = np.array([int(s.y) for s in batch], dtype=np.int64)
    return x, y


def loss_and_grad_xy(
    arch: MlpArchitecture,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    priors: ClassPriors,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Mean adjusted cross-entropy and its gradient via backpropagation.

    The logit adjustment is an additive constant per class, so it shifts the
    loss surface but flows through the softmax exactly like the raw logits.
    """
    params = check_params(arch, params)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise ValueError(f"inputs must have shape (n, {arch.n_features}), got {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels must have shape ({x.shape[0]},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= arch.n_classes):
        raise ValueError(f"labels outside [0, {arch.n_classes})")
    n = x.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")

    layers = split_params(arch, params)
    inputs: list[np.ndarray] = [x]  # post-activation input to each layer
    pre: list[np.ndarray] = []
    z = x
    for i, (w, b) in enumerate(layers):
        a = z @ w.T + b
        pre.append(a)
        if i < len(layers) - 1:
            z = _activate(a, arch.activation)
            inputs.append(z)

    logp = _log_softmax(adjust_logits(pre[-1], priors, tau))
    loss = float(-logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty_like(params)
    offset = arch.n_params
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        n_out, n_in = w.shape
        gb = delta.sum(axis=0)
        gw = delta.T @ inputs[i]
        offset -= n_out
        grad[offset : offset + n_out] = gb
        offset -= n_out * n_in
        grad[offset : offset + n_out * n_in] = gw.ravel()
        if i > 0:
            upstream = delta @ w
            if arch.activation == "relu":
                delta = upstream * (pre[i - 1] > 0.0)
            else:
                delta = upstream * (1.0 - inputs[i] ** 2)
    return loss, grad


def batch_loss_and_grad(
    arch: MlpArchitecture,
    params: np.ndarray,
    batch: "Sequence[Sample]",
    priors: ClassPriors,
    tau: float,
) -> tuple[float, np.ndarray]:
    """`loss_and_grad_xy` over a batch of sample objects."""
    x, y = stack_batch(batch)
    return loss_and_grad_xy(arch, params, x, y, priors, tau)


def batch_loss_xy(
    arch: MlpArchitecture,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    priors: ClassPriors,
    tau: float,
) -> float:
    """Mean adjusted cross-entropy without the gradient."""
    logits = forward_batch(arch, params, x)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (x.shape[0],) or x.shape[0] == 0:
        raise ValueError(f"labels must have shape ({x.shape[0]},) and be non-empty")
    logp = _log_softmax(adjust_logits(logits, priors, tau))
    return float(-logp[np.arange(y.size), y].mean())


def batch_objective(
    arch: MlpArchitecture,
    x: np.ndarray,
    y: np.ndarray,
    priors: ClassPriors,
    tau: float,
) -> ValueAndGrad:
    """Close over a fixed batch, producing an objective of the parameters."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)

    def objective(params: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_grad_xy(arch, params, x, y, priors, tau)

    return objective


def central_difference(
    f: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    params = np.asarray(params, dtype=np.float64)
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    grad = np.empty_like(params)
    probe = params.copy()
    for i in range(params.size):
        original = probe[i]
        probe[i] = original + h
        hi = f(probe)
        probe[i] = original - h
        lo = f(probe)
        probe[i] = original
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def finite_diff_grad(
    arch: MlpArchitecture,
    params: np.ndarray,
    batch: "Sequence[Sample]",
    priors: ClassPriors,
    tau: float,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the batch loss; slow, for verification."""
    x, y = stack_batch(batch)
    params = check_params(arch, params)
    return central_difference(
        lambda p: batch_loss_xy(arch, p, x, y, priors, tau), params, h
    )
