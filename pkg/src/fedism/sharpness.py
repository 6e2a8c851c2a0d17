"""Loss-surface sharpness and sharpness-aware local updates.

Sharpness here is the first-order estimate of how much the loss rises under
the worst-case parameter perturbation of a fixed radius rho: the perturbation
is rho times the normalized gradient, and sharpness is the loss increase it
produces. The sharpness-aware step (the SAM rule) descends the gradient taken
at that perturbed point instead of at the current parameters.

The core functions act on a generic ``ValueAndGrad`` objective so they can be
checked against closed forms; thin wrappers bind them to the dense-classifier
batch loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from . import nn
from .nn import ClassPriors, MlpArchitecture, ValueAndGrad

if TYPE_CHECKING:  # pragma: no cover
    from .data import Sample

# Below this gradient norm the ascent direction is considered undefined.
DEGENERATE_GRAD_NORM = 1e-12


@dataclass(frozen=True)
class PerturbationVector:
    """Worst-case direction scaled to radius rho; degenerate when grad ~ 0."""

    values: np.ndarray
    rho: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class SharpnessValue:
    """Measured sharpness plus the radius and sample count it used."""

    value: float
    rho: float
    n_samples: int


def optimal_perturbation(grad: np.ndarray, rho: float) -> PerturbationVector:
    """Scale the gradient to length rho; zero (degenerate) for a flat point."""
    grad = np.asarray(grad, dtype=np.float64)
    if not (rho > 0.0 and np.isfinite(rho)):
        raise ValueError(f"rho must be finite and positive, got {rho}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    norm = float(np.linalg.norm(grad))
    if norm <= DEGENERATE_GRAD_NORM:
        return PerturbationVector(np.zeros_like(grad), rho, degenerate=True)
    return PerturbationVector(grad * (rho / norm), rho, degenerate=False)


def sharpness_on(objective: ValueAndGrad, params: np.ndarray, rho: float) -> float:
    """Loss increase at the worst-case radius-rho perturbation.

    Returns 0.0 at a flat point, where no ascent direction exists. The value
    can be slightly negative at finite rho on non-convex surfaces.
    """
    value, base = sharpness_and_loss_on(objective, params, rho)
    del base
    return value


def sharpness_and_loss_on(
    objective: ValueAndGrad, params: np.ndarray, rho: float
) -> tuple[float, float]:
    """Sharpness together with the unperturbed loss (one objective pass each)."""
    params = np.asarray(params, dtype=np.float64)
    loss0, grad = objective(params)
    eps = optimal_perturbation(grad, rho)
    if eps.degenerate:
        return 0.0, float(loss0)
    loss1, _ = objective(params + eps.values)
    return float(loss1 - loss0), float(loss0)


def sam_step_on(
    objective: ValueAndGrad, params: np.ndarray, rho: float, eta: float
) -> np.ndarray:
    """One sharpness-aware descent step.

    The gradient is evaluated at the worst-case perturbed point and applied
    at the original parameters. A degenerate (flat) point falls back to the
    plain gradient, which is ~0 there anyway.
    """
    if not (eta > 0.0 and np.isfinite(eta)):
        raise ValueError(f"eta must be finite and positive, got {eta}")
    params = np.asarray(params, dtype=np.float64)
    _, grad = objective(params)
    eps = optimal_perturbation(grad, rho)
    if eps.degenerate:
        return params - eta * grad
    _, grad_at_peak = objective(params + eps.values)
    return params - eta * grad_at_peak


def plain_step_on(objective: ValueAndGrad, params: np.ndarray, eta: float) -> np.ndarray:
    """One plain gradient-descent step."""
    if not (eta > 0.0 and np.isfinite(eta)):
        raise ValueError(f"eta must be finite and positive, got {eta}")
    params = np.asarray(params, dtype=np.float64)
    _, grad = objective(params)
    return params - eta * grad


# --- classifier-facing wrappers ---------------------------------------------


def sharpness(
    arch: MlpArchitecture,
    params: np.ndarray,
    dataset: "Sequence[Sample]",
    rho: float,
    priors: ClassPriors,
    tau: float,
) -> SharpnessValue:
    """Sharpness of the batch loss over a whole dataset."""
    x, y = nn.stack_batch(dataset)
    objective = nn.batch_objective(arch, x, y, priors, tau)
    value = sharpness_on(objective, nn.check_params(arch, params), rho)
    return SharpnessValue(value=value, rho=rho, n_samples=len(dataset))


def sam_step(
    arch: MlpArchitecture,
    params: np.ndarray,
    batch: "Sequence[Sample]",
    rho: float,
    eta: float,
    priors: ClassPriors,
    tau: float,
) -> np.ndarray:
    """Sharpness-aware step on one mini-batch of the classifier loss."""
    x, y = nn.stack_batch(batch)
    objective = nn.batch_objective(arch, x, y, priors, tau)
    return sam_step_on(objective, nn.check_params(arch, params), rho, eta)


def plain_step(
    arch: MlpArchitecture,
    params: np.ndarray,
    batch: "Sequence[Sample]",
    eta: float,
    priors: ClassPriors,
    tau: float,
) -> np.ndarray:
    """Plain gradient step on one mini-batch of the classifier loss."""
    x, y = nn.stack_batch(batch)
    objective = nn.batch_objective(arch, x, y, priors, tau)
    return plain_step_on(objective, nn.check_params(arch, params), eta)


# --- local update-rule registry ----------------------------------------------
#
# A local rule maps (objective, params) -> new params once its hyperparameters
# are bound. New rules (for example other perturbation schemes) register a
# factory here and become selectable by name in method specs and configs.

LocalRule = Callable[[ValueAndGrad, np.ndarray], np.ndarray]
LocalRuleFactory = Callable[[float, float], LocalRule]

_LOCAL_RULES: dict[str, LocalRuleFactory] = {}


def register_local_rule(name: str, factory: LocalRuleFactory) -> None:
    """Register a named rule factory: factory(eta, rho) -> step function."""
    if name in _LOCAL_RULES:
        raise ValueError(f"local rule {name!r} is already registered")
    _LOCAL_RULES[name] = factory


def local_rule_names() -> tuple[str, ...]:
    return tuple(sorted(_LOCAL_RULES))


def make_local_rule(name: str, eta: float, rho: float) -> LocalRule:
    if name not in _LOCAL_RULES:
        raise ValueError(
            f"unknown local rule {name!r}, expected one of {local_rule_names()}"
        )
    return _LOCAL_RULES[name](eta, rho)


register_local_rule(
    "plain",
    lambda eta, rho: lambda objective, params: plain_step_on(objective, params, eta),
)
register_local_rule(
    "sam",
    lambda eta, rho: lambda objective, params: sam_step_on(objective, params, rho, eta),
)
