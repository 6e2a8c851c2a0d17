"""Federated orchestration: local training, aggregation weights, rounds.

A round sends the global parameters to every client, runs the configured
local update rule over the client's shard, then combines the returned
parameter vectors as a convex mixture. Three weighting families are
supported:

* ``size``: classic weighting by local sample counts;
* ``sharpness_q``: weights proportional to measured local sharpness raised
  to a power q, smoothed over rounds by an exponential moving average;
* ``loss_q``: the same functional form driven by local mean loss instead of
  sharpness (a fairness baseline).

Composing a local rule with a weighting family yields the named methods:
(plain, size) is FedAvg, (sam, size) adds sharpness-aware local training,
(plain, sharpness_q) adds sharpness-matched aggregation, and (sam,
sharpness_q) combines both (FedISM).

The module also contains a brute-force check that the client-level and
group-level worst-case mixture problems pick the same model when clients
sharing a quality group have identical risks.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .data import LocalDataset
from .nn import ClassPriors, MlpArchitecture
from .seeding import stream
from .sharpness import SharpnessValue, make_local_rule, sharpness_and_loss_on

logger = logging.getLogger(__name__)

_AGG_RULES = ("size", "sharpness_q", "loss_q")

# (local rule, aggregation rule) -> canonical method name.
METHOD_NAMES: Mapping[tuple[str, str], str] = {
    ("plain", "size"): "fedavg",
    ("sam", "size"): "fedavg_salt",
    ("plain", "sharpness_q"): "fedavg_saga",
    ("sam", "sharpness_q"): "fedism",
    ("plain", "loss_q"): "fairloss",
    ("sam", "loss_q"): "fairloss_salt",
}


@dataclass(frozen=True)
class MethodSpec:
    """Everything that defines a training method, minus the task itself."""

    local_rule: str = "sam"
    agg_rule: str = "sharpness_q"
    q: float = 2.0
    beta: float = 0.5
    rho: float = 0.2
    eta: float = 0.05
    batch_size: int = 32
    local_epochs: int = 1
    tau: float = 1.0

    def __post_init__(self) -> None:
        from .sharpness import local_rule_names

        if self.local_rule not in local_rule_names():
            raise ValueError(
                f"unknown local rule {self.local_rule!r}, "
                f"expected one of {local_rule_names()}"
            )
        if self.agg_rule not in _AGG_RULES:
            raise ValueError(
                f"unknown aggregation rule {self.agg_rule!r}, expected one of {_AGG_RULES}"
            )
        if not (self.q > 0.0 and math.isfinite(self.q)):
            raise ValueError(f"q must be finite and positive, got {self.q}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be finite and positive, got {self.rho}")
        if not (self.eta > 0.0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be finite and positive, got {self.eta}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be positive, got {self.local_epochs}")
        if not (self.tau >= 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")


def method_name(spec: MethodSpec) -> str:
    return METHOD_NAMES[(spec.local_rule, spec.agg_rule)]


@dataclass(frozen=True)
class ClientReport:
    """What one client sends back after a round of local training."""

    client_id: int
    params: np.ndarray
    n_samples: int
    sharpness: SharpnessValue
    mean_loss: float


@dataclass(frozen=True)
class AggregationWeights:
    """Convex mixture over clients; validated to lie on the simplex."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or w.size < 1:
            raise ValueError(f"weights must be a 1-d vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0.0):
            raise ValueError(f"weights must be non-negative, got {w}")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 within 1e-12, got sum {w.sum()!r}")

    def __len__(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class FederationState:
    """Global parameters plus the previous round's mixture (for smoothing)."""

    params: np.ndarray
    prev_weights: AggregationWeights | None = None


def fedavg_weights(sizes: Sequence[int]) -> AggregationWeights:
    """Weights proportional to local sample counts."""
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    if sizes_arr.size < 1:
        raise ValueError("need at least one client")
    if np.any(sizes_arr <= 0) or not np.all(sizes_arr == np.floor(sizes_arr)):
        raise ValueError(f"sizes must be positive integers, got {sizes}")
    return AggregationWeights(sizes_arr / sizes_arr.sum())


def _power_weights(values: np.ndarray, q: float, what: str) -> AggregationWeights:
    if not (q > 0.0 and math.isfinite(q)):
        raise ValueError(f"q must be finite and positive, got {q}")
    if values.ndim != 1 or values.size < 1:
        raise ValueError(f"{what} must be a 1-d vector, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} must be finite")
    if np.any(values < 0.0):
        raise ValueError(f"{what} must be non-negative, got {values}")
    top = float(values.max())
    if top == 0.0:
        logger.warning("all %s values are zero; falling back to uniform weights", what)
        return AggregationWeights(np.full(values.size, 1.0 / values.size))
    # Normalizing by the max first makes the law numerically safe for large q
    # and makes its scale invariance explicit.
    powered = (values / top) ** q
    return AggregationWeights(powered / powered.sum())


def sharpness_weights(sharpness_values: Sequence[float], q: float) -> AggregationWeights:
    """Weights proportional to sharpness^q (sharper clients weigh more)."""
    return _power_weights(np.asarray(sharpness_values, dtype=np.float64), q, "sharpness")


def loss_weights(losses: Sequence[float], q: float) -> AggregationWeights:
    """Weights proportional to loss^q; same law as sharpness, different driver."""
    return _power_weights(np.asarray(losses, dtype=np.float64), q, "loss")


def smooth_weights(
    new: AggregationWeights,
    prev: AggregationWeights | None,
    beta: float,
    t: int,
) -> AggregationWeights:
    """Exponential moving average over rounds; passes through on round one."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if t == 1:
        if prev is not None:
            raise ValueError("round 1 must not carry previous weights")
        return new
    if prev is None:
        raise ValueError(f"round {t} needs the previous round's weights")
    if len(prev) != len(new):
        raise ValueError(f"weight lengths differ: {len(prev)} vs {len(new)}")
    return AggregationWeights(beta * new.w + (1.0 - beta) * prev.w)


def aggregate(reports: Sequence[ClientReport], weights: AggregationWeights) -> np.ndarray:
    """Weighted parameter mixture in fixed client order."""
    if len(reports) == 0:
        raise ValueError("need at least one client report")
    if len(reports) != len(weights):
        raise ValueError(f"{len(reports)} reports but {len(weights)} weights")
    size = reports[0].params.size
    if any(r.params.size != size for r in reports):
        raise ValueError("client parameter vectors disagree in size")
    stacked = np.stack([r.params for r in reports])
    return weights.w @ stacked


def local_train(
    client: LocalDataset,
    arch: MlpArchitecture,
    global_params: np.ndarray,
    method: MethodSpec,
    priors: ClassPriors,
    round_seed: int,
) -> ClientReport:
    """Run the local epochs on one client and measure the result.

    Batches are drawn from a seeded shuffle keyed by (round, client, epoch),
    so the walk is deterministic and independent of any thread scheduling.
    After the updates, sharpness and mean loss are measured on the client's
    entire shard at the method's radius.
    """
    params = nn.check_params(arch, global_params).copy()
    x = client.features()
    y = client.labels()
    n = x.shape[0]
    rule = make_local_rule(method.local_rule, eta=method.eta, rho=method.rho)
    for epoch in range(method.local_epochs):
        order = stream(round_seed, "shuffle", client.client_id, epoch).permutation(n)
        for start in range(0, n, method.batch_size):
            idx = order[start : start + method.batch_size]
            objective = nn.batch_objective(arch, x[idx], y[idx], priors, method.tau)
            params = rule(objective, params)

    full_objective = nn.batch_objective(arch, x, y, priors, method.tau)
    sharp, mean_loss = sharpness_and_loss_on(full_objective, params, method.rho)
    return ClientReport(
        client_id=client.client_id,
        params=params,
        n_samples=n,
        sharpness=SharpnessValue(value=sharp, rho=method.rho, n_samples=n),
        mean_loss=mean_loss,
    )


def round_weights(
    reports: Sequence[ClientReport],
    method: MethodSpec,
    prev: AggregationWeights | None,
    t: int,
) -> AggregationWeights:
    """Mixture for this round under the method's aggregation rule."""
    if method.agg_rule == "size":
        return fedavg_weights([r.n_samples for r in reports])
    if method.agg_rule == "sharpness_q":
        # First-order sharpness can dip slightly below zero at finite radius;
        # the power law needs non-negative drivers, so clamp at zero.
        drivers = [max(r.sharpness.value, 0.0) for r in reports]
        fresh = sharpness_weights(drivers, method.q)
    else:
        fresh = loss_weights([r.mean_loss for r in reports], method.q)
    return smooth_weights(fresh, prev, method.beta, t)


def run_round(
    state: FederationState,
    arch: MlpArchitecture,
    clients: Sequence[LocalDataset],
    method: MethodSpec,
    priors: Sequence[ClassPriors],
    t: int,
    round_seed: int,
    max_workers: int = 1,
) -> tuple[np.ndarray, AggregationWeights, list[ClientReport]]:
    """One federated round: local training everywhere, then one mixture.

    Client results are combined in client order whatever the worker count,
    so the output is bit-identical for any ``max_workers``.
    """
    if len(clients) == 0:
        raise ValueError("need at least one client")
    if len(priors) != len(clients):
        raise ValueError(f"{len(clients)} clients but {len(priors)} prior vectors")
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")

    def train_one(i: int) -> ClientReport:
        return local_train(clients[i], arch, state.params, method, priors[i], round_seed)

    indices = range(len(clients))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(train_one, indices))
    else:
        reports = [train_one(i) for i in indices]

    weights = round_weights(reports, method, state.prev_weights, t)
    new_params = aggregate(reports, weights)
    return new_params, weights, reports


# --- worst-case mixture equivalence ------------------------------------------


def simplex_grid(n_dims: int, resolution: float) -> np.ndarray:
    """All points of the probability simplex whose coordinates are multiples
    of ``resolution``; rows sum to one exactly up to float rounding.

    The returned array is cached and read-only; copy before mutating.
    """
    if n_dims < 1:
        raise ValueError(f"need at least one dimension, got {n_dims}")
    if not (0.0 < resolution <= 1.0):
        raise ValueError(f"resolution must lie in (0, 1], got {resolution}")
    steps = round(1.0 / resolution)
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError(f"resolution {resolution} must evenly divide 1")
    if math.comb(steps + n_dims - 1, n_dims - 1) > 50_000_000:
        raise ValueError(
            f"simplex grid with {n_dims} dims at resolution {resolution} is too large"
        )
    return _cached_simplex_grid(n_dims, steps)


@functools.lru_cache(maxsize=16)
def _cached_simplex_grid(n_dims: int, steps: int) -> np.ndarray:
    if n_dims == 1:
        grid = np.ones((1, 1))
    else:
        # Stars and bars: choose the n_dims-1 bar positions among
        # steps+n_dims-1 slots; consecutive-bar gaps are the coordinate counts.
        combos = itertools.combinations(range(steps + n_dims - 1), n_dims - 1)
        rows = []
        for bars in combos:
            edges = (-1,) + bars + (steps + n_dims - 1,)
            rows.append([edges[i + 1] - edges[i] - 1 for i in range(n_dims)])
        grid = np.asarray(rows, dtype=np.float64) / steps
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True)
class MinimaxReport:
    """Outcome of the client-level vs group-level worst-case comparison."""

    client_worst: np.ndarray  # per-model worst mixture risk over clients
    group_worst: np.ndarray  # per-model worst mixture risk over groups
    row_max: np.ndarray  # per-model plain max over client risks
    client_argmin: int
    group_argmin: int
    lambda_star: np.ndarray  # client mixture attaining the worst case
    mu_star: np.ndarray  # group mixture induced by lambda_star
    max_gap: float  # largest |client_worst - group_worst| over models
    mu_gap: float  # |mu_star . group risks - group worst| at the chosen model
    resolution: float

    def agrees(self, tolerance: float = 1e-9) -> bool:
        return (
            self.max_gap <= tolerance
            and self.client_argmin == self.group_argmin
            and self.mu_gap <= tolerance
        )


def verify_minimax_equivalence(
    risk_table: np.ndarray,
    attributes: Sequence[int],
    resolution: float = 0.01,
) -> MinimaxReport:
    """Brute-force both worst-case mixture problems over a simplex grid.

    ``risk_table[k, j]`` is client k's risk under candidate model j;
    ``attributes[k]`` is the client's quality group. Clients in the same
    group must have identical risk rows (that premise is what makes the two
    problems equivalent). Because the extreme points of the simplex lie on
    the grid, the grid maximum of a linear function is the exact maximum.
    """
    risks = np.asarray(risk_table, dtype=np.float64)
    attrs = np.asarray(attributes, dtype=np.int64)
    if risks.ndim != 2 or risks.size == 0:
        raise ValueError(f"risk table must be 2-d and non-empty, got shape {risks.shape}")
    if not np.all(np.isfinite(risks)):
        raise ValueError("risk table must be finite")
    if attrs.shape != (risks.shape[0],):
        raise ValueError(
            f"need one attribute per client: {risks.shape[0]} clients, shape {attrs.shape}"
        )

    groups = np.unique(attrs)
    group_risks = np.empty((groups.size, risks.shape[1]))
    for u, g in enumerate(groups):
        members = np.flatnonzero(attrs == g)
        head = risks[members[0]]
        for k in members[1:]:
            if not np.array_equal(risks[k], head):
                raise ValueError(
                    f"clients {int(members[0])} and {int(k)} share group {int(g)} "
                    "but have different risk rows"
                )
        group_risks[u] = head

    lam_grid = simplex_grid(risks.shape[0], resolution)
    mu_grid = simplex_grid(groups.size, resolution)

    client_scores = lam_grid @ risks  # (grid, models)
    group_scores = mu_grid @ group_risks
    client_worst = client_scores.max(axis=0)
    group_worst = group_scores.max(axis=0)
    row_max = risks.max(axis=0)

    client_argmin = int(np.argmin(client_worst))
    group_argmin = int(np.argmin(group_worst))

    lambda_star = lam_grid[int(np.argmax(client_scores[:, client_argmin]))]
    mu_star = np.zeros(groups.size)
    for u, g in enumerate(groups):
        mu_star[u] = lambda_star[attrs == g].sum()
    mu_gap = abs(float(mu_star @ group_risks[:, client_argmin]) - float(group_worst[client_argmin]))

    return MinimaxReport(
        client_worst=client_worst,
        group_worst=group_worst,
        row_max=row_max,
        client_argmin=client_argmin,
        group_argmin=group_argmin,
        lambda_star=lambda_star,
        mu_star=mu_star,
        max_gap=float(np.abs(client_worst - group_worst).max()),
        mu_gap=mu_gap,
        resolution=resolution,
    )
