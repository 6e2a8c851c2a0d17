"""Self-checks that the core math obeys its laws.

Each check exercises one family of invariants (gradient correctness, the
perturbation norm law, first-order sharpness behavior, closed forms, weight
laws, worst-case mixture equivalence) on randomized instances with a fixed
seed, and reports pass/fail plus the tolerance it enforced. The battery backs
the ``verify`` command and doubles as a regression harness: corrupt any core
computation and the matching check names itself in the failure report.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .federation import (
    fedavg_weights,
    loss_weights,
    sharpness_weights,
    simplex_grid,
    smooth_weights,
    verify_minimax_equivalence,
    AggregationWeights,
)
from .nn import ClassPriors, MlpArchitecture
from .seeding import stream
from .sharpness import optimal_perturbation, sam_step_on, sharpness_on

# Gradient implementation under test; module-level so a harness can swap in a
# deliberately broken one and confirm the gradient check catches it.
_loss_and_grad = nn.loss_and_grad_xy


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    tolerance: str
    detail: str
    seconds: float


def _random_instance(
    rng: np.random.Generator, activation: str
) -> tuple[MlpArchitecture, np.ndarray, np.ndarray, np.ndarray, ClassPriors, float]:
    n_features = int(rng.integers(2, 6))
    n_hidden = int(rng.integers(2, 9))
    n_classes = int(rng.integers(2, 5))
    n_samples = int(rng.integers(2, 9))
    arch = MlpArchitecture((n_features, n_hidden, n_classes), activation)
    for _ in range(50):
        params = rng.normal(0.0, 0.8, arch.n_params)
        x = rng.normal(0.0, 1.0, (n_samples, n_features))
        if activation != "relu":
            break
        # Central differences are only a valid oracle away from activation
        # kinks: keep every hidden pre-activation clear of zero by a margin
        # far larger than the finite-difference window can shift it.
        w, b = nn.split_params(arch, params)[0]
        if float(np.abs(x @ w.T + b).min()) > 1e-3:
            break
    y = rng.integers(0, n_classes, n_samples)
    raw = rng.random(n_classes) + 0.1
    priors = ClassPriors(raw / raw.sum())
    tau = float(rng.choice([0.0, 1.0]))
    return arch, params, x, y, priors, tau


def check_gradient(instances: int = 100, seed: int = 0) -> CheckResult:
    """Analytic gradients match central differences, coordinate by coordinate."""
    start = time.perf_counter()
    rng = stream(seed, "verify-gradient")
    worst = 0.0
    failures = 0
    for i in range(instances):
        activation = "tanh" if i % 2 == 0 else "relu"
        arch, params, x, y, priors, tau = _random_instance(rng, activation)
        _, grad = _loss_and_grad(arch, params, x, y, priors, tau)
        numeric = nn.central_difference(
            lambda p: nn.batch_loss_xy(arch, p, x, y, priors, tau), params, h=1e-5
        )
        for g, g_hat in zip(grad, numeric):
            # Relative error with the usual epsilon guard: components whose
            # magnitude sits below 1e-6 are dominated by the oracle's own
            # roundoff (loss noise / 2h, about 1e-11), so the denominator is
            # floored there instead of letting 0/0 noise blow up the ratio.
            err = abs(g - g_hat) / max(abs(g), abs(g_hat), 1e-6)
            worst = max(worst, err)
            if err >= 1e-4:
                failures += 1
    return CheckResult(
        name="gradient_check",
        passed=failures == 0,
        tolerance="max relative error < 1e-4 (denominator floored at 1e-6)",
        detail=f"{instances} instances, max relative error {worst:.3e}, {failures} bad coords",
        seconds=time.perf_counter() - start,
    )


def check_perturbation_norm(instances: int = 100, seed: int = 0) -> CheckResult:
    """The worst-case perturbation always has norm exactly rho."""
    start = time.perf_counter()
    rng = stream(seed, "verify-perturbation")
    worst = 0.0
    for _ in range(instances):
        grad = rng.normal(0.0, rng.random() * 10 + 0.1, int(rng.integers(1, 50)))
        rho = float(rng.random() + 0.01)
        eps = optimal_perturbation(grad, rho)
        worst = max(worst, abs(float(np.linalg.norm(eps.values)) - rho))
    zero = optimal_perturbation(np.zeros(5), 0.1)
    degenerate_ok = zero.degenerate and not np.any(zero.values)
    return CheckResult(
        name="perturbation_norm",
        passed=worst <= 1e-12 and degenerate_ok,
        tolerance="absolute 1e-12; zero gradient flagged degenerate",
        detail=f"worst norm error {worst:.3e}, degenerate case ok: {degenerate_ok}",
        seconds=time.perf_counter() - start,
    )


def check_sharpness_first_order(instances: int = 50, seed: int = 0) -> CheckResult:
    """At small rho, sharpness approaches rho times the gradient norm.

    On smooth instances the ratio S / (rho * ||g||) sits within 1% of one at
    rho = 1e-4, and its deviation from one shrinks at least 5x on average
    when rho drops tenfold.
    """
    start = time.perf_counter()
    rng = stream(seed, "verify-first-order")
    ratios: list[float] = []
    shrinks: list[float] = []
    bad_ratio = 0
    for _ in range(instances):
        arch, params, x, y, priors, tau = _random_instance(rng, "tanh")
        objective = nn.batch_objective(arch, x, y, priors, tau)
        _, grad = objective(params)
        norm = float(np.linalg.norm(grad))
        if norm < 1e-6:  # skip near-flat draws; the ratio is undefined there
            continue
        dev = []
        for rho in (1e-4, 1e-5):
            ratio = sharpness_on(objective, params, rho) / (rho * norm)
            dev.append(abs(ratio - 1.0))
            if rho == 1e-4:
                ratios.append(ratio)
                if not 0.99 <= ratio <= 1.01:
                    bad_ratio += 1
        shrinks.append(dev[0] / max(dev[1], 1e-15))
    mean_shrink = float(np.mean(shrinks))
    passed = bad_ratio == 0 and mean_shrink >= 5.0
    return CheckResult(
        name="sharpness_first_order",
        passed=passed,
        tolerance="ratio in [0.99, 1.01] at rho=1e-4; mean deviation shrink >= 5x per 10x rho drop",
        detail=(
            f"{len(ratios)} instances, ratio range "
            f"[{min(ratios):.6f}, {max(ratios):.6f}], mean shrink {mean_shrink:.1f}x"
        ),
        seconds=time.perf_counter() - start,
    )


def check_sharpness_closed_form() -> CheckResult:
    """Closed forms on toy objectives, including one exact (dyadic) case."""
    start = time.perf_counter()

    def quadratic(p: np.ndarray) -> tuple[float, np.ndarray]:
        return 0.5 * float(p @ p), p.copy()

    theta = np.array([1.0])
    s_quad = sharpness_on(quadratic, theta, rho=0.1)
    quad_ok = abs(s_quad - 0.105) <= 1e-12

    stepped = sam_step_on(quadratic, theta, rho=0.1, eta=0.1)
    step_ok = abs(float(stepped[0]) - 0.89) <= 1e-12

    # Dyadic linear objective: every intermediate is exact in binary, so the
    # sharpness must equal rho * |slope| bit for bit.
    slope = 2.0

    def linear(p: np.ndarray) -> tuple[float, np.ndarray]:
        return slope * float(p[0]), np.array([slope])

    s_lin = sharpness_on(linear, np.array([1.0]), rho=0.25)
    lin_ok = s_lin == 0.25 * slope

    passed = quad_ok and step_ok and lin_ok
    return CheckResult(
        name="sharpness_closed_form",
        passed=passed,
        tolerance="quadratic 0.105 within 1e-12; sam step 0.89 within 1e-12; linear exact",
        detail=f"quadratic {s_quad!r}, step {float(stepped[0])!r}, linear {s_lin!r}",
        seconds=time.perf_counter() - start,
    )


def check_weight_laws(instances: int = 200, seed: int = 0) -> CheckResult:
    """Simplex membership, known values, monotonicity, scale invariance."""
    start = time.perf_counter()
    rng = stream(seed, "verify-weights")
    problems: list[str] = []

    def expect(cond: bool, message: str) -> None:
        if not cond:
            problems.append(message)

    expect(
        np.allclose(fedavg_weights([100, 300]).w, [0.25, 0.75], atol=1e-12),
        "size weights for [100, 300]",
    )
    expect(
        np.allclose(sharpness_weights([1.0, 2.0], q=2.0).w, [0.2, 0.8], atol=1e-12),
        "sharpness weights for [1, 2] at q=2",
    )
    expect(
        np.allclose(loss_weights([1.0, 3.0], q=1.0).w, [0.25, 0.75], atol=1e-12),
        "loss weights for [1, 3] at q=1",
    )
    expect(
        float(sharpness_weights([1.0, 2.0, 3.0], q=50.0).w.max()) > 0.999,
        "large q concentrates on the sharpest client",
    )
    smoothed = smooth_weights(
        AggregationWeights(np.array([0.6, 0.4])),
        AggregationWeights(np.array([0.2, 0.8])),
        beta=0.5,
        t=2,
    )
    expect(np.allclose(smoothed.w, [0.4, 0.6], atol=1e-12), "moving average at beta=0.5")

    for _ in range(instances):
        k = int(rng.integers(1, 12))
        values = rng.random(k) * float(rng.choice([0.1, 1.0, 100.0]))
        q = float(rng.choice([0.1, 0.5, 1.0, 2.0, 5.0, 10.0]))
        w = sharpness_weights(values, q).w
        expect(abs(float(w.sum()) - 1.0) <= 1e-12, "weights sum to one")
        expect(bool(np.all(w >= 0.0)), "weights non-negative")
        order = np.argsort(values)
        expect(
            bool(np.all(np.diff(w[order]) >= -1e-15)),
            "larger driver never gets smaller weight",
        )
        scale = float(rng.random() * 10 + 0.1)
        w_scaled = sharpness_weights(values * scale, q).w
        expect(
            bool(np.all(np.abs(w - w_scaled) <= 1e-12)),
            "scale invariance of the power law",
        )
    return CheckResult(
        name="weight_laws",
        passed=not problems,
        tolerance="known values and simplex sums within 1e-12",
        detail="ok" if not problems else "; ".join(sorted(set(problems))),
        seconds=time.perf_counter() - start,
    )


def check_simplex_grid(seed: int = 0) -> CheckResult:
    """Grid well-formedness and exact linear maxima at the vertices."""
    start = time.perf_counter()
    rng = stream(seed, "verify-grid")
    problems: list[str] = []
    for k in (1, 2, 3, 4):
        grid = simplex_grid(k, 0.05)
        expected_rows = math.comb(20 + k - 1, k - 1)
        if grid.shape != (expected_rows, k):
            problems.append(f"grid shape for k={k}")
        if not np.allclose(grid.sum(axis=1), 1.0, atol=1e-12) or np.any(grid < 0):
            problems.append(f"grid rows off the simplex for k={k}")
        for _ in range(25):
            r = rng.normal(0.0, 1.0, k)
            gap = abs(float((grid @ r).max()) - float(r.max()))
            if gap > 1e-12:
                problems.append(f"linear max misses the best vertex for k={k}")
    return CheckResult(
        name="simplex_grid",
        passed=not problems,
        tolerance="row sums and linear maxima within 1e-12",
        detail="ok" if not problems else "; ".join(sorted(set(problems))),
        seconds=time.perf_counter() - start,
    )


def check_minimax_equivalence(instances: int = 200, seed: int = 0) -> CheckResult:
    """Client-level and group-level worst-case problems agree.

    Random risk tables where clients in the same quality group share a risk
    row; both brute-force problems must produce the same worst-case values,
    pick the same model, and the group mixture induced by the client
    maximizer must attain the group worst case.
    """
    start = time.perf_counter()
    rng = stream(seed, "verify-minimax")
    worst_gap = 0.0
    failures = 0
    for _ in range(instances):
        n_clients = int(rng.integers(2, 5))
        n_models = int(rng.integers(2, 6))
        attrs = rng.integers(0, 2, n_clients)
        attrs[0] = 0
        attrs[-1] = 1  # keep both groups occupied
        group_rows = rng.random((2, n_models))
        risks = group_rows[attrs]
        report = verify_minimax_equivalence(risks, attrs, resolution=0.01)
        worst_gap = max(worst_gap, report.max_gap, report.mu_gap)
        if not report.agrees(tolerance=1e-9):
            failures += 1
    return CheckResult(
        name="minimax_equivalence",
        passed=failures == 0,
        tolerance="worst-case values within 1e-9; same argmin model",
        detail=f"{instances} instances, worst gap {worst_gap:.3e}, {failures} disagreements",
        seconds=time.perf_counter() - start,
    )


def run_all_checks(
    seed: int = 0,
    grad_instances: int = 100,
    sharpness_instances: int = 50,
    minimax_instances: int = 200,
) -> list[CheckResult]:
    return [
        check_gradient(grad_instances, seed),
        check_perturbation_norm(100, seed),
        check_sharpness_first_order(sharpness_instances, seed),
        check_sharpness_closed_form(),
        check_weight_laws(200, seed),
        check_simplex_grid(seed),
        check_minimax_equivalence(minimax_instances, seed),
    ]


def report_lines(results: list[CheckResult]) -> list[str]:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{status} {r.name}: {r.detail} [tolerance: {r.tolerance}] ({r.seconds:.2f}s)"
        )
    total = sum(not r.passed for r in results)
    lines.append(
        f"{len(results) - total}/{len(results)} checks passed"
        + (f"; FAILED: {', '.join(r.name for r in results if not r.passed)}" if total else "")
    )
    return lines


def report_json(results: list[CheckResult]) -> str:
    payload = {
        "passed": all(r.passed for r in results),
        "checks": [asdict(r) for r in results],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
