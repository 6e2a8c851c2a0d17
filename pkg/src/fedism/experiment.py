"""End-to-end experiment harness.

One experiment = one task + partition + method, repeated over several seeds.
Each seed derives independent streams for task generation, partitioning,
corruption, parameter init, and every round's batch shuffles, so a run is
fully reproducible from (config, seed) alone. Seeds may run in parallel
threads; results are bit-identical for any worker count because nothing is
shared between seeds and each round mixes clients in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as data_mod
from . import nn
from .data import LocalDataset, PartitionSpec, Sample
from .federation import (
    AggregationWeights,
    ClientReport,
    FederationState,
    MethodSpec,
    method_name,
    run_round,
)
from .metrics import EvalMetrics, evaluate
from .nn import ClassPriors, MlpArchitecture
from .seeding import derive_seed

logger = logging.getLogger(__name__)

SUMMARY_METRICS = (
    "acc_clean",
    "auc_clean",
    "acc_corrupted",
    "auc_corrupted",
    "acc_avg",
    "auc_avg",
    "sharpness_mean",
    "sharpness_std",
)


class NonFiniteParameterError(RuntimeError):
    """Training diverged: the global parameters left the finite range."""


@dataclass(frozen=True)
class TaskSpec:
    """Shape of the synthetic classification task."""

    classes: int = 5
    features: int = 20
    n_per_class: int = 500
    separation: float = 12.0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValueError(f"need at least two classes, got {self.classes}")
        if self.features < 1:
            raise ValueError(f"need at least one feature, got {self.features}")
        if self.n_per_class < 5:
            raise ValueError(
                f"need at least five samples per class, got {self.n_per_class}"
            )
        if not (self.separation >= 0.0 and math.isfinite(self.separation)):
            raise ValueError(f"separation must be finite and >= 0, got {self.separation}")


@dataclass(frozen=True)
class ModelSpec:
    """Classifier shape; widths exclude the input/output layers."""

    hidden: tuple[int, ...] = (64,)
    activation: str = "relu"

    def __post_init__(self) -> None:
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if any(h < 1 for h in hidden):
            raise ValueError(f"hidden widths must be positive, got {hidden}")

    def architecture(self, task: TaskSpec) -> MlpArchitecture:
        return MlpArchitecture(
            (task.features, *self.hidden, task.classes), self.activation
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    partition: PartitionSpec = field(
        default_factory=lambda: PartitionSpec(clients=10, alpha=1.0, corrupted_ratio=0.2)
    )
    method: MethodSpec = field(default_factory=MethodSpec)
    rounds: int = 100
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_window: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ValueError(f"seeds must be non-negative, got {self.seeds}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if not 1 <= self.eval_window <= self.rounds:
            raise ValueError(
                f"eval_window must be in [1, rounds], got {self.eval_window}"
            )


@dataclass(frozen=True)
class RoundMetrics:
    """One row of the per-round log."""

    round: int
    eval: EvalMetrics
    sharpness_mean: float
    sharpness_std: float
    weights: AggregationWeights

    def value(self, name: str) -> float:
        if name in ("sharpness_mean", "sharpness_std"):
            return getattr(self, name)
        return getattr(self.eval, name)


@dataclass(frozen=True)
class SeedRun:
    """Everything recorded while running one seed."""

    seed: int
    rounds: list[RoundMetrics]
    data_hash: str
    final_state: FederationState
    final_reports: list[ClientReport]

    def window_mean(self, name: str, window: int) -> float:
        tail = self.rounds[-window:]
        return float(np.mean([r.value(name) for r in tail]))


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    runs: list[SeedRun]
    summary: dict[str, dict[str, float]]

    @property
    def method(self) -> str:
        return method_name(self.config.method)


@dataclass(frozen=True)
class SeedData:
    """Materialized data for one seed."""

    shards: list[LocalDataset]
    clean_test: list[Sample]
    corrupted_test: list[Sample]
    priors: list[ClassPriors]
    fingerprint: str


def dataset_fingerprint(
    shards: Sequence[LocalDataset],
    clean_test: Sequence[Sample],
    corrupted_test: Sequence[Sample],
) -> str:
    """SHA-256 over the exported line format of every sample, in fixed order."""
    digest = hashlib.sha256()
    for line in data_mod.shards_to_lines(shards):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    for tag, samples in ((b"clean\n", clean_test), (b"corrupted\n", corrupted_test)):
        digest.update(tag)
        for line in data_mod.samples_to_lines(samples):
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
    return digest.hexdigest()


def build_seed_data(config: ExperimentConfig, seed: int) -> SeedData:
    """Generate, partition, and corrupt the data for one seed."""
    task = config.task
    train, test = data_mod.gen_task(
        task.classes,
        task.features,
        task.n_per_class,
        task.separation,
        seed=derive_seed(seed, "task"),
    )
    pspec = replace(config.partition, seed=derive_seed(seed, "partition"))
    shards = data_mod.dirichlet_partition(train, pspec)
    shards = data_mod.assign_and_corrupt(shards, pspec)
    spread = data_mod.feature_std(train)
    corrupted_test = data_mod.make_corrupted_test(test, pspec, spread)
    priors = [
        ClassPriors.from_labels(shard.labels(), task.classes) for shard in shards
    ]
    return SeedData(
        shards=shards,
        clean_test=list(test),
        corrupted_test=corrupted_test,
        priors=priors,
        fingerprint=dataset_fingerprint(shards, test, corrupted_test),
    )


def run_seed(
    config: ExperimentConfig, seed: int, seed_data: SeedData | None = None
) -> SeedRun:
    """Run every round of one seed and log metrics after each round."""
    prepared = seed_data if seed_data is not None else build_seed_data(config, seed)
    arch = config.model.architecture(config.task)
    state = FederationState(params=nn.init_params(arch, derive_seed(seed, "init")))

    rows: list[RoundMetrics] = []
    reports: list[ClientReport] = []
    for t in range(1, config.rounds + 1):
        params, weights, reports = run_round(
            state,
            arch,
            prepared.shards,
            config.method,
            prepared.priors,
            t,
            round_seed=derive_seed(seed, "round", t),
        )
        if not np.all(np.isfinite(params)):
            raise NonFiniteParameterError(
                f"non-finite global parameters at seed {seed}, round {t}; "
                "lower eta or rho"
            )
        state = FederationState(params=params, prev_weights=weights)
        ev = evaluate(arch, params, prepared.clean_test, prepared.corrupted_test)
        sharp = np.array([r.sharpness.value for r in reports])
        rows.append(
            RoundMetrics(
                round=t,
                eval=ev,
                sharpness_mean=float(sharp.mean()),
                sharpness_std=float(sharp.std()),
                weights=weights,
            )
        )
    return SeedRun(
        seed=seed,
        rounds=rows,
        data_hash=prepared.fingerprint,
        final_state=state,
        final_reports=list(reports),
    )


def summarize(config: ExperimentConfig, runs: Sequence[SeedRun]) -> dict[str, dict[str, float]]:
    """Mean/std over seeds of each metric's last-window average."""
    out: dict[str, dict[str, float]] = {}
    for name in SUMMARY_METRICS:
        values = np.array(
            [run.window_mean(name, config.eval_window) for run in runs]
        )
        out[name] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


def run_experiment(config: ExperimentConfig, max_workers: int = 1) -> ExperimentResult:
    """Run every seed (optionally in parallel threads) and summarize.

    Parallelism is across seeds only; per-seed work is sequential, so the
    result is bit-identical for any ``max_workers``.
    """
    if max_workers < 1:
        raise ValueError(f"max_workers must be >= 1, got {max_workers}")
    if max_workers > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            runs = list(pool.map(lambda s: run_seed(config, s), config.seeds))
    else:
        runs = [run_seed(config, s) for s in config.seeds]
    return ExperimentResult(config=config, runs=runs, summary=summarize(config, runs))


# --- file output ---------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv_text(rows: Sequence[RoundMetrics], n_clients: int) -> str:
    """Per-round CSV with full-precision reals and per-client weights."""
    header = (
        "round,acc_clean,auc_clean,acc_corrupted,auc_corrupted,acc_avg,auc_avg,"
        "sharpness_mean,sharpness_std,"
        + ",".join(f"w_{k}" for k in range(n_clients))
    )
    lines = [header]
    for row in rows:
        if len(row.weights) != n_clients:
            raise ValueError(
                f"round {row.round} has {len(row.weights)} weights, expected {n_clients}"
            )
        fields = [str(row.round)] + [
            repr(v)
            for v in (
                row.eval.acc_clean,
                row.eval.auc_clean,
                row.eval.acc_corrupted,
                row.eval.auc_corrupted,
                row.eval.acc_avg,
                row.eval.auc_avg,
                row.sharpness_mean,
                row.sharpness_std,
                *row.weights.w.tolist(),
            )
        ]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write_seed_run(out_dir: Path, method: str, run: SeedRun, n_clients: int) -> Path:
    path = Path(out_dir) / method / str(run.seed) / "metrics.csv"
    atomic_write_text(path, metrics_csv_text(run.rounds, n_clients))
    return path


def summary_payload(result: ExperimentResult) -> dict:
    return {
        "method": result.method,
        "seeds": list(result.config.seeds),
        "rounds": result.config.rounds,
        "eval_window": result.config.eval_window,
        "data_hashes": {str(run.seed): run.data_hash for run in result.runs},
        "metrics": result.summary,
    }


def write_summary_json(path: Path, payload: dict) -> None:
    atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_experiment(out_dir: Path, result: ExperimentResult) -> None:
    """Standard output layout: per-seed CSVs plus one summary JSON."""
    out = Path(out_dir)
    for run in result.runs:
        write_seed_run(out, result.method, run, result.config.partition.clients)
    write_summary_json(out / "summary.json", summary_payload(result))


def read_metrics_csv(path: Path) -> tuple[list[str], list[list[float]]]:
    """Read back a metrics CSV as (header fields, numeric rows)."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text:
        raise ValueError(f"{path} is empty")
    header = text[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in text[1:]]
    return header, rows
