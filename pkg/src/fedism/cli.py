"""Command-line entry point.

Verbs:

* ``run``: one experiment (one method) from a config file.
* ``ablate``: the four method compositions on identical data, with a joint
  comparison table of deltas against size-weighted averaging.
* ``sweep``: repeat the configured experiment across values of one
  hyperparameter, with a merged summary keyed by value.
* ``verify``: the randomized self-check battery; fails the process if any
  law is violated.
* ``landscape``: train once, then slice the loss surface around the final
  parameters over clean/corrupted train/test sets.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    SWEEPABLE,
    ConfigError,
    apply_overrides,
    build_config,
    parse_set_flags,
    read_config_file,
    resolved_to_text,
)
from .data import QUALITY_CORRUPTED
from .experiment import (
    SUMMARY_METRICS,
    ExperimentConfig,
    ExperimentResult,
    atomic_write_text,
    build_seed_data,
    run_experiment,
    run_seed,
    summary_payload,
    write_seed_run,
    write_summary_json,
)
from .federation import METHOD_NAMES, method_name
from .metrics import landscape_on
from .nn import batch_loss_xy, ClassPriors, stack_batch
from .seeding import stream

logger = logging.getLogger(__name__)

ABLATION_METHODS = ("fedavg", "fedavg_salt", "fedavg_saga", "fedism")
_COMPOSITIONS = {name: pair for pair, name in METHOD_NAMES.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedism",
        description="Federated learning simulator with sharpness-matched aggregation.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            p.add_argument("--config", required=True, help="path to a config file")
            p.add_argument(
                "--set",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="override one config key (repeatable)",
            )
            p.add_argument(
                "--seeds",
                type=int,
                default=None,
                metavar="N",
                help="use seeds 0..N-1 instead of the config's seed list",
            )
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            metavar="N",
            help="worker threads across seeds (results are identical for any N)",
        )

    common(sub.add_parser("run", help="run one experiment"))
    common(sub.add_parser("ablate", help="run the four method compositions"))
    sweep = sub.add_parser("sweep", help="sweep one hyperparameter")
    common(sweep)
    sweep.add_argument("--param", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    sweep.add_argument(
        "--values", required=True, help="comma-separated values for the parameter"
    )
    verify = sub.add_parser("verify", help="run the self-check battery")
    common(verify, needs_config=False)
    common(sub.add_parser("landscape", help="slice the loss surface after training"))
    return parser


def _load_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict[str, object]]:
    values = read_config_file(args.config)
    merged = apply_overrides(values, parse_set_flags(list(args.set)))
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be a positive integer")
        merged["run.seeds"] = ",".join(str(i) for i in range(args.seeds))
    env_seed = os.environ.get("FEDISM_SEED")
    if env_seed is not None:
        if not env_seed.strip().lstrip("-").isdigit():
            raise ConfigError(f"FEDISM_SEED must be an integer, got {env_seed!r}")
        merged["run.master_seed"] = env_seed.strip()
    return build_config(merged)


def _check_threads(args: argparse.Namespace) -> int:
    if args.threads < 1:
        raise ConfigError("--threads must be a positive integer")
    return args.threads


def _write_run_outputs(
    out: Path, result: ExperimentResult, resolved: dict[str, object]
) -> None:
    for run in result.runs:
        write_seed_run(out, result.method, run, result.config.partition.clients)
    write_summary_json(out / "summary.json", summary_payload(result))
    atomic_write_text(out / "resolved_config", resolved_to_text(resolved))


def _print_summary(result: ExperimentResult) -> None:
    parts = [
        f"{name}={result.summary[name]['mean']:.4f}"
        for name in ("acc_clean", "acc_corrupted", "acc_avg", "sharpness_mean")
    ]
    print(f"{result.method}: " + " ".join(parts))


def cmd_run(args: argparse.Namespace) -> int:
    config, resolved = _load_config(args)
    result = run_experiment(config, max_workers=_check_threads(args))
    _write_run_outputs(Path(args.out), result, resolved)
    _print_summary(result)
    return 0


def _method_variant(config: ExperimentConfig, name: str) -> ExperimentConfig:
    local_rule, agg_rule = _COMPOSITIONS[name]
    return replace(
        config, method=replace(config.method, local_rule=local_rule, agg_rule=agg_rule)
    )


def ablation_table_text(results: dict[str, ExperimentResult]) -> str:
    baseline = results["fedavg"]
    header = ["method"]
    for metric in SUMMARY_METRICS:
        header.extend([metric, f"delta_{metric}"])
    lines = [",".join(header)]
    for name, result in results.items():
        fields = [name]
        for metric in SUMMARY_METRICS:
            value = result.summary[metric]["mean"]
            delta = value - baseline.summary[metric]["mean"]
            fields.extend([repr(value), repr(delta)])
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def cmd_ablate(args: argparse.Namespace) -> int:
    config, resolved = _load_config(args)
    threads = _check_threads(args)
    out = Path(args.out)
    results: dict[str, ExperimentResult] = {}
    for name in ABLATION_METHODS:
        variant = _method_variant(config, name)
        result = run_experiment(variant, max_workers=threads)
        results[name] = result
        for run in result.runs:
            write_seed_run(out, name, run, variant.partition.clients)
        _print_summary(result)

    # Paired design: every method must have trained on byte-identical data.
    hash_sets = {
        seed: {results[m].runs[i].data_hash for m in ABLATION_METHODS}
        for i, seed in enumerate(config.seeds)
    }
    mismatched = {seed: h for seed, h in hash_sets.items() if len(h) != 1}
    if mismatched:
        raise RuntimeError(f"data hashes differ across methods for seeds {sorted(mismatched)}")

    atomic_write_text(out / "ablation.csv", ablation_table_text(results))
    write_summary_json(
        out / "summary.json",
        {name: summary_payload(result) for name, result in results.items()},
    )
    atomic_write_text(out / "resolved_config", resolved_to_text(resolved))
    return 0


def sweep_table_text(param: str, outcomes: list[tuple[float, ExperimentResult]]) -> str:
    header = ["param", "value"]
    for metric in SUMMARY_METRICS:
        header.extend([f"{metric}_mean", f"{metric}_std"])
    lines = [",".join(header)]
    for value, result in outcomes:
        fields = [param, repr(value)]
        for metric in SUMMARY_METRICS:
            fields.extend(
                [repr(result.summary[metric]["mean"]), repr(result.summary[metric]["std"])]
            )
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.param not in SWEEPABLE:
        raise ConfigError(
            f"--param must be one of {', '.join(SWEEPABLE)}, got {args.param!r}"
        )
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("--values must list at least one value")
    threads = _check_threads(args)
    out = Path(args.out)
    _, resolved_base = _load_config(args)  # validate the base config up front

    outcomes: list[tuple[float, ExperimentResult]] = []
    for raw in raw_values:
        point_args = argparse.Namespace(**vars(args))
        point_args.set = list(args.set) + [f"{args.param}={raw}"]
        config, resolved = _load_config(point_args)
        result = run_experiment(config, max_workers=threads)
        _write_run_outputs(out / f"{args.param}={raw}", result, resolved)
        outcomes.append((float(raw), result))
        _print_summary(result)

    atomic_write_text(out / "sweep.csv", sweep_table_text(args.param, outcomes))
    # The base config (sweep value not applied); each value directory holds
    # the exact resolved config for its own run.
    atomic_write_text(out / "resolved_config", resolved_to_text(resolved_base))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verification import report_json, report_lines, run_all_checks

    results = run_all_checks()
    lines = report_lines(results)
    out = Path(args.out)
    atomic_write_text(out / "verify.txt", "\n".join(lines) + "\n")
    atomic_write_text(out / "verify.json", report_json(results))
    for line in lines:
        print(line)
    return 0 if all(r.passed for r in results) else 1


def _landscape_csv(offsets: np.ndarray, losses: np.ndarray) -> str:
    lines = ["x,y,loss"]
    for i, x in enumerate(offsets.tolist()):
        for j, y in enumerate(offsets.tolist()):
            lines.append(f"{x!r},{y!r},{float(losses[i, j])!r}")
    return "\n".join(lines) + "\n"


def cmd_landscape(args: argparse.Namespace) -> int:
    config, resolved = _load_config(args)
    _check_threads(args)
    out = Path(args.out)
    extent = float(resolved["landscape.extent"])  # type: ignore[arg-type]
    steps = int(resolved["landscape.steps"])  # type: ignore[arg-type]

    seed = config.seeds[0]
    prepared = build_seed_data(config, seed)
    run = run_seed(config, seed, prepared)
    params = run.final_state.params
    arch = config.model.architecture(config.task)

    train_clean = [
        s for shard in prepared.shards if shard.quality != QUALITY_CORRUPTED
        for s in shard.samples
    ]
    train_corrupted = [
        s for shard in prepared.shards if shard.quality == QUALITY_CORRUPTED
        for s in shard.samples
    ]
    slices = {
        "train_clean": train_clean,
        "train_corrupted": train_corrupted,
        "test_clean": prepared.clean_test,
        "test_corrupted": prepared.corrupted_test,
    }
    d1 = stream(seed, "landscape", 1).standard_normal(params.size)
    d2 = stream(seed, "landscape", 2).standard_normal(params.size)
    uniform = ClassPriors.uniform(arch.n_classes)
    for name, samples in slices.items():
        if not samples:
            logger.warning("no samples for %s slice; skipping", name)
            continue
        x, y = stack_batch(samples)
        surface = landscape_on(
            lambda p: batch_loss_xy(arch, p, x, y, uniform, 0.0),
            params,
            d1,
            d2,
            extent,
            steps,
        )
        atomic_write_text(
            out / f"landscape_{name}.csv", _landscape_csv(surface.offsets, surface.losses)
        )
    atomic_write_text(out / "resolved_config", resolved_to_text(resolved))
    print(f"landscape slices written to {out}")
    return 0


_COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "landscape": cmd_landscape,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
