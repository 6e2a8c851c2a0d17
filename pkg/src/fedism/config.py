"""Plain-text experiment configuration.

Files hold one ``dotted.key = value`` pair per line, with ``#`` comments and
blank lines ignored. Parsing is strict: unknown keys and malformed values
are rejected by name, so typos cannot silently fall back to defaults.
Command-line overrides use the same keys, and the resolved configuration
(every key, defaults included) can be serialized back out so a run can be
reproduced from its output directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .data import CorruptionSpec, PartitionSpec
from .experiment import ExperimentConfig, ModelSpec, TaskSpec
from .federation import MethodSpec
from .sharpness import local_rule_names


class ConfigError(ValueError):
    """A configuration problem the user must fix; always names the key."""


@dataclass(frozen=True)
class _Field:
    parse: Callable[[str], object]
    default: str
    help: str


def _parse_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"expected an integer, got {raw!r}") from exc


def _parse_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ValueError(f"expected a number, got {raw!r}") from exc


def _parse_int_list(raw: str) -> tuple[int, ...]:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise ValueError(f"expected a comma-separated integer list, got {raw!r}")
    return tuple(_parse_int(item) for item in items)


def _parse_str(raw: str) -> str:
    return raw.strip()


SCHEMA: dict[str, _Field] = {
    "task.classes": _Field(_parse_int, "5", "number of classes"),
    "task.features": _Field(_parse_int, "20", "feature dimension"),
    "task.n_per_class": _Field(_parse_int, "500", "samples per class"),
    "task.separation": _Field(_parse_float, "12.0", "mean distance between class centers"),
    "model.hidden": _Field(_parse_int_list, "64", "hidden layer widths"),
    "model.activation": _Field(_parse_str, "relu", "hidden activation (relu or tanh)"),
    "partition.clients": _Field(_parse_int, "10", "number of clients"),
    "partition.alpha": _Field(_parse_float, "1.0", "label-skew concentration"),
    "partition.corrupted_ratio": _Field(_parse_float, "0.2", "fraction of corrupted clients"),
    "partition.corruption": _Field(_parse_str, "gaussian_noise", "corruption kind"),
    "partition.severity": _Field(_parse_float, "1.0", "noise scale in clean-train stds"),
    "method.local_rule": _Field(_parse_str, "sam", "local update rule (plain or sam)"),
    "method.agg_rule": _Field(_parse_str, "sharpness_q", "aggregation rule (size, sharpness_q, loss_q)"),
    "method.q": _Field(_parse_float, "2.0", "aggregation power"),
    "method.beta": _Field(_parse_float, "0.5", "weight moving-average factor"),
    "method.rho": _Field(_parse_float, "0.2", "perturbation radius"),
    "method.eta": _Field(_parse_float, "0.05", "local learning rate"),
    "method.batch_size": _Field(_parse_int, "32", "local mini-batch size"),
    "method.local_epochs": _Field(_parse_int, "1", "local passes per round"),
    "method.tau": _Field(_parse_float, "1.0", "logit-adjustment strength"),
    "run.rounds": _Field(_parse_int, "100", "federated rounds"),
    "run.eval_window": _Field(_parse_int, "5", "rounds averaged for the summary"),
    "run.seeds": _Field(_parse_int_list, "0,1,2", "experiment seeds"),
    "run.master_seed": _Field(_parse_int, "0", "offset added to every seed"),
    "landscape.extent": _Field(_parse_float, "1.0", "half-width of landscape slices"),
    "landscape.steps": _Field(_parse_int, "21", "landscape grid points per axis (odd)"),
}

# Parameters the sweep command may vary.
SWEEPABLE = ("method.q", "method.beta", "method.rho", "partition.corrupted_ratio")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse key = value lines; reject unknown keys by name."""
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {raw_line!r}"
            )
        key, _, raw_value = line.partition("=")
        key = key.strip()
        value = raw_value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(values: dict[str, str], overrides: dict[str, str]) -> dict[str, str]:
    """Layer overrides (already key=value form) on top of file values."""
    merged = dict(values)
    for key, value in overrides.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} in override")
        merged[key] = value
    return merged


def parse_set_flags(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} in --set")
        out[key] = value.strip()
    return out


def resolve(values: dict[str, str]) -> dict[str, object]:
    """Fill defaults, parse every value, and report bad values by key."""
    resolved: dict[str, object] = {}
    for key, spec in SCHEMA.items():
        raw = values.get(key, spec.default)
        try:
            resolved[key] = spec.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return resolved


def build_config(values: dict[str, str]) -> tuple[ExperimentConfig, dict[str, object]]:
    """Turn raw key/value strings into a validated ExperimentConfig.

    Returns the config plus the fully resolved mapping. The master seed is
    folded into the seed list here (seed + master for each seed), and the
    resolved mapping reflects that: its run.seeds are the effective seeds and
    its run.master_seed is zero, so re-running from a resolved config file
    reproduces the run exactly.
    """
    r = resolve(values)
    master = int(r["run.master_seed"])  # type: ignore[arg-type]
    if master < 0:
        raise ConfigError("bad value for run.master_seed: must be non-negative")
    seeds = tuple(int(s) + master for s in r["run.seeds"])  # type: ignore[union-attr]
    try:
        config = ExperimentConfig(
            task=TaskSpec(
                classes=r["task.classes"],
                features=r["task.features"],
                n_per_class=r["task.n_per_class"],
                separation=r["task.separation"],
            ),
            model=ModelSpec(
                hidden=tuple(r["model.hidden"]),
                activation=r["model.activation"],
            ),
            partition=PartitionSpec(
                clients=r["partition.clients"],
                alpha=r["partition.alpha"],
                corrupted_ratio=r["partition.corrupted_ratio"],
                corruption=CorruptionSpec(
                    kind=r["partition.corruption"],
                    severity=r["partition.severity"],
                ),
            ),
            method=MethodSpec(
                local_rule=r["method.local_rule"],
                agg_rule=r["method.agg_rule"],
                q=r["method.q"],
                beta=r["method.beta"],
                rho=r["method.rho"],
                eta=r["method.eta"],
                batch_size=r["method.batch_size"],
                local_epochs=r["method.local_epochs"],
                tau=r["method.tau"],
            ),
            rounds=r["run.rounds"],
            eval_window=r["run.eval_window"],
            seeds=seeds,
        )
        # Constructing the architecture validates the activation name and
        # layer widths now, rather than mid-run.
        config.model.architecture(config.task)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.method.local_rule not in local_rule_names():
        raise ConfigError(
            f"bad value for method.local_rule: {config.method.local_rule!r}"
        )
    resolved = dict(r)
    resolved["run.seeds"] = seeds
    resolved["run.master_seed"] = 0
    return config, resolved


def resolved_to_text(resolved: dict[str, object]) -> str:
    """Serialize a resolved mapping back to the config file format."""
    lines = []
    for key in SCHEMA:
        value = resolved[key]
        if isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
