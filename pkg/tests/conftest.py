"""Shared fixtures: small, fast experiment configurations."""

from dataclasses import replace

import pytest

from fedism.data import PartitionSpec
from fedism.experiment import ExperimentConfig, ModelSpec, TaskSpec
from fedism.federation import MethodSpec

TINY_CONFIG_TEXT = """\
task.classes = 3
task.features = 5
task.n_per_class = 60
task.separation = 6.0
model.hidden = 16
partition.clients = 5
method.eta = 0.1
run.rounds = 6
run.eval_window = 2
run.seeds = 0,1
landscape.steps = 5
"""


def make_tiny_config(**method_overrides) -> ExperimentConfig:
    """A complete experiment small enough to run in well under a second."""
    method_overrides.setdefault("eta", 0.1)
    method = MethodSpec(**method_overrides)
    return ExperimentConfig(
        task=TaskSpec(classes=3, features=5, n_per_class=60, separation=6.0),
        model=ModelSpec(hidden=(16,), activation="relu"),
        partition=PartitionSpec(clients=5, alpha=1.0, corrupted_ratio=0.2),
        method=method,
        rounds=6,
        seeds=(0, 1),
        eval_window=2,
    )


@pytest.fixture()
def tiny_config() -> ExperimentConfig:
    return make_tiny_config()


@pytest.fixture()
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG_TEXT, encoding="utf-8")
    return path


def variant(config: ExperimentConfig, local_rule: str, agg_rule: str) -> ExperimentConfig:
    return replace(
        config, method=replace(config.method, local_rule=local_rule, agg_rule=agg_rule)
    )
