"""Tests for the self-check battery, including a sabotage negative control."""

import contextlib
import io
import json

import numpy as np
import pytest

import fedism.verification as verification
from fedism import cli, nn
from fedism.verification import (
    check_gradient,
    check_minimax_equivalence,
    check_perturbation_norm,
    check_sharpness_closed_form,
    check_sharpness_first_order,
    check_simplex_grid,
    check_weight_laws,
    report_json,
    report_lines,
    run_all_checks,
)


@pytest.fixture(scope="module")
def battery():
    return run_all_checks()


def test_every_check_passes(battery):
    failed = [r.name for r in battery if not r.passed]
    assert failed == [], f"failing checks: {failed}"


def test_battery_covers_every_law_family(battery):
    assert [r.name for r in battery] == [
        "gradient_check",
        "perturbation_norm",
        "sharpness_first_order",
        "sharpness_closed_form",
        "weight_laws",
        "simplex_grid",
        "minimax_equivalence",
    ]


def test_check_results_carry_tolerances_and_timings(battery):
    for r in battery:
        assert r.tolerance
        assert r.detail
        assert r.seconds >= 0.0


def test_report_lines_format(battery):
    lines = report_lines(battery)
    assert len(lines) == len(battery) + 1
    for line, result in zip(lines, battery):
        assert line.startswith("PASS ")
        assert result.name in line
        assert "[tolerance:" in line
    assert lines[-1] == f"{len(battery)}/{len(battery)} checks passed"


def test_report_json_structure(battery):
    payload = json.loads(report_json(battery))
    assert payload["passed"] is True
    assert [c["name"] for c in payload["checks"]] == [r.name for r in battery]
    for c in payload["checks"]:
        assert set(c) == {"name", "passed", "tolerance", "detail", "seconds"}


def test_individual_checks_are_deterministic():
    a = check_sharpness_closed_form()
    b = check_sharpness_closed_form()
    assert a.passed and b.passed
    assert a.detail == b.detail
    g1 = check_gradient(instances=5, seed=3)
    g2 = check_gradient(instances=5, seed=3)
    assert g1.detail == g2.detail


def test_fast_checks_pass_standalone():
    assert check_perturbation_norm(instances=20).passed
    assert check_weight_laws(instances=20).passed
    assert check_simplex_grid().passed
    assert check_minimax_equivalence(instances=10).passed
    assert check_sharpness_first_order(instances=10).passed


# --- negative control ----------------------------------------------------------


def broken_loss_and_grad(arch, params, x, y, priors=None, tau=0.0):
    loss, grad = nn.loss_and_grad_xy(arch, params, x, y, priors, tau)
    grad = grad.copy()
    grad[0] += 1e-2  # a subtle, constant bias on one coordinate
    return loss, grad


def test_gradient_check_catches_a_broken_gradient(monkeypatch):
    monkeypatch.setattr(verification, "_loss_and_grad", broken_loss_and_grad)
    result = check_gradient(instances=5)
    assert not result.passed
    assert "bad coords" in result.detail


def test_sabotaged_battery_fails_the_verify_command(monkeypatch, tmp_path):
    monkeypatch.setattr(verification, "_loss_and_grad", broken_loss_and_grad)

    def small_battery(seed=0, **_):
        return [check_gradient(5, seed), check_weight_laws(20, seed)]

    monkeypatch.setattr(verification, "run_all_checks", small_battery)
    out = tmp_path / "verify"
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout):
        code = cli.main(["verify", "--out", str(out)])
    assert code == 1
    assert "FAIL gradient_check" in stdout.getvalue()
    report = json.loads((out / "verify.json").read_text(encoding="utf-8"))
    assert report["passed"] is False
    text = (out / "verify.txt").read_text(encoding="utf-8")
    assert "FAIL gradient_check" in text and "PASS weight_laws" in text


def test_verify_command_writes_reports(battery, monkeypatch, tmp_path):
    # Reuse the module-scoped battery so the CLI path does not rerun it.
    monkeypatch.setattr(verification, "run_all_checks", lambda **_: list(battery))
    out = tmp_path / "verify"
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout):
        code = cli.main(["verify", "--out", str(out)])
    assert code == 0
    assert "checks passed" in stdout.getvalue()
    report = json.loads((out / "verify.json").read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert (out / "verify.txt").read_text(encoding="utf-8").count("PASS") == len(battery)
