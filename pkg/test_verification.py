"""
Tests for the gradcheck and dlp-verify suites
"""

import json
import os
import sys
sys.path.append(os.path.dirname(__file__))

import numpy as np
import pytest

from experiment_config import DlpSection
from qrl_errors import ConfigurationError, OracleRefusedError
from verification import (
    CheckResult,
    VerificationReport,
    _valid_k,
    bound_table,
    check_adjoint_matches_shift,
    check_agent_value_bounds,
    check_label_balance,
    check_matched_accuracy,
    check_oracle_equivalence,
    check_parameter_shift,
    check_score_identity,
    check_softmax_tv,
    deterministic_dlp_table,
    run_dlp_verify,
    run_gradcheck,
)


def test_parameter_shift_suite():
    check = check_parameter_shift(np.random.default_rng(0), n_circuits=20)
    assert check.passed, check.detail
    assert check.value <= 1e-5


def test_wrong_shift_is_detected():
    check = check_parameter_shift(np.random.default_rng(0), n_circuits=5, shift=np.pi / 4)
    assert not check.passed
    assert check.detail["shift_rule"] != pytest.approx(check.detail["finite_difference"])


def test_score_identity_and_adjoint_suites():
    assert check_score_identity(np.random.default_rng(1), n_configs=20).passed
    assert check_adjoint_matches_shift(np.random.default_rng(2), n_configs=4).passed


def test_softmax_tv_suite():
    checks = check_softmax_tv(np.random.default_rng(3), n_vectors=100)
    assert len(checks) == 4
    assert all(c.passed for c in checks)
    assert all(c.detail["ratio"] <= 1.0 for c in checks)


def test_run_gradcheck_selection():
    report = run_gradcheck(0, ["parameter-shift", "score-identity"], n_circuits=10)
    assert report.passed
    assert [c.suite for c in report.checks] == ["parameter-shift", "score-identity"]
    injected = run_gradcheck(0, ["parameter-shift"], inject_shift=0.785, n_circuits=5)
    assert not injected.passed
    assert len(injected.failures) == 1
    with pytest.raises(ConfigurationError):
        run_gradcheck(0, [])
    with pytest.raises(ConfigurationError):
        run_gradcheck(0, ["finite-difference"])


def test_gradcheck_is_seeded():
    a = run_gradcheck(4, ["parameter-shift"], n_circuits=5)
    b = run_gradcheck(4, ["parameter-shift"], n_circuits=5)
    assert a.checks[0].value == b.checks[0].value


def test_report_serialisation(tmp_path):
    report = VerificationReport("gradcheck", 0)
    assert not report.passed
    report.add(CheckResult("demo", "ok", True, 0.0, 1.0))
    report.add(CheckResult("demo", "bad", False, 2.0, 1.0, {"where": "here"}))
    path = report.write_json(str(tmp_path / "nested" / "report.json"))
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    assert data["n_checks"] == 2 and data["n_failed"] == 1 and data["passed"] is False
    assert data["checks"][1]["detail"] == {"where": "here"}


def test_valid_k():
    assert _valid_k(7, 4) == 1
    assert _valid_k(11, 4) == 2
    assert _valid_k(101, 4) == 4
    assert _valid_k(5, 0) == 0


def test_dlp_checks():
    rng = np.random.default_rng(0)
    assert check_label_balance([7, 11, 13], 5, rng).passed
    equivalence = check_oracle_equivalence([7, 11], 4, rng)
    assert equivalence.passed
    assert equivalence.detail["pairs"] == 6 * 6 + 10 * 10
    matched = check_matched_accuracy(DlpSection(p=101, k=4, shots=1024), rng)
    assert all(c.passed for c in matched)
    assert matched[0].detail["closed_form"] == pytest.approx(0.85)


def test_bound_table():
    rows = bound_table(DlpSection())
    assert rows[0]["gap"] == pytest.approx(0.0995, abs=5e-4)
    assert rows[1]["accuracy"] == 0.99


def test_agent_value_bounds_check():
    section = DlpSection(p=101, k=4, agent_episodes=2000)
    check = check_agent_value_bounds(section, 0.86, 0.9, np.random.default_rng(5))
    assert check.passed, check.detail
    assert check.detail["accuracy"] == pytest.approx(0.85)
    assert check.detail["lower"] <= check.value <= check.detail["upper"] + 3 * check.detail["stderr"]


def test_deterministic_dlp_table():
    table = deterministic_dlp_table(DlpSection(p=11, k=4, instances=10), np.random.default_rng(0))
    assert table["matched_min_value"] == 1.0
    assert table["learner_k"] == 2
    assert 0.0 <= table["uniform_test_reward"] <= 1.0


def test_run_dlp_verify_without_theorem_table():
    section = DlpSection(primes=[7, 11], p=101, k=4, instances=100, monte_carlo_episodes=20000,
                         gammas=[0.0, 0.9])
    report = run_dlp_verify(section, 0, include_theorem=False)
    assert report.passed, [c.name for c in report.failures]
    assert "theorem" not in report.tables
    assert [row["gamma"] for row in report.tables["random_values"]] == [0.0, 0.9]
    assert [row["slip"] for row in report.tables["agent_values"]] == [0.86, 0.5]
    assert any(c.name.startswith("matched agent value within bounds") for c in report.checks)


def test_dlp_verify_refuses_large_primes():
    with pytest.raises(OracleRefusedError):
        run_dlp_verify(DlpSection(primes=[7, 2 ** 31 - 1]), 0)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for name, fn in [(n, f) for n, f in list(globals().items()) if n.startswith("test_") and callable(f)]:
        if fn.__code__.co_argcount:
            with tempfile.TemporaryDirectory() as tmp:
                fn(Path(tmp))
        else:
            fn()
        print(f"[OK] {name}")
    print("[OK] verification tests passed")
