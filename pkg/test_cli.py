"""
End-to-end tests of the experiment runner: exit codes, record files and reproducibility
"""

import json
import os
import sys
sys.path.append(os.path.dirname(__file__))

import numpy as np
import pytest
import yaml

from cli import main
from dlp import read_instances
from experiment_config import OUTPUT_ROOT_ENV, load_config
from qrl_errors import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK
from run_records import SCHEMA_VERSION, load_parameters, read_records

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")

TINY_CARTPOLE = {
    "environment": {"id": "cartpole"},
    "policy": {"kind": "softmax", "n_qubits": 4, "d_enc": 1},
    "trainer": {"episodes": 4, "batch_size": 2, "horizon": 20},
    "run": {"eval_episodes": 5},
}


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(root))
    return root


def _config(tmp_path, data, name="experiment.yaml") -> str:
    path = str(tmp_path / name)
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(data, handle)
    return path


def _read_bytes(path) -> bytes:
    with open(path, "rb") as handle:
        return handle.read()


def test_missing_seed_is_a_configuration_error(tmp_path, output_root):
    assert main(["train", "--config", _config(tmp_path, TINY_CARTPOLE)]) == EXIT_CONFIG
    assert main(["gradcheck"]) == EXIT_CONFIG


def test_unknown_config_key_exits_with_configuration_error(tmp_path, output_root):
    path = _config(tmp_path, {"trainer": {"epochs": 3}})
    assert main(["train", "--config", path, "--seed", "0"]) == EXIT_CONFIG


def test_empty_gradcheck_suite(output_root):
    assert main(["gradcheck", "--seed", "0", "--suite"]) == EXIT_CONFIG


def test_gradcheck_passes_and_writes_report(tmp_path, output_root):
    report = tmp_path / "gradcheck.json"
    code = main(["gradcheck", "--seed", "0", "--suite", "parameter-shift", "score-identity",
                 "--circuits", "10", "--report", str(report)])
    assert code == EXIT_OK
    with open(report, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    assert data["passed"] is True
    assert data["n_checks"] == 2


def test_injected_shift_fails_gradcheck(tmp_path, output_root):
    report = tmp_path / "injected.json"
    code = main(["gradcheck", "--seed", "0", "--suite", "parameter-shift", "--circuits", "5",
                 "--inject-shift", "0.785", "--report", str(report)])
    assert code == EXIT_CHECK_FAILED
    with open(report, "r", encoding="utf-8") as handle:
        assert json.load(handle)["n_failed"] == 1


def test_train_writes_records(tmp_path, output_root):
    path = _config(tmp_path, TINY_CARTPOLE)
    assert main(["train", "--config", path, "--seed", "0", "1", "--name", "tiny"]) == EXIT_OK
    run_dir = output_root / "tiny"
    for name in ("config.yaml", "run_seed0.csv", "run_seed1.csv", "timing_seed0.csv", "params_seed0.npz",
                 "aggregate.csv"):
        assert (run_dir / name).exists(), name
    with open(run_dir / "run_seed0.csv", "r", encoding="utf-8") as handle:
        assert handle.readline().strip() == f"# schema_version: {SCHEMA_VERSION}"
    runs = read_records(str(run_dir / "run_seed0.csv"))
    assert list(runs.columns) == ["seed", "episode", "return", "moving_average", "beta"]
    assert len(runs) == 4
    assert np.all((runs["return"] >= 1) & (runs["return"] <= 20))
    timing = read_records(str(run_dir / "timing_seed0.csv"))
    assert np.all(timing["wall_ms"] >= 0)


def test_aggregate_matches_runs(tmp_path, output_root):
    path = _config(tmp_path, TINY_CARTPOLE)
    assert main(["train", "--config", path, "--seed", "3", "4", "--name", "agg"]) == EXIT_OK
    run_dir = output_root / "agg"
    a = read_records(str(run_dir / "run_seed3.csv"))
    b = read_records(str(run_dir / "run_seed4.csv"))
    aggregate = read_records(str(run_dir / "aggregate.csv"))
    assert np.all(aggregate["n_seeds"] == 2)
    assert np.allclose(aggregate["return_mean"], (a["return"].values + b["return"].values) / 2)
    assert np.allclose(aggregate["return_std"], np.abs(a["return"].values - b["return"].values) / 2)


def test_reruns_are_byte_identical(tmp_path, output_root):
    path = _config(tmp_path, TINY_CARTPOLE)
    assert main(["train", "--config", path, "--seed", "7", "--name", "first"]) == EXIT_OK
    assert main(["train", "--config", path, "--seed", "7", "--name", "second"]) == EXIT_OK
    for name in ("run_seed7.csv", "aggregate.csv"):
        assert _read_bytes(output_root / "first" / name) == _read_bytes(output_root / "second" / name)


def test_episodes_override(tmp_path, output_root):
    path = _config(tmp_path, TINY_CARTPOLE)
    assert main(["train", "--config", path, "--seed", "0", "--name", "short", "--episodes", "2"]) == EXIT_OK
    assert len(read_records(str(output_root / "short" / "run_seed0.csv"))) == 2


def test_eval_after_train(tmp_path, output_root):
    path = _config(tmp_path, TINY_CARTPOLE)
    assert main(["train", "--config", path, "--seed", "0", "--name", "evaluated"]) == EXIT_OK
    assert main(["eval", "--config", path, "--seed", "0", "--name", "evaluated"]) == EXIT_OK
    records = read_records(str(output_root / "evaluated" / "eval_seed0.csv"))
    assert len(records) == 5


def test_eval_fixed_dlp_agent(tmp_path, output_root):
    path = _config(tmp_path, {
        "environment": {"id": "cliffwalk-dlp", "params": {"p": 101, "slip_delta": 0.5, "gamma": 0.9}},
        "policy": {"kind": "dlp-agent", "dlp_k": 2},
        "run": {"eval_episodes": 50, "name": "agent"},
    })
    assert main(["eval", "--config", path, "--seed", "0"]) == EXIT_OK
    records = read_records(str(output_root / "agent" / "eval_seed0.csv"))
    assert len(records) == 50
    assert np.all(records["return"] <= 0)
    # dlp agents have nothing to train
    assert main(["train", "--config", path, "--seed", "0"]) == EXIT_CONFIG


def _shrunk_shipped_config(tmp_path, name: str) -> str:
    with open(os.path.join(CONFIG_DIR, name), "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    data["policy"]["d_enc"] = 1
    data["trainer"].update({"episodes": 4, "batch_size": 2, "horizon": 20})
    return _config(tmp_path, data, name)


@pytest.mark.parametrize("name, frozen, trained", [
    ("cartpole_freeze_lambda.yaml", "lam", "w"),
    ("cartpole_freeze_w.yaml", "w", "lam"),
])
def test_ablation_configs_freeze_their_group(tmp_path, output_root, name, frozen, trained):
    path = _shrunk_shipped_config(tmp_path, name)
    assert main(["train", "--config", path, "--seed", "0", "--name", "ablation"]) == EXIT_OK
    groups = load_parameters(str(output_root / "ablation" / "params_seed0.npz"))
    assert np.array_equal(groups[frozen], np.ones_like(groups[frozen]))
    assert not np.allclose(groups[trained], 1.0)


def test_comparator_and_depth_configs(tmp_path, output_root):
    shallow = load_config(os.path.join(CONFIG_DIR, "cartpole_depth1.yaml"))
    assert shallow.policy.d_enc == 1
    comparator = load_config(os.path.join(CONFIG_DIR, "cliffwalk_pqc_mlp.yaml"))
    assert (comparator.environment.id, comparator.policy_kind()) == ("cliffwalk-pqc", "mlp")
    path = _config(tmp_path, {"environment": {"id": "cliffwalk-pqc", "params": {"generator_seed": 0}},
                              "policy": {"kind": "mlp", "mlp_hidden": [16, 16, 16, 16]},
                              "trainer": {"episodes": 4, "batch_size": 2}})
    assert main(["train", "--config", path, "--seed", "0", "--name", "comparator"]) == EXIT_OK
    assert len(read_records(str(output_root / "comparator" / "run_seed0.csv"))) == 4


def test_gen_env_pqc_dataset(tmp_path, output_root):
    path = _config(tmp_path, {"environment": {"id": "sl-pqc", "params": {"generator_seed": 0}},
                              "run": {"name": "generated"}})
    assert main(["gen-env", "--config", path, "--seed", "0"]) == EXIT_OK
    dataset = read_records(str(output_root / "generated" / "dataset_seed0.csv"))
    assert len(dataset) == 20
    assert sorted(dataset["label"].value_counts().to_dict().items()) == [(-1, 10), (1, 10)]
    assert sorted(dataset["path_position"]) == list(range(20))
    assert (output_root / "generated" / "generator_seed0.npz").exists()


def test_gen_env_dlp_instance(tmp_path, output_root):
    path = _config(tmp_path, {"environment": {"id": "deterministic-dlp", "params": {"p": 11, "g": 2, "s": 4}},
                              "run": {"name": "chain"}})
    assert main(["gen-env", "--config", path, "--seed", "5"]) == EXIT_OK
    [(instance, seed)] = read_instances(str(output_root / "chain" / "instances_seed5.txt"))
    assert (instance.p, instance.g, instance.s, seed) == (11, 2, 4, 5)
    chain = read_records(str(output_root / "chain" / "chain_seed5.csv"))
    assert list(chain["role"])[-1] == "test"


def test_gen_env_rejects_classic_environments(tmp_path, output_root):
    path = _config(tmp_path, {"environment": {"id": "cartpole"}})
    assert main(["gen-env", "--config", path, "--seed", "0"]) == EXIT_CONFIG


if __name__ == "__main__":
    print("[INFO] Run with pytest: python -m pytest test_cli.py")
