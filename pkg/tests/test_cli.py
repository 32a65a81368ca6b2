import csv
import json

import pytest

from beliefcover.cli import main, validate_config
from beliefcover.errors import BadSpec


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_gen_model_is_byte_stable(tmp_path):
    cfg = _write(tmp_path, {"seed": 4, "model": {"family": "random", "n_states": 3, "n_actions": 2, "n_obs": 2}})
    assert main(["gen-model", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-model", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/model.json").read_bytes() == (tmp_path / "b/model.json").read_bytes()
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    assert len(man["config_sha256"]) == 64 and man["passed"]
    assert main(["gen-model", "--config", cfg, "--out", str(tmp_path / "c"), "--seed-override", "5"]) == 0
    assert (tmp_path / "a/model.json").read_bytes() != (tmp_path / "c/model.json").read_bytes()


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, {"model": {"family": "chain"}, "typo": 1})
    assert main(["gen-model", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "BadSpec" in capsys.readouterr().err
    with pytest.raises(BadSpec):
        validate_config({"model": {"family": "chain", "colour": "red"}})


def test_empty_grid_is_bad_spec(tmp_path):
    cfg = _write(tmp_path, {"model": {"family": "chain"}, "estimate": {"n_grid": []}})
    assert main(["estimate-ds", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    man = json.loads((tmp_path / "o/manifest.json").read_text())
    assert man["error"]["type"] == "BadSpec"


def test_verify_lemmas_default_suite(tmp_path):
    cfg = _write(tmp_path, {"lemmas": {"trials": 20}})
    assert main(["verify-lemmas", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o/manifest.json").read_text())
    assert len(man["verdicts"]) == 7


def test_estimate_ds_writes_bound_and_error(tmp_path):
    cfg = _write(tmp_path, {
        "model": {"family": "revealing", "n_states": 2, "n_actions": 2, "gamma": 0.5},
        "policies": {"pi_e": {"kind": "constant", "dist": [0.3, 0.7]}},
        "estimate": {"n_grid": [500, 5000], "seeds": 2, "depth": 4, "eps": "balanced"},
    })
    assert main(["estimate-ds", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o/estimates.csv")))
    assert len(rows) == 4 and {"bound", "error"} <= set(rows[0])


def test_coverage_and_sweep_commands(tmp_path):
    cfg = _write(tmp_path, {
        "model": {"family": "revealing", "n_states": 2, "n_actions": 2},
        "policies": {"pi_e": {"kind": "history", "depth": 3}, "pi_b": {"kind": "history", "depth": 3, "min_prob": 0.1}},
        "coverage": {"T_grid": [1, 2], "depth": 3, "instances": 2},
        "sweep": {"kind": "abstraction-error", "eps_grid": [0.1, 0.2], "depth": 5},
    })
    assert main(["diagnose-coverage", "--config", cfg, "--out", str(tmp_path / "cov")]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw")]) == 0
    assert len(list(csv.DictReader(open(tmp_path / "cov/coverage.csv")))) == 4


def test_gen_data_round_trip(tmp_path):
    from beliefcover.data import load

    cfg = _write(tmp_path, {
        "model": {"family": "random", "n_states": 2, "n_actions": 2, "n_obs": 2, "horizon": 3},
        "data": {"kind": "d2", "n": 30},
    })
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert len(load(tmp_path / "o/dataset")) == 30
