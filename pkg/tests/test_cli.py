import json
import os

import numpy as np
import pytest

from torodyn.cli import main


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def jac_cfg(**overrides):
    cfg = {"schema": "torodyn-run/v1", "experiment": "jacobian_superlevel",
           "seed": 0, "params": {"eta": 0.2, "d": 2, "n": 128, "steps": 512}}
    cfg["params"].update(overrides)
    return cfg


def test_run_success_writes_report(tmp_path):
    cfg_path = write_cfg(tmp_path, "run.json", jac_cfg())
    out = tmp_path / "out"
    code = main(["run", "--config", cfg_path, "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert report["experiment"] == "jacobian_superlevel"
    assert (out / "tables" / "delta_search.csv").exists()


def test_run_replay_is_bit_exact(tmp_path):
    cfg_path = write_cfg(tmp_path, "run.json", jac_cfg())
    main(["run", "--config", cfg_path, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg_path, "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a.pop("runtime_s"), b.pop("runtime_s")
    assert a == b


def test_run_verdict_failure_exit_2(tmp_path):
    # an over-large cutoff cannot satisfy a small superlevel bound
    cfg = jac_cfg(eta=0.01, delta_cutoff=0.1)
    cfg_path = write_cfg(tmp_path, "bad.json", cfg)
    code = main(["run", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 2


def test_run_invalid_M_exit_1(tmp_path, capsys):
    cfg = {"schema": "torodyn-run/v1", "experiment": "norm_inflation",
           "seed": 0, "params": {"eps": 0.5, "delta": 0.1, "tau": 0.5,
                                 "M": 0.5}}
    cfg_path = write_cfg(tmp_path, "m.json", cfg)
    code = main(["run", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 1
    assert "M > 1" in capsys.readouterr().err


def test_run_collects_all_violations(tmp_path, capsys):
    cfg = {"schema": "wrong/v0", "experiment": "nope", "seed": "x",
           "params": []}
    cfg_path = write_cfg(tmp_path, "bad.json", cfg)
    assert main(["run", "--config", cfg_path]) == 1
    err = capsys.readouterr().err
    assert "schema" in err and "experiment" in err and "params" in err \
        and "seed" in err


def test_run_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1


def test_env_out_override(tmp_path, monkeypatch):
    cfg_path = write_cfg(tmp_path, "run.json", jac_cfg(n=128))
    monkeypatch.setenv("TORODYN_OUT", str(tmp_path / "envout"))
    code = main(["run", "--config", cfg_path])
    assert code == 0
    assert (tmp_path / "envout" / "report.json").exists()


def test_sweep(tmp_path):
    cfg = {"schema": "torodyn-sweep/v1", "experiment": "jacobian_superlevel",
           "seed": 7, "params": {"d": 2, "n": 128, "steps": 512},
           "grid": {"eta": [0.2, 0.3], "n": [128, 192]}}
    cfg_path = write_cfg(tmp_path, "sweep.json", cfg)
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", cfg_path, "--out", str(out)])
    assert code == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(rows) == 5  # header + 4 rows
    assert rows[0].startswith("row,eta,n,passed,error")
    # deterministic row order: sorted grid keys, itertools.product order
    assert [r.split(",")[1] for r in rows[1:]] == ["0.2", "0.2", "0.3", "0.3"]


def test_sweep_empty_grid(tmp_path, capsys):
    cfg = {"schema": "torodyn-sweep/v1", "experiment": "jacobian_superlevel",
           "params": {}, "grid": {}}
    cfg_path = write_cfg(tmp_path, "sweep.json", cfg)
    assert main(["sweep", "--config", cfg_path]) == 1


def test_sweep_row_failure_recorded(tmp_path):
    cfg = {"schema": "torodyn-sweep/v1", "experiment": "jacobian_superlevel",
           "seed": 0, "params": {"d": 2, "n": 128, "steps": 512},
           "grid": {"eta": [0.2, 2.0]}}   # eta = 2 is invalid -> row error
    cfg_path = write_cfg(tmp_path, "sweep.json", cfg)
    out = tmp_path / "s"
    code = main(["sweep", "--config", cfg_path, "--out", str(out)])
    assert code == 1
    body = (out / "sweep.csv").read_text()
    assert "eta must lie in" in body


def test_verify_unknown_suite():
    with pytest.raises(SystemExit):
        main(["verify", "nope"])  # argparse rejects the choice


def test_verify_weakstar_suite(capsys):
    code = main(["verify", "weakstar"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out and "invariants passed" in out
