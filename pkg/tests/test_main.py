import json

import numpy as np
import pytest
from conftest import EXCITED, SIGMA_MINUS, complex_json

from qsde.main import run
from qsde.utils.output_utils import config_hash, csv_body


def read_csv(path):
    lines = open(path).read().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    body = [l.split(",") for l in lines if not l.startswith("#")]
    return comments, body[0], [[float(x) for x in row] for row in body[1:]]


def test_germ_check_passes(write_config, damped_structural_config, capsys):
    path = write_config(damped_structural_config)
    assert run(["germ-check", "--config", path, "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["is_ccp"] is True
    assert report["min_eig"] >= -1e-10


def test_germ_check_with_dilation(write_config, damped_structural_config, capsys):
    path = write_config(damped_structural_config)
    assert run(["germ-check", "--config", path, "--dilate", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["dilation"]["identity_residual"] <= 1e-8


def test_germ_check_tampered(write_config, damped_structural_config, capsys):
    damped_structural_config["model"]["tamper"] = "negate_channel_block"
    path = write_config(damped_structural_config)
    assert run(["germ-check", "--config", path]) == 3
    assert "qsde-error[3] CCPFailure" in capsys.readouterr().err


def test_malformed_configs(write_config, damped_structural_config, tmp_path, capsys):
    del damped_structural_config["model"]["H"]
    assert run(["germ-check", "--config", write_config(damped_structural_config)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run(["germ-check", "--config", str(broken)]) == 2
    assert run(["germ-check", "--config", str(tmp_path / "missing.json")]) == 2
    assert run(["no-such-command"]) == 2
    assert "qsde-error[2]" in capsys.readouterr().err


def test_ito_check_on_element_list(write_config, capsys):
    path = write_config([
        {"kind": "death", "k_dim": 1, "label": "dt"},
        {"kind": "poisson", "zeta": 1.0, "label": "dP"},
    ])
    assert run(["ito-check", "--config", path, "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["is_closed"] is True
    assert report["table"]["dP * dP"] == "dt + dP"


def test_ito_check_default_basis(write_config, capsys):
    assert run(["ito-check", "--config", write_config({})]) == 0
    out = capsys.readouterr().out
    assert "closed: True" in out
    assert "dA-[1] * dA+[1]" in out


def test_dilate(write_config, damped_structural_config, capsys):
    path = write_config(damped_structural_config)
    assert run(["dilate", "--config", path, "--samples", "5", "--seed", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["identity_residual"] <= 1e-8
    assert max(report["dilation_identities"].values()) <= 1e-8


def test_ensemble_is_reproducible(write_config, damped_trajectory_config, tmp_path, monkeypatch):
    path = write_config(damped_trajectory_config)
    outputs = []
    for threads, name in (("1", "a.csv"), ("2", "b.csv"), ("2", "c.csv")):
        monkeypatch.setenv("QSDE_THREADS", threads)
        out = tmp_path / name
        assert run(["ensemble", "--config", path, "--seed", "9", "--out", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_ensemble_output_envelope(write_config, damped_trajectory_config, tmp_path):
    path = write_config(damped_trajectory_config)
    out = tmp_path / "ens.csv"
    assert run(["ensemble", "--config", path, "--ntraj", "40", "--seed", "5", "--out", str(out)]) == 0
    comments, header, rows = read_csv(out)
    assert header == ["t", "excited_mean_re", "excited_mean_im", "excited_stderr", "norm_mean", "norm_stderr"]
    assert any(c.startswith("# master_seed: 5") for c in comments)
    assert any(c.startswith("# config_sha256: ") for c in comments)
    np.testing.assert_allclose([r[1] for r in rows], np.exp(-np.array([r[0] for r in rows])), atol=1e-12)


def test_different_seed_changes_body(write_config, damped_trajectory_config, tmp_path):
    path = write_config(damped_trajectory_config)
    bodies = []
    for seed in ("1", "2"):
        out = tmp_path / f"{seed}.csv"
        run(["ensemble", "--config", path, "--ntraj", "50", "--seed", seed, "--out", str(out)])
        bodies.append(csv_body(out.read_text()))
    assert bodies[0] != bodies[1]


def test_trajectory_json(write_config, damped_trajectory_config, tmp_path):
    path = write_config(damped_trajectory_config)
    out = tmp_path / "traj.json"
    assert run(["trajectory", "--config", path, "--seed", "4", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"]["master_seed"] == 4
    assert doc["data"]["columns"] == ["t", "excited_re", "excited_im", "weight"]
    assert doc["data"]["rows"][0] == [0.0, 1.0, 0.0, 1.0]


def test_master_and_picard(write_config, damped_structural_config, tmp_path):
    path = write_config(damped_structural_config)
    master_out, picard_out = tmp_path / "m.csv", tmp_path / "p.csv"
    assert run(["master", "--config", path, "--out", str(master_out)]) == 0
    assert run(["picard", "--config", path, "--iters", "3", "--out", str(picard_out)]) == 0
    _, header, master_rows = read_csv(master_out)
    _, _, picard_rows = read_csv(picard_out)
    assert header == ["t", "excited_re", "excited_im"]
    t = np.array([r[0] for r in master_rows])
    np.testing.assert_allclose([r[1] for r in master_rows], np.exp(-t), atol=1e-8)
    np.testing.assert_allclose([r[1] for r in picard_rows], np.exp(-t), atol=1e-8)


def test_master_schrodinger_branch(write_config, damped_structural_config, tmp_path):
    damped_structural_config["rho0"] = complex_json(EXCITED)
    out = tmp_path / "rho.csv"
    assert run(["master", "--config", write_config(damped_structural_config), "--out", str(out)]) == 0
    _, _, rows = read_csv(out)
    np.testing.assert_allclose(rows[-1][1], np.exp(-1.0), atol=1e-8)


def test_numerical_abort_leaves_no_output(write_config, tmp_path, capsys):
    config = {
        "model": {"type": "trajectory", "K": complex_json(-1e4 * np.eye(2)),
                  "channels": [{"kind": "diffusive", "op": complex_json(SIGMA_MINUS)}]},
        "simulation": {"dt": 1e-3, "tmax": 1.0, "ntraj": 3, "seed": 1},
    }
    out = tmp_path / "never.csv"
    assert run(["ensemble", "--config", write_config(config), "--out", str(out)]) == 4
    assert not out.exists()
    assert list(tmp_path.glob(".never.csv.*")) == []
    assert "qsde-error[4] NumericalAbort" in capsys.readouterr().err


def test_trajectory_command_needs_trajectory_model(write_config, damped_structural_config):
    assert run(["trajectory", "--config", write_config(damped_structural_config)]) == 2


def test_config_hash_is_canonical():
    assert config_hash({"b": 1, "a": [1.0, 2]}) == config_hash({"a": [1.0, 2], "b": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


@pytest.mark.parametrize("level", ["DEBUG", "warning"])
def test_log_level_option(write_config, damped_structural_config, level):
    path = write_config(damped_structural_config)
    assert run(["--log-level", level, "germ-check", "--config", path]) == 0


def test_bad_thread_setting(write_config, damped_trajectory_config, monkeypatch):
    monkeypatch.setenv("QSDE_THREADS", "many")
    assert run(["ensemble", "--config", write_config(damped_trajectory_config)]) == 2


def test_linalg_failure_is_numerical(write_config, damped_structural_config, monkeypatch, capsys):
    def no_convergence(*args, **kwargs):
        raise np.linalg.LinAlgError("Eigenvalues did not converge")

    monkeypatch.setattr("qsde.main.check_ccp", no_convergence)
    assert run(["germ-check", "--config", write_config(damped_structural_config)]) == 4
    assert "qsde-error[4] LinAlgError" in capsys.readouterr().err
