import json

import numpy as np
import pytest

from nlch.cli import EXIT_BLOWUP, EXIT_CERT, EXIT_CONFIG, EXIT_OK, EXIT_STUDY, main
from nlch.config import OUTPUT_ENV, RunConfig, read_snapshot
from nlch.diagnostics import EnergyLedger
from nlch.dynamics import ImexStepper
from nlch.scenarios import monotone_trend, run_limit_study, run_oracle_check


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SHORT = "params.t_end = 0.05\noutputs.snapshot_stride = 25\n"


def test_simulate_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", write_cfg(tmp_path, SHORT), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary == json.loads(capsys.readouterr().out)
    assert summary["status"] == "ok" and summary["steps"] == 50 and summary["energy_monotone"]
    assert summary["drift_phi"] < 1e-13 and summary["certified"]
    led = EnergyLedger.from_csv(out / "ledger.csv")
    assert len(led) == 51 and np.all(np.diff(led["E_eps"]) < 0)
    phi, header = read_snapshot(out / "snapshots" / "phi_00000025.bin")
    assert header["t"] == pytest.approx(0.025) and phi.shape == (33,)
    assert RunConfig.load(out / "config.txt").params["t_end"] == 0.05
    assert json.loads((out / "certification.json").read_text())["passed"]


def test_constant_preset_reports_fixed_point(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SHORT + 'initial_data.preset = "constant"\ninitial_data.mean = 0.3\n'
                    "initial_data.theta_mean = -0.2\noutputs.steady_tol = 1e-10\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["fixed_point"] and summary["drift_phi"] == 0.0 and summary["drift_theta"] == 0.0
    assert summary["max_energy_increase"] == 0.0 and summary["steady_state"]["step"] == 50


def test_invalid_config_rejected_before_running(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "params.epsilon = 0.0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "epsilon" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_certification_failure_and_force(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SHORT + "kernel.params = {\"sigma\": 0.1, \"amplitude\": 1.0}\n")
    assert main(["certify", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_CERT
    report = json.loads((tmp_path / "c" / "certification.json").read_text())
    assert not report["H2"]["feasible"] and report["H3"]["feasible"]
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_CERT
    assert not (tmp_path / "s" / "ledger.csv").exists()
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "f"), "--force"]) == EXIT_OK
    summary = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert summary["forced"] and not summary["certified"]


def test_blow_up_keeps_partial_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "params.stabilization = 0.0\nparams.dt = 0.05\nparams.t_end = 5.0\n"
                    "initial_data.amplitude = 0.5\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_BLOWUP
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["status"] == "blowup" and 0 < summary["steps"] < 100
    assert len(EnergyLedger.from_csv(tmp_path / "b" / "ledger.csv")) == summary["steps"] + 1


def test_output_env_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["certify"]) == EXIT_OK
    assert (tmp_path / "env" / "certification.json").is_file()


def test_seed_flag_changes_data_and_replay_is_bit_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SHORT)
    for name, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", seed]) == EXIT_OK
    a, b, c = ((tmp_path / n / "ledger.csv").read_bytes() for n in "abc")
    assert a == b and a != c


def test_sweep_and_plots(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SHORT + 'study.axis = "alpha"\nstudy.values = [1.0, 0.1]\n')
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--jobs", "2"]) == EXIT_OK
    report = json.loads((out / "sweep.json").read_text())
    assert [r["status"] for r in report["runs"]] == ["ok", "ok"]
    assert (out / "alpha_1.0" / "ledger.csv").is_file() and (out / "sweep.csv").is_file()
    assert main(["plots", str(out)]) == EXIT_OK
    assert (out / "plots" / "sweep.dat").is_file() and (out / "plots" / "plot.gp").is_file()


def test_sweep_rejects_out_of_range_values(tmp_path, capsys):
    cfg = write_cfg(tmp_path, 'study.axis = "epsilon"\nstudy.values = [1.0, 2.0]\n')
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_plots_on_ledger(tmp_path, capsys):
    out = tmp_path / "run"
    main(["simulate", "--config", write_cfg(tmp_path, SHORT), "--out", str(out)])
    capsys.readouterr()
    assert main(["plots", str(out), "--stride", "10"]) == EXIT_OK
    names = {p.name for p in (out / "plots").iterdir()}
    assert {"energy.dat", "energy.png", "residual.dat", "monitors.dat", "means.dat", "plot.gp"} <= names
    rows = [line for line in (out / "plots" / "energy.dat").read_text().splitlines() if not line.startswith("#")]
    assert len(rows) == 6
    assert "energy.dat" in (out / "plots" / "plot.gp").read_text()


def test_plots_empty_dir_leaves_nothing(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["plots", str(empty)]) == EXIT_CONFIG
    assert list(empty.iterdir()) == []
    assert main(["plots"]) == EXIT_CONFIG


def test_limit_study_beta_column_and_loglog(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "params.alpha = 0.5\nparams.t_end = 0.02\nstudy.delta = 1.0\n"
                    "study.epsilons = [0.1, 0.01]\n")
    out = tmp_path / "ls"
    code = main(["limit-study", "--config", cfg, "--out", str(out)])
    printed = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_STUDY)
    lines = (out / "limit_study.csv").read_text().splitlines()
    header = [line for line in lines if not line.startswith("#")][0].split(",")
    assert header == ["epsilon", "delta", "beta", "gap"]
    assert all(float(line.split(",")[2]) == 0.25 for line in lines if line[0].isdigit())
    assert "0.25" in printed
    assert main(["plots", str(out)]) == EXIT_OK
    dat = (out / "plots" / "gap_loglog.dat").read_text().splitlines()
    assert dat[0] == "# log10_epsilon log10_gap" and float(dat[1].split()[0]) == pytest.approx(-1.0)


def test_limit_study_decoupled_gap_is_scheme_error(tmp_path):
    cfg = RunConfig().replace(scenario="limit_study", params={"t_end": 0.05},
                              study={"delta": 0.0, "epsilons": [0.1, 0.01, 0.001]})
    res = run_limit_study(cfg, tmp_path)
    assert res["beta"] == cfg.params["alpha"]
    assert max(res["gaps"]) == 0.0


def test_monotone_trend():
    assert monotone_trend([4, 3, 2, 1])
    assert monotone_trend([4, 3, 3.1, 1])
    assert not monotone_trend([4, 3, 3.3, 1])
    assert not monotone_trend([4, 5, 3, 3.1])


def test_oracle_check_constant_data(tmp_path):
    cfg = RunConfig().replace(scenario="oracle_check", initial_data={"preset": "constant", "mean": 0.2},
                              study={"t_end": 0.01, "dts": [4e-4, 2e-4, 1e-4], "dt_ref": 1e-5})
    res = run_oracle_check(cfg, tmp_path)
    assert res["passed"] and max(res["gaps"]) < 1e-14


class WrongSignCoupling(ImexStepper):
    """Test double that flips the sign of delta in the phi equation only.

    Flipping it in both equations is the symmetry theta -> -theta and would go unnoticed.
    """

    def step_hat(self, phi_hat, theta_hat, phi=None):
        ph, th, phi = super().step_hat(phi_hat, -theta_hat, phi)
        return ph, th + 2 * self.p.epsilon * theta_hat / self.theta_den, phi


def test_oracle_check_catches_wrong_coupling_sign(tmp_path):
    cfg = RunConfig().replace(scenario="oracle_check", params={"delta": 1.0, "delta0": 1.0})
    good = run_oracle_check(cfg, tmp_path / "good")
    bad = run_oracle_check(cfg, tmp_path / "bad", stepper_cls=WrongSignCoupling)
    assert good["passed"] and good["slope"] >= 0.9
    assert not bad["passed"] and bad["finest_gap"] > 100 * good["finest_gap"]


def test_oracle_check_cli_and_contdep(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "params.t_end = 0.02\nstudy.n_pairs = 3\nstudy.t_end = 0.01\n"
                    "study.dts = [4e-4, 2e-4, 1e-4]\nstudy.dt_ref = 1e-5\n")
    assert main(["oracle-check", "--config", cfg, "--out", str(tmp_path / "o")]) in (EXIT_OK, EXIT_STUDY)
    assert (tmp_path / "o" / "oracle_check.csv").is_file()
    capsys.readouterr()
    assert main(["contdep", "--config", cfg, "--out", str(tmp_path / "cd"), "--jobs", "2"]) == EXIT_OK
    assert "pairs: 3, violations: 0" in capsys.readouterr().out
    report = json.loads((tmp_path / "cd" / "contdep.json").read_text())
    assert report["passed"] and len(report["pairs"]) == 3


def test_contdep_requires_h2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "kernel.params = {\"sigma\": 0.1, \"amplitude\": 1.0}\n")
    assert main(["contdep", "--config", cfg, "--out", str(tmp_path / "cd")]) == EXIT_CERT
