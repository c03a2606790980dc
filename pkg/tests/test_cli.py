import csv
import json

import numpy as np
import pytest

from sdcstab import cli

import properties


CONST_MODEL = """\
name = "toy"
n = 2
p = 0
q = 0

[[entry]]
row = 1
col = 1
terms = [{coeff = -0.8, vars = []}]

[[entry]]
row = 2
col = 2
terms = [{coeff = -0.5, vars = []}]
"""


class TestSimulate:
    def test_banks5d_sdre_completes(self, tmp_path):
        code = cli.main([
            "simulate", "--model", "banks5d", "--mode", "sdre",
            "--out", str(tmp_path),
        ])
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["terminated"] == "completed"
        assert summary["fbSwitches"] == 0
        times, states, flags = cli.read_trajectory_csv(
            tmp_path / "trajectory.csv"
        )
        assert times[0] == 0.0 and times[-1] == 3.0
        np.testing.assert_allclose(
            states[0], [-1.3, -1.4, -1.1, -2.0, 0.3]
        )

    def test_banks5d_open_loop_escapes(self, tmp_path):
        code = cli.main([
            "simulate", "--model", "banks5d", "--mode", "open-loop",
            "--out", str(tmp_path),
        ])
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["terminated"] == "escaped"

    def test_zero_initial_state(self, tmp_path):
        code = cli.main([
            "simulate", "--model", "chaffee", "--N", "8", "--mode", "sdre",
            "--x0", ",".join(["0"] * 8), "--tmax", "0.5",
            "--out", str(tmp_path),
        ])
        assert code == 0
        _, states, _ = cli.read_trajectory_csv(tmp_path / "trajectory.csv")
        np.testing.assert_array_equal(states, 0.0)

    def test_roundtrip(self, tmp_path):
        properties.prop_cli_roundtrip(tmp_path)

    def test_reproducibility(self, tmp_path):
        properties.prop_cli_reproducibility(tmp_path)

    def test_preset_fidelity(self):
        properties.prop_preset_fidelity()


class TestCertifyCommand:
    def test_constant_toy_model_certifies(self, tmp_path):
        model_path = tmp_path / "toy.toml"
        model_path.write_text(CONST_MODEL)
        code = cli.main([
            "certify", "--model", str(model_path), "--mode", "open-loop",
            "--horizon", "6", "--radius", "1.0",
            "--out", str(tmp_path),
        ])
        assert code == 0
        verdict = json.loads((tmp_path / "verdict.json").read_text())
        assert verdict["verdict"] == "certified"
        rows = np.genfromtxt(tmp_path / "certificate.csv",
                             delimiter=",", names=True)
        np.testing.assert_array_equal(rows["m_t"], 0.0)

    def test_oscillator_certifies_via_flags(self, tmp_path):
        code = cli.main([
            "certify", "--model", "oscillator", "--alpha", "0.4",
            "--radius", "0.25", "--omega", "0.3", "--horizon", "8",
            "--out", str(tmp_path),
        ])
        assert code == 0
        verdict = json.loads((tmp_path / "verdict.json").read_text())
        assert verdict["verdict"] == "certified"
        assert 4.0 <= verdict["t_star"] <= 8.0

    def test_wide_radius_inconclusive(self, tmp_path):
        code = cli.main([
            "certify", "--model", "oscillator", "--alpha", "0.4",
            "--radius", "2.0", "--omega", "0.3", "--horizon", "6",
            "--out", str(tmp_path),
        ])
        assert code == 0
        verdict = json.loads((tmp_path / "verdict.json").read_text())
        assert verdict["verdict"] == "inconclusive"
        assert verdict["t_star"] is None
        grew = [r for r in verdict["final_over_initial"] if r > 1.0]
        assert grew or verdict["escaped_members"]

    def test_certificate_csv_columns(self, tmp_path):
        model_path = tmp_path / "toy.toml"
        model_path.write_text(CONST_MODEL)
        cli.main([
            "certify", "--model", str(model_path), "--mode", "open-loop",
            "--horizon", "4", "--out", str(tmp_path),
        ])
        with open(tmp_path / "certificate.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["t", "K", "m_t", "M_t", "minus_omega_star"]


class TestBenchmarkCommand:
    def test_banks5d_rows(self, tmp_path):
        code = cli.main([
            "benchmark", "--model", "banks5d",
            "--eps-list", "0.5", "0.9",
            "--out", str(tmp_path),
        ])
        assert code == 0
        with open(tmp_path / "benchmark.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["scheme"] for r in rows] == ["sdre", "p-update", "p-update"]
        eps = [r["epsilon"] for r in rows]
        assert eps[0] == "" and float(eps[1]) == 0.5 and float(eps[2]) == 0.9
        switches = [r["fbSwitches"] for r in rows]
        assert switches[0] == "0"
        assert int(switches[1]) >= int(switches[2])
        assert (tmp_path / "benchmark.txt").exists()

    def test_benchmark_csv_roundtrip(self, tmp_path):
        cfg = cli.ExperimentConfig(model="banks5d", out=str(tmp_path))
        rows, failed = cli.cmd_benchmark(cfg, [0.9], [])
        assert not failed
        with open(tmp_path / "benchmark.csv", newline="") as fh:
            parsed = list(csv.DictReader(fh))
        for row, rec in zip(rows, parsed):
            assert rec["scheme"] == row.scheme
            assert int(rec["fbSwitches"]) == row.fb_switches
            assert int(rec["fEvals"]) == row.f_evals
            assert float(rec["wallTimeSeconds"]) == row.wall_time

    def test_empty_eps_list_gives_sdre_row_only(self, tmp_path):
        code = cli.main([
            "benchmark", "--model", "banks5d", "--eps-list",
            "--out", str(tmp_path),
        ])
        assert code == 0
        with open(tmp_path / "benchmark.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and rows[0]["scheme"] == "sdre"

    def test_partial_failure_flushes_error_row(self, tmp_path):
        # x0 = 0 is a degenerate base point for this plant: the sdre row
        # fails but the table is still written, with exit code 2
        code = cli.main([
            "benchmark", "--model", "banks5d", "--eps-list",
            "--x0", "0,0,0,0,0", "--out", str(tmp_path),
        ])
        assert code == 2
        with open(tmp_path / "benchmark.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["error"] != ""


class TestConfigHandling:
    def test_config_file_merging(self, tmp_path):
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text(
            'model = "banks5d"\nmode = "p-update"\nepsilon = 0.5\n'
            f'out = "{tmp_path}"\n'
        )
        code = cli.main(["simulate", "--config", str(cfg_path),
                         "--eps", "0.9"])
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        # flag overrides the file value; 0.9 gives fewer switches than 0.5
        assert summary["terminated"] == "completed"

    def test_unknown_model_exit_code(self, capsys):
        assert cli.main(["simulate", "--model", "nonsense"]) == 1
        assert "unknown preset" in capsys.readouterr().err

    def test_invalid_epsilon_exit_code(self, capsys):
        code = cli.main([
            "simulate", "--model", "banks5d", "--mode", "p-update",
            "--eps", "1.5",
        ])
        assert code == 1
        assert "epsilon" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        # the five-state plant cannot be stabilized from the origin
        code = cli.main([
            "simulate", "--model", "banks5d", "--mode", "sdre",
            "--x0", "0,0,0,0,0", "--out", str(tmp_path),
        ])
        assert code == 2
        assert "numerical failure" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        cfg_path = tmp_path / "broken.toml"
        cfg_path.write_text("mode = [unterminated\n")
        assert cli.main(["simulate", "--config", str(cfg_path)]) == 1

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV_VAR, str(tmp_path / "envout"))
        code = cli.main([
            "simulate", "--model", "banks5d", "--mode", "open-loop",
        ])
        assert code == 0
        assert (tmp_path / "envout" / "trajectory.csv").exists()

    def test_float_format_roundtrips(self):
        values = [0.1, 1.0 / 3.0, 1e-17, np.pi, 2.0 ** -52]
        for v in values:
            assert float(format(v, ".17g")) == v
