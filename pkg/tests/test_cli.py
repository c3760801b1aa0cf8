import json

import numpy as np
import pytest

from reduction_lab import cli

BASE_CONFIG = {
    "instance": "three_level",
    "grid": {"t_max": 2.0, "dt": 0.01},
    "n_paths": 400,
    "seed": 31,
    "checks": ["born", "martingales"],
}

EXPECTED_HEADER = "t,H_t,V_t,purity,xi,W,pi_1,pi_2,pi_3,R_12,R_13,R_23"


def write_config(tmp_path, **overrides):
    cfg = dict(BASE_CONFIG)
    cfg.update(overrides)
    cfg = {k: v for k, v in cfg.items() if v is not None}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(x) for x in line.split(",")] for line in lines[1:]])
    return header, data


class TestSimulate:
    def test_csv_schema_and_row_count(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
        out = tmp_path / "trajectory.csv"
        header, data = read_csv(out)
        assert ",".join(header) == EXPECTED_HEADER
        assert data.shape[0] == 201      # n_steps + 1
        assert data[0, 0] == 0.0
        # t = 0 row carries the initial-state invariants
        assert data[0, 1] == pytest.approx(1.25)      # H
        assert data[0, 2] == pytest.approx(0.6875)    # V
        assert data[0, 6:9] == pytest.approx([0.25, 0.25, 0.5])

    def test_eigenstate_start_zeroes_variance_column(self, tmp_path):
        cfg = write_config(
            tmp_path,
            instance=None,
            hamiltonian={"matrix": {"real": [[0, 0], [0, 1]]}},
            rho0={"real": [[0.0, 0.0], [0.0, 1.0]]},
        )
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
        _, data = read_csv(tmp_path / "trajectory.csv")
        assert np.all(data[:, 2] == 0.0)

    def test_fixed_seed_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        for sub in ("r1", "r2"):
            assert cli.main(["simulate", "--config", cfg,
                             "--out", str(tmp_path / sub)]) == 0
        a = (tmp_path / "r1" / "trajectory.csv").read_bytes()
        b = (tmp_path / "r2" / "trajectory.csv").read_bytes()
        assert a == b

    def test_sde_mode_writes_same_schema(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path),
                         "--mode", "sde"]) == 0
        header, data = read_csv(tmp_path / "trajectory.csv")
        assert ",".join(header) == EXPECTED_HEADER
        assert data.shape[0] == 201

    def test_both_mode_reports_gap(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path),
                         "--mode", "both"]) == 0
        out = capsys.readouterr().out
        assert "closed form" in out

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_config(tmp_path)
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"),
                  "--seed", "99"])
        a = (tmp_path / "a" / "trajectory.csv").read_bytes()
        b = (tmp_path / "b" / "trajectory.csv").read_bytes()
        assert a != b

    def test_missing_config_is_an_error(self, capsys):
        assert cli.main(["simulate"]) == 2
        assert "config" in capsys.readouterr().err


class TestEnsemble:
    def test_outputs_and_verdicts(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["ensemble", "--config", cfg, "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "summary.json").read_text())
        assert set(report["checks"]) == {"born", "martingales"}
        assert all(v["passed"] for v in report["checks"].values())
        assert report["config"]["seed"] == 31
        assert report["base_seed"] == 31
        header, data = read_csv(tmp_path / "summary.csv")
        assert header[0] == "t"
        assert "pi_1_mean" in header and "Phi_12_se" in header
        assert data.shape[0] == 201

    def test_checks_flag_restricts_run(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["ensemble", "--config", cfg, "--out", str(tmp_path),
                         "--checks", "born"]) == 0
        report = json.loads((tmp_path / "summary.json").read_text())
        assert list(report["checks"]) == ["born"]

    def test_failing_check_gives_nonzero_exit(self, tmp_path):
        cfg = write_config(tmp_path, sampler_bias=[0.6, 0.2, 0.2],
                           checks=["born"])
        assert cli.main(["ensemble", "--config", cfg, "--out", str(tmp_path)]) == 1
        report = json.loads((tmp_path / "summary.json").read_text())
        assert not report["checks"]["born"]["passed"]

    def test_paths_override(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["ensemble", "--config", cfg, "--out", str(tmp_path),
                         "--paths", "150"]) == 0
        report = json.loads((tmp_path / "summary.json").read_text())
        assert report["n_paths"] == 150

    def test_single_path_serializes_null_stderr(self, tmp_path):
        cfg = write_config(tmp_path, n_paths=1, checks=[])
        assert cli.main(["ensemble", "--config", cfg, "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "summary.json").read_text())
        assert report["stderr_defined"] is False
        assert report["terminal"]["h_se"] is None


class TestLindblad:
    def test_mean_state_csv(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["lindblad", "--config", cfg, "--out", str(tmp_path)]) == 0
        header, data = read_csv(tmp_path / "lindblad.csv")
        assert header[0] == "t"
        assert "re_11" in header and "im_23" in header
        assert data.shape == (201, 1 + 2 * 9)
        # diagonal is invariant under pure dephasing
        re11 = data[:, header.index("re_11")]
        assert np.allclose(re11, 0.25, atol=1e-9)


class TestGoldenTrajectory:
    def test_first_data_row_is_analytic(self, tmp_path):
        # the t = 0 row is fully determined by the initial state
        cfg = write_config(tmp_path)
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)])
        header, data = read_csv(tmp_path / "trajectory.csv")
        row = dict(zip(header, data[0]))
        assert row["xi"] == 0.0 and row["W"] == 0.0
        assert row["purity"] == pytest.approx(0.42)
        assert row["R_12"] == pytest.approx(0.1)
        assert row["R_13"] == pytest.approx(0.05)
        assert row["R_23"] == pytest.approx(0.1)

    def test_float_formatting_is_round_trip_exact(self, tmp_path):
        cfg = write_config(tmp_path)
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)])
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        value = lines[5].split(",")[1]
        assert float(value) == float(f"{float(value):.17g}")
