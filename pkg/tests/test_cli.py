import numpy as np
import pytest

from vacqueue import experiments
from vacqueue import heuristics as H
from vacqueue.cli import HEURISTIC_COLUMNS, main
from vacqueue.experiments import ConfigError, Preset, SweepSpec, load_config, run_preset
from vacqueue.output import read_csv

MODEL = ["--b", "-2", "--mu", "1", "--sigma", "3", "--beta", "2", "--gamma", "0.1"]


def run(argv, capsys=None):
    code = main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


class TestHeuristic:
    def test_table_and_row(self, capsys, tmp_path):
        code, out = run(["heuristic", *MODEL, "--out", str(tmp_path / "h.csv")], capsys)
        assert code == 0
        lines = out.out.strip().splitlines()
        assert lines[-2] == ",".join(HEURISTIC_COLUMNS)
        row = dict(zip(HEURISTIC_COLUMNS, map(float, lines[-1].split(","))))
        assert row["pow0"] == H.pow0(-2, 1, 3)
        assert row["pow_tilde"] == H.pow_tilde(-2, 1, 3, 2, 0.1)
        assert row["sd_tilde"] == H.sd_tilde(-2, 3, 2, 0.1)
        assert any(line.startswith("pow0") and "0.2470004" in line for line in lines)
        cfg, cols, data = read_csv(tmp_path / "h.csv")
        assert tuple(cols) == HEURISTIC_COLUMNS and data[0, cols.index("pow0")] == row["pow0"]

    def test_positive_drift_is_config_error(self, capsys):
        code, out = run(["heuristic", "--b", "2", "--mu", "1", "--sigma", "3"], capsys)
        assert code == 2 and "negative" in out.err

    def test_missing_model(self, capsys):
        assert run(["heuristic"], capsys)[0] == 2

    def test_bad_flag(self, capsys):
        assert run(["heuristic", "--bogus"], capsys)[0] == 2


class TestSimulateLimit:
    def test_trajectory_header_and_rerun(self, capsys, tmp_path):
        args = ["simulate-limit", *MODEL, "--steps", "20000", "--seed", "3", "--stride", "100"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run([*args, "--out", str(a)], capsys)[0] == 0
        assert run([*args, "--out", str(b)], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        cfg, cols, data = read_csv(a)
        assert cols == ["t", "x", "v", "l"] and data.shape == (201, 4)
        for key in ("model", "delta", "steps", "burn_in", "seed", "scheme", "regime", "seeds"):
            assert key in cfg
        assert cfg["steps"] == "20000" and cfg["seed"] == "3"

    def test_numerical_failure_exit_code(self, capsys):
        code, out = run(["simulate-limit", *MODEL, "--delta", "1e300", "--steps", "10"], capsys)
        assert code == 3 and "step" in out.err

    def test_scale_changes_only_steps(self, capsys, tmp_path):
        out = tmp_path / "s.csv"
        run(["simulate-limit", *MODEL, "--steps", "20000", "--scale", "0.5", "--delta", "0.002", "--out", str(out)],
            capsys)
        cfg, _, _ = read_csv(out)
        assert cfg["steps"] == "10000" and cfg["delta"] == "0.002" and '"beta": 2.0' in cfg["model"]

    def test_config_file_and_override(self, capsys, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[model]\nb = -2\nmu = 1\nsigma = 3\nbeta = 2\ngamma = 0.1\n"
                       "[sim]\ndelta = 1e-3\nsteps = 5000\nseed = 1\nregime = nds\n"
                       f"[output]\npath = {tmp_path / 'o.csv'}\n")
        assert run(["simulate-limit", "--config", str(ini), "--seed", "7"], capsys)[0] == 0
        cfg, _, data = read_csv(tmp_path / "o.csv")
        assert cfg["seed"] == "7" and cfg["regime"] == "nds" and cfg["steps"] == "5000"
        assert np.all(data[:, 1] >= 0)

    def test_missing_config_file(self, capsys, tmp_path):
        assert run(["simulate-limit", "--config", str(tmp_path / "nope.ini")], capsys)[0] == 2

    def test_incomplete_config(self, capsys, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[model]\nb = -2\n")
        assert run(["simulate-limit", "--config", str(ini)], capsys)[0] == 2

    def test_multi_stage_columns(self, capsys, tmp_path):
        ini = tmp_path / "m.ini"
        ini.write_text("[model]\nb = -2\nmu = 1\nsigma = 1\nbeta = 1, 0.5\ngamma = 1, 2\nR = -1 1; 0.5 -0.5\n"
                       "[sim]\nsteps = 2000\n")
        out = tmp_path / "m.csv"
        assert run(["simulate-limit", "--config", str(ini), "--out", str(out)], capsys)[0] == 0
        assert read_csv(out)[1] == ["t", "x", "u1", "u2", "l"]


class TestPrelimit:
    def test_snapshots_and_event_log(self, capsys, tmp_path):
        snap, elog = tmp_path / "s.csv", tmp_path / "e.csv"
        code, out = run(["simulate-prelimit", *MODEL, "--n", "100", "--alpha", "0.75", "--horizon", "20",
                         "--out", str(snap), "--event-log", str(elog)], capsys)
        assert code == 0 and "POW" in out.out
        cfg, cols, data = read_csv(snap)
        assert cols == ["t", "q", "i", "v", "x_hat", "v_tilde"] and "prelimit" in cfg
        np.testing.assert_allclose(data[:, 4], (data[:, 1] - data[:, 2] - data[:, 3]) / 10)
        _, lcols, log = read_csv(elog)
        assert lcols == ["t", "event", "stage", "q", "i", "v", "A", "J", "D"] and log.shape[0] > 100

    def test_explicit_mode(self, capsys, tmp_path):
        code, out = run(["simulate-prelimit", "--n", "2", "--alpha", "1", "--lambda-n", "1.5", "--mu-ind-n", "1",
                         "--horizon", "100"], capsys)
        assert code == 0 and "N_n = 2" in out.out


class TestSweep:
    def test_heuristic_only_matches_heuristic(self, capsys, tmp_path):
        out = tmp_path / "sw.csv"
        code, _ = run(["sweep", *MODEL, "--values", "0.1,0.5,1.0", "--heuristic-only", "--out", str(out)], capsys)
        assert code == 0
        _, cols, data = read_csv(out)
        assert cols == ["gamma", "sim_value", "heuristic_value", "abs_err", "rel_err", "ci95"]
        for g, h in zip(data[:, 0], data[:, 2]):
            assert h == H.pow_tilde(-2, 1, 3, 2, g)
            main(["heuristic", "--b", "-2", "--mu", "1", "--sigma", "3", "--beta", "2", "--gamma", repr(float(g))])
            row = capsys.readouterr().out.strip().splitlines()[-1].split(",")
            assert float(row[HEURISTIC_COLUMNS.index("pow_tilde")]) == h
        assert np.all(np.isnan(data[:, 1]))

    def test_single_point_simulated(self, capsys, tmp_path):
        out = tmp_path / "one.csv"
        code, _ = run(["sweep", *MODEL, "--values", "1.0", "--steps", "200000", "--replications", "3",
                       "--out", str(out)], capsys)
        assert code == 0
        _, _, data = read_csv(out)
        assert data.shape == (1, 6)
        g, sim, heur, abs_err, rel_err, ci = data[0]
        assert abs_err == pytest.approx(abs(sim - heur)) and rel_err == pytest.approx(abs_err / heur)
        assert 0 < ci < 1
        _, rcols, rep = read_csv(tmp_path / "one_reports.csv")
        assert rep.shape[0] == 1 and rep[0, rcols.index("estimate")] == sim

    @pytest.mark.parametrize("values", ["", "0.5,0.1", "0.1,0.1"])
    def test_invalid_grid(self, capsys, values):
        assert run(["sweep", *MODEL, "--values", values, "--heuristic-only"], capsys)[0] == 2

    def test_grid_spec(self):
        with pytest.raises(ConfigError):
            SweepSpec("gamma", [])
        with pytest.raises(ConfigError):
            SweepSpec("delta", [1.0])


class TestPathsAndPresets:
    def test_nds_paths_byte_identical(self, capsys, tmp_path):
        args = ["paths", "--b", "-3", "--mu", "2", "--sigma", "1", "--beta", "2", "--gamma", "0.1", "--regime", "nds",
                "--steps", "50000", "--stride", "1"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run([*args, "--out", str(a)], capsys)[0] == 0
        assert run([*args, "--out", str(b)], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        _, _, d = read_csv(a)
        up = np.nonzero(np.diff(d[:, 2]) > 0)[0]
        assert up.size > 0 and np.all(d[up + 1, 1] == 0)

    def test_hw_path_fixed_point(self, capsys, tmp_path):
        out = tmp_path / "hw.csv"
        assert run(["paths", "--b", "-2", "--mu", "1", "--sigma", "0", "--beta", "2", "--gamma", "0.1",
                    "--delta", "0.01", "--steps", "50000", "--out", str(out)], capsys)[0] == 0
        _, _, d = read_csv(out)
        assert d[-1, 1] == pytest.approx(-2.0, abs=1e-4) and d[-1, 2] == pytest.approx(1.9048, abs=1e-4)

    def test_preset_table1_tiny(self, capsys, tmp_path):
        code, out = run(["preset", "table1", "--scale", "0.0005", "--out", str(tmp_path)], capsys)
        assert code == 0 and "0.2470" in out.out
        cfg, cols, data = read_csv(tmp_path / "table1_report.csv")
        assert cfg["steps"] == "100000" and cfg["delta"] == "0.001" and cfg["replications"] == "8"
        assert data[0, cols.index("theoretical")] == H.pow0(-2, 1, 3)

    def test_preset_fig1_signatures(self, capsys, tmp_path):
        assert run(["preset", "fig1", "--scale", "0.1", "--out", str(tmp_path)], capsys)[0] == 0
        files = sorted(p.name for p in tmp_path.glob("fig1*.csv"))
        assert len(files) == 4
        cfg, cols, d = read_csv(tmp_path / "fig1d_nds_sigma3.csv")
        assert cfg["export_stride"] == "100" and d.shape[0] == 201
        assert np.all(d[:, 1] >= 0) and np.all(d[:, 2] == np.round(d[:, 2]))

    def test_unknown_preset(self, capsys):
        assert run(["preset", "table9"], capsys)[0] == 2
        with pytest.raises(ConfigError):
            run_preset("table9")

    def test_scale_conflicts_with_paper_scale(self):
        with pytest.raises(ConfigError):
            run_preset("table1", scale=0.1, paper_scale=True)

    def test_paper_scale_warns_and_uses_full_n(self, monkeypatch, tmp_path):
        seen = {}

        def fake(out, steps, scheme, seed, replications, workers, meta):
            seen.update(steps=steps, meta=meta)
            return {"files": [], "reports": {}}

        monkeypatch.setitem(experiments.PRESETS, "table1", Preset("table1", "", 200_000_000, 0.1, fake))
        with pytest.warns(UserWarning, match="full scale"):
            run_preset("table1", tmp_path, paper_scale=True)
        assert seen["steps"] == 200_000_000
        run_preset("table1", tmp_path)
        assert seen["steps"] == 20_000_000


def test_load_config_flags_win(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nb = -1\nmu = 1\nsigma = 1\n[sim]\nseed = 4\nsteps = 100\n[sweep]\nvalues = 1 2 3\n")
    cfg = load_config(ini, {"seed": 9, "b": -3.0}, mode="sweep")
    assert cfg.sim.seed == 9 and cfg.model.b == -3.0 and cfg.sim.steps == 100
    assert cfg.sweep.values == [1.0, 2.0, 3.0]
