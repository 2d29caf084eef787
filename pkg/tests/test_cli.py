import json
import subprocess
import sys

import numpy as np
import pytest

from rydarray import cli, pattern_path
from rydarray.dynamics import TimeSeries, rabi_trace


def run(*args):
    return cli.main([str(a) for a in args])


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_assemble_outputs_and_determinism(tmp_path):
    out = tmp_path / "a"
    args = ("assemble", "--seed", 11, "--trials", 6, "--out", out, "--pattern", pattern_path("supergrid_5x5.txt"))
    assert run(*args) == 0
    first = snapshot(out)
    assert run(*args) == 0
    assert snapshot(out) == first

    summary = json.loads((out / "assemble_summary.json").read_text())
    assert summary["seed"] == 11 and summary["trials"] == 6
    assert summary["config"]["pattern"]["file"].endswith("supergrid_5x5.txt")
    assert summary["ci_low"] <= summary["success_rate"] <= summary["ci_high"]
    trials = json.loads((out / "assemble_trials.json").read_text())["trials"]
    assert {"seed", "cycles", "moves", "losses", "duration_ms", "success"} <= set(trials[0])
    snap = (out / "snapshots" / "trial_0000_final.txt").read_text()
    assert snap.startswith("# config {")


def test_zero_loss_assembly_always_succeeds(tmp_path):
    ini = tmp_path / "z.ini"
    ini.write_text("[run]\nseed = 4\n[execution]\nper_move_loss = 0\nper_cycle_loss = 0\n[pattern]\ntarget_rows = 5\ntarget_cols = 5\nframe = 1\n")
    assert run("assemble", "--config", ini, "--trials", 20, "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "assemble_summary.json").read_text())["success_rate"] == 1.0


def test_recapture_json(tmp_path):
    assert run("recapture", "--seed", 2, "--trials", 3000, "--out", tmp_path, "--level", "87D") == 0
    data = json.loads((tmp_path / "recapture.json").read_text())
    assert [r["state"] for r in data["results"]] == ["rydberg", "ground"]
    for r in data["results"]:
        assert {"state", "n_level_label", "trials", "p_recapture", "ci_low", "ci_high"} <= set(r)
        assert r["n_level_label"] == "87D"


def test_blockade_outputs(tmp_path):
    assert run("blockade", "--seed", 3, "--shots", 20, "--out", tmp_path) == 0
    for n in (1, 2, 3):
        for kind in ("observed", "corrected"):
            text = (tmp_path / f"blockade_N{n}_{kind}.csv").read_text()
            assert text.startswith("# config {")
            ts = TimeSeries.from_csv(text)
            assert ts.n_atoms == n
    obs = TimeSeries.from_csv((tmp_path / "blockade_N1_observed.csv").read_text())
    cor = TimeSeries.from_csv((tmp_path / "blockade_N1_corrected.csv").read_text())
    assert obs["p_k1"].max() < cor["p_k1"].max()
    assert (tmp_path / "blockade_leakage.csv").exists()
    scaling = json.loads((tmp_path / "blockade_scaling.json").read_text())["scaling"]
    assert [r["N"] for r in scaling] == [1, 2, 3]


def test_rabi_outputs(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text("[run]\nseed = 1\nshots = 1\n[noise]\n" + "".join(f"{k} = 0\n" for k in (
        "doppler_width", "power_fluct_480", "power_fluct_780", "rabi_jitter", "stark_jitter", "pos_sigma_radial", "pos_sigma_axial", "include_scattering")))
    assert run("rabi", "--config", ini, "--out", tmp_path / "o") == 0
    data = json.loads((tmp_path / "o" / "rabi_fits.json").read_text())
    assert len(data["sites"]) == 25
    assert data["beam_fit"]["params"]["waist"] == pytest.approx(19.0, abs=1.0)
    assert len(list((tmp_path / "o" / "rabi_sites").glob("*.csv"))) == 25


def test_fit_command(tmp_path):
    t = np.linspace(0, 5, 101)
    y = rabi_trace(t, 0.33, 0.32)
    src = tmp_path / "trace.csv"
    src.write_text(TimeSeries(t, y[:, None], np.column_stack([1 - y, y])).to_csv(["synthetic"]))
    assert run("fit", src, "--seed", 0, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "fit_trace.json").read_text())
    assert set(rep) >= {"params", "std_errors", "residual_rms", "n_points", "config"}
    assert rep["params"]["rabi"] == pytest.approx(0.33, rel=1e-6)


def test_exit_code_config_errors(tmp_path, capsys):
    assert run("assemble", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("assemble", "--seed", 1, "--pattern", tmp_path / "nope.txt", "--out", tmp_path) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.txt"
    bad.write_text("..\n.Q\n")
    assert run("assemble", "--seed", 1, "--pattern", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("fit", tmp_path / "missing.csv", "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG
    garbage = tmp_path / "g.csv"
    garbage.write_text("time_us,p_k1\nabc,def\n")
    assert run("fit", garbage, "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_exit_code_non_convergence(tmp_path):
    t = np.linspace(0, 5, 101)
    y = 0.5 + np.random.default_rng(0).normal(0, 0.01, t.size)
    src = tmp_path / "flat.csv"
    src.write_text(TimeSeries(t, y[:, None], np.column_stack([1 - y, y])).to_csv())
    assert run("fit", src, "--seed", 0, "--out", tmp_path) == cli.EXIT_NONCONVERGENCE


def test_exit_code_runtime_error(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli.experiments, "run_recapture", boom)
    assert run("recapture", "--seed", 1, "--out", tmp_path) == cli.EXIT_RUNTIME


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rydarray.cli", "recapture", "--seed", "1", "--trials", "500", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "recapture.json").exists()
