import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from spinctl import cli, io
from spinctl.bloch import Pulse
from spinctl.errors import ConfigError

TWO_PI = 2.0 * math.pi


def write_config(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_table(path):
    header, rows = io.read_csv(path)
    return header, np.array([[float(c) for c in r] for r in rows])


def small_grape_config(**extra):
    cfg = {
        "species": [
            {"name": "muscle", "T1_ms": 1011, "T2_ms": 30, "role": "maximize"},
            {"name": "brain", "T1_ms": 920, "T2_ms": 60, "role": "minimize"},
        ],
        "offsets_hz": {"min": -40, "max": 40, "step": 40},
        "pulse": {"n_steps": 20, "dt_ms": 1.0},
        "cost": "preparation",
        "optimizer": {"max_iterations": 15, "n_starts": 2, "seed": 1},
    }
    cfg.update(extra)
    return cfg


def file_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


# -- io -------------------------------------------------------------------------


def test_csv_round_trip_is_exact(tmp_path):
    vals = [0.1, 1 / 3, -2.5e-17, math.nan]
    io.write_csv(tmp_path / "t.csv", ("a", "b"), [(v, True) for v in vals], comments=("units",))
    text = (tmp_path / "t.csv").read_text()
    assert text.startswith("# units\na,b\n")
    header, rows = io.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"]
    back = [float(r[0]) for r in rows]
    assert back[:3] == vals[:3]
    assert math.isnan(back[3])
    assert all(r[1] == "1" for r in rows)


def test_pulse_json_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = Pulse(dt=1e-3, steps=rng.normal(size=(7, 2)) * 100, u_max=None)
    io.write_pulse_json(tmp_path / "p.json", p)
    q = io.read_pulse_json(tmp_path / "p.json")
    assert q.dt == p.dt and q.u_max is None
    assert np.array_equal(q.steps, p.steps)


def test_bad_pulse_file_is_a_config_error(tmp_path):
    (tmp_path / "p.json").write_text("{not json")
    with pytest.raises(ConfigError):
        io.read_pulse_json(tmp_path / "p.json")
    with pytest.raises(ConfigError):
        io.pulse_from_dict({"steps": [[0, 0]]})


# -- simulate -------------------------------------------------------------------


def test_simulate_zero_pulse_stays_at_equilibrium(tmp_path):
    cfg = write_config(tmp_path / "c.json", {
        "params": {"T1_s": 1.0, "T2_s": 0.05},
        "offsets_hz": [-20.0, 0.0, 20.0],
        "pulse": {"dt_s": 1e-3, "steps": [[0.0, 0.0]] * 8},
    })
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    for i in range(3):
        header, data = read_table(tmp_path / "o" / f"trajectory_{i:03d}.csv")
        assert header == ["step", "t", "offset", "x", "y", "z"]
        assert data.shape == (9, 6)
        np.testing.assert_allclose(data[:, 3:], np.tile([0, 0, 1.0], (9, 1)), atol=1e-14)


def test_simulate_pi_pulse_inverts(tmp_path):
    n, dt = 10, 1e-4
    amp = math.pi / (n * dt)
    cfg = write_config(tmp_path / "c.json", {
        "params": {"T1_s": None, "T2_s": None},
        "pulse": {"dt_s": dt, "steps": [[amp, 0.0]] * n},
    })
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "simulate_summary.json").read_text())
    np.testing.assert_allclose(summary["finals"][0]["final"], [0, 0, -1], atol=1e-12)


def test_simulate_rejects_state_outside_ball(tmp_path):
    cfg = write_config(tmp_path / "c.json", {
        "params": {"Gamma": 1.0, "gamma": 1.0},
        "pulse": {"dt_s": 0.1, "steps": [[0, 0]]},
        "initial_state": [1.0, 1.0, 0.0],
    })
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


# -- configuration errors -------------------------------------------------------


@pytest.mark.parametrize("bad", [
    {"params": {"T1_s": -1.0, "T2_s": 0.5}},
    {"params": {"T1_s": 1.0}},
    {"params": {"T1_s": 1.0, "T2_s": 0.5}, "extra": 1},
    {"params": {"Gamma": 1.0, "gamma": 1.0, "T1_s": 1.0}},
])
def test_schema_violations_exit_2(tmp_path, bad, capsys):
    cfg = write_config(tmp_path / "c.json", bad)
    assert cli.main(["saturate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config invalid" in capsys.readouterr().err


def test_missing_and_malformed_config_exit_2(tmp_path):
    assert cli.main(["saturate", "--config", str(tmp_path / "nope.json")]) == 2
    (tmp_path / "x.json").write_text("[")
    assert cli.main(["saturate", "--config", str(tmp_path / "x.json")]) == 2
    assert cli.main(["saturate"]) == 2
    assert cli.main(["snr", "--out", str(tmp_path)]) == 2
    assert cli.main(["grape", "--out", str(tmp_path), "--threads", "0", "--preset",
                     "rat-brain-muscle"]) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch, capsys):
    def boom(params):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(cli, "saturation_sequence", boom)
    cfg = write_config(tmp_path / "c.json", {"params": {"T1_s": 1.0, "T2_s": 0.5}})
    assert cli.main(["saturate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


# -- saturate -------------------------------------------------------------------


def test_saturate_regime_b_time_is_t1_ln2(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"params": {"T1_s": 1.0, "T2_s": 0.9}})
    assert cli.main(["saturate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "saturation_report.json").read_text())
    assert rep["regime"] == "B"
    assert rep["t_min_seconds"] == pytest.approx(math.log(2.0), abs=1e-12)
    assert rep["reached_center"]
    seq = json.loads((tmp_path / "o" / "sequence.json").read_text())
    assert seq  # sequence is serialized
    _, traj = read_table(tmp_path / "o" / "saturation_trajectory.csv")
    assert np.hypot(*traj[-1, 1:]) < 1e-6


def test_saturate_rejects_t2_above_twice_t1(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"params": {"T1_s": 1.0, "T2_s": 3.0}})
    assert cli.main(["saturate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


# -- snr ------------------------------------------------------------------------


def test_snr_resolution_sets_grid(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"params": {"Gamma": 1.8, "gamma": 1.0}})
    out = tmp_path / "o"
    assert cli.main(["snr", "--config", str(cfg), "--out", str(out), "--resolution", "40"]) == 0
    header, rows = io.read_csv(out / "q_surface.csv")
    assert header == ["y_m", "z_m", "Q", "region_label", "feasible"]
    assert len(rows) == 40 * 40
    rep = json.loads((out / "maximizer.json").read_text())
    assert abs(rep["theta_error_rad"]) < 1e-6
    assert cli.main(["snr", "--config", str(cfg), "--out", str(out), "--resolution", "8"]) == 2


def test_snr_preset_writes_each_rate_pair(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["snr", "--preset", "fig4", "--out", str(out), "--resolution", "32"]) == 0
    for tag in ("_G1.90_g0.50", "_G1.80_g1.00", "_G1.69_g1.50"):
        for stem in ("q_surface", "regions", "maximizer", "radial_speed"):
            suffix = ".json" if stem == "maximizer" else ".csv"
            assert (out / f"{stem}{tag}{suffix}").exists()


# -- grape ----------------------------------------------------------------------


def test_grape_writes_outputs_and_gradcheck(tmp_path):
    cfg = write_config(tmp_path / "g.json", small_grape_config())
    out = tmp_path / "o"
    assert cli.main(["grape", "--config", str(cfg), "--out", str(out), "--gradcheck"]) == 0
    rep = json.loads((out / "grape_report.json").read_text())
    assert max(rep["gradient_check"]["max_rel_error"]) < 1e-6
    assert rep["iterations"] <= 15
    assert set(rep["species"]) == {"muscle", "brain"}
    _, rows = io.read_csv(out / "robustness.csv")
    assert len(rows) == 2 * 3
    _, hist = read_table(out / "history.csv")
    assert np.all(np.diff(hist[:, 1]) <= 0)
    _, traj = io.read_csv(out / "trajectories.csv")
    assert len(traj) == 2 * 3 * 21


def test_grape_outputs_identical_across_threads_and_repeats(tmp_path):
    cfg = write_config(tmp_path / "g.json", small_grape_config())
    runs = []
    for threads, name in ((1, "a"), (4, "b"), (1, "c")):
        out = tmp_path / name
        assert cli.main(["grape", "--config", str(cfg), "--out", str(out),
                         "--threads", str(threads)]) == 0
        runs.append(file_bytes(out))
    assert runs[0] == runs[1] == runs[2]


def test_grape_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path / "g.json", small_grape_config())
    assert cli.main(["grape", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["grape", "--config", str(cfg), "--out", str(tmp_path / "b"),
                     "--seed", "9"]) == 0
    a = (tmp_path / "a" / "pulse.json").read_bytes()
    b = (tmp_path / "b" / "pulse.json").read_bytes()
    assert a != b


def test_grape_pulse_replays_in_simulate(tmp_path):
    cfg = write_config(tmp_path / "g.json", small_grape_config())
    assert cli.main(["grape", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    sim = write_config(tmp_path / "g" / "sim.json", {
        "params": {"T1_s": 1.011, "T2_s": 0.030},
        "offsets_hz": [-40.0, 0.0, 40.0],
        "pulse_file": "pulse.json",
    })
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "s")]) == 0
    summary = json.loads((tmp_path / "s" / "simulate_summary.json").read_text())
    _, rob = io.read_csv(tmp_path / "g" / "robustness.csv")
    muscle = [r for r in rob if r[1] == "muscle"]
    for fin, row in zip(summary["finals"], muscle):
        np.testing.assert_allclose(fin["final"], [float(v) for v in row[2:5]], atol=1e-12)


def test_grape_initial_pulse_file(tmp_path):
    p = Pulse(dt=1e-3, steps=np.zeros((20, 2)))
    io.write_pulse_json(tmp_path / "init.json", p)
    cfg = write_config(tmp_path / "g.json", small_grape_config(initial_pulse_file="init.json"))
    assert cli.main(["grape", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "grape_report.json").read_text())
    assert len(rep["start_costs"]) == 1


def test_grape_config_needs_maximize_role(tmp_path):
    cfg = small_grape_config()
    cfg["species"][0]["role"] = "minimize"
    path = write_config(tmp_path / "g.json", cfg)
    assert cli.main(["grape", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.skipif(shutil.which("spinctl") is None, reason="console script not installed")
def test_console_script_runs(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"params": {"T1_s": 1.0, "T2_s": 0.9}})
    proc = subprocess.run(["spinctl", "saturate", "--config", str(cfg), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "regime B" in proc.stdout


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spinctl.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "saturate" in proc.stdout
