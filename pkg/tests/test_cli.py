from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from aclink import cli
from aclink.analysis import damping_gain
from aclink.params import ConfigError
from aclink.simulation import Scenario, preset


def _ini(tmp_path, text: str, name: str = "c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def test_read_config_sections(tmp_path):
    path = _ini(tmp_path, "[scenario]\npreset = fig10\nduration = 0.05\n[params]\nk_damp = 1e-4\nL_f = 2e-3\n")
    sc = cli.load_scenario(path, environ={})
    assert sc.duration == 0.05
    assert sc.params.k_damp == 1e-4
    assert sc.params.L_f == 2e-3
    assert sc.damping


def test_environment_overrides_file(tmp_path):
    path = _ini(tmp_path, "[params]\nk_damp = 1e-4\n")
    sc = cli.load_scenario(path, environ={"ACLINK_K_DAMP": "2e-4", "ACLINK_DURATION": "0.01", "HOME": "/"})
    assert sc.params.k_damp == 2e-4
    assert sc.duration == 0.01


@pytest.mark.parametrize(
    "text,env",
    [
        ("[other]\nx = 1\n", {}),
        ("[scenario]\nbogus = 1\n", {}),
        ("[params]\nnot_a_field = 1\n", {}),
        ("[params]\nk_damp = abc\n", {}),
        ("[scenario]\npreset = fig99\n", {}),
        ("[scenario]\nschedule = 0:x\n", {}),
        ("[scenario]\ndamping = maybe\n", {}),
        ("[params]\nv_link_peak = 50\n", {}),
        ("", {"ACLINK_NOPE": "1"}),
        ("[scenario\n", {}),
    ],
)
def test_bad_configs_raise_config_error(tmp_path, text, env):
    path = _ini(tmp_path, text)
    with pytest.raises(ConfigError):
        cli.load_scenario(path, environ=env)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        cli.read_config(str(tmp_path / "none.ini"), environ={})


def test_parse_schedule():
    assert cli.parse_schedule("0:0:2, 0.05:0:4") == ((0.0, 0.0, 2.0), (0.05, 0.0, 4.0))
    assert cli.parse_schedule("0:100") == ((0.0, 100.0),)
    with pytest.raises(ConfigError):
        cli.parse_schedule(" , ")


# --------------------------------------------------------------------------
# Exit codes
# --------------------------------------------------------------------------


def test_run_writes_csv_and_exits_zero(tmp_path, capsys):
    path = _ini(tmp_path, "[scenario]\nname = short\nduration = 0.002\n")
    out = tmp_path / "w.csv"
    assert cli.main(["run", path, "-o", str(out)]) == cli.EXIT_OK
    rows = _rows(out)
    assert len(rows) > 100
    assert "ia" in rows[0] and "vlink" in rows[0]
    assert "waveform" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    path = _ini(tmp_path, "[params]\nL_f = -1\n")
    assert cli.main(["run", path]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_simulation_fault_exit_code(tmp_path, capsys):
    path = _ini(tmp_path, "[scenario]\nduration = 0.002\n[params]\nmax_cycle = 1e-5\n")
    assert cli.main(["run", path, "-o", str(tmp_path / "w.csv")]) == cli.EXIT_FAULT
    err = capsys.readouterr().err
    assert "simulation fault at t =" in err and "GuardTimeout" in err


# --------------------------------------------------------------------------
# bode
# --------------------------------------------------------------------------


def test_bode_gp_and_gig(tmp_path, capsys):
    gp, gig = tmp_path / "gp.csv", tmp_path / "gig.csv"
    assert cli.main(["bode", "gp", "-o", str(gp)]) == 0
    assert cli.main(["bode", "gig", "-o", str(gig)]) == 0
    a, b = _rows(gp), _rows(gig)
    assert len(a) == 4001
    assert list(a[0]) == ["f", "magnitude_db", "phase_deg", "pole_on_axis"]
    assert float(a[0]["magnitude_db"]) == pytest.approx(0.0, abs=0.01)
    pa = max(float(r["magnitude_db"]) for r in a)
    pb = max(float(r["magnitude_db"]) for r in b)
    assert pa - pb >= 20.0
    assert "max" in capsys.readouterr().out


def test_bode_uses_config(tmp_path):
    path = _ini(tmp_path, "[params]\nr_s = 0.5\n")
    out = tmp_path / "gp.csv"
    assert cli.main(["bode", "gp", path, "-o", str(out), "--n", "401"]) == 0
    assert max(float(r["magnitude_db"]) for r in _rows(out)) < 36.0


# --------------------------------------------------------------------------
# thd
# --------------------------------------------------------------------------


def _waveform_csv(path, f0=60.0, fs=12000.0, periods=6, h5=0.1):
    n = int(round(periods * fs / f0))
    t = np.arange(n + 1) / fs
    y = np.sin(2 * math.pi * f0 * t) + h5 * np.sin(2 * math.pi * 5 * f0 * t)
    with open(path, "w") as fh:
        fh.write("t,ia\n")
        for a, b in zip(t, y):
            fh.write(f"{float(a)!r},{float(b)!r}\n")


def test_thd_command(tmp_path, capsys):
    src, spectrum_csv = tmp_path / "w.csv", tmp_path / "s.csv"
    _waveform_csv(src)
    assert cli.main(["thd", str(src), "-o", str(spectrum_csv)]) == 0
    out = capsys.readouterr().out
    assert "THD 10.0000 %" in out
    rows = _rows(spectrum_csv)
    fifth = [r for r in rows if r["harmonic"] == "5"]
    assert float(fifth[0]["f"]) == pytest.approx(300.0)
    assert float(fifth[0]["amplitude"]) == pytest.approx(0.1, rel=1e-9)


def test_thd_reports_bad_line(tmp_path, capsys):
    src = tmp_path / "w.csv"
    src.write_text("t,ia\n0,1\n1e-4,oops\n")
    assert cli.main(["thd", str(src)]) == cli.EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err


def test_thd_missing_column(tmp_path):
    src = tmp_path / "w.csv"
    src.write_text("t,ib\n0,1\n1,2\n")
    with pytest.raises(ConfigError, match="line 1"):
        cli.read_waveform_column(src, "ia")


def test_whole_period_window():
    # 400 kHz sampling: only multiples of three 60 Hz periods are whole
    assert cli.whole_period_window(100000, 400e3, 60.0, 6) == 40000
    assert cli.whole_period_window(100000, 400e3, 60.0, 5) == 20000
    with pytest.raises(ConfigError):
        cli.whole_period_window(10000, 400e3, 60.0, 6)


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def test_sweep_rejects_unknown_param(params):
    with pytest.raises(ConfigError):
        cli.run_sweep(Scenario("x", params, duration=0.001), "nope", [1.0])


def test_sweep_empty_values(tmp_path, capsys):
    path = _ini(tmp_path, "[scenario]\nduration = 0.001\n")
    assert cli.main(["sweep", path, "--param", "k_damp", "--values", ""]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 1


def test_sweep_rows_sorted_with_failures(params):
    base = Scenario("x", params, duration=0.001)
    rows = cli.run_sweep(base, "L_f", [2e-3, -1.0, 1.6e-3])
    assert [r[0] for r in rows] == [-1.0, 1.6e-3, 2e-3]
    assert rows[0][2] is None and "ConfigError" in rows[0][1]
    assert rows[1][1] == "ok" and rows[2][1] == "ok"


def test_sweep_xi_maps_to_damping_gain(params):
    sc = cli.sweep_scenario(Scenario("x", params), "xi", 0.593)
    assert sc.params.k_damp == damping_gain(0.593, params.L_f, params.C_f)
    assert sc.params.k_damp == pytest.approx(3e-4, abs=1e-6)


def test_sweep_table_output(tmp_path, capsys):
    path = _ini(tmp_path, "[scenario]\nduration = 0.001\n")
    assert cli.main(["sweep", path, "--param", "k_damp", "--values", "3e-4,1e-4", "--jobs", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert float(lines[1].split()[0]) == 1e-4
    assert lines[1].endswith("ok") and lines[2].endswith("ok")


@pytest.mark.slow
def test_damping_sweep_separates_undamped_case():
    base = preset("fig10")
    base = Scenario("k", base.params, base.fidelity, True, base.schedule, 0.2)
    rows = cli.run_sweep(base, "k_damp", [0.0, 1e-4, 3e-4, 1e-3])
    thd = {v: max(rep.thd) for v, _, rep in rows}
    assert thd[0.0] > 10.0 * max(thd[1e-4], thd[3e-4], thd[1e-3])
    assert all(thd[k] < 3.0 for k in (1e-4, 3e-4, 1e-3))


# --------------------------------------------------------------------------
# figure
# --------------------------------------------------------------------------


def test_figure_fig6(tmp_path):
    assert cli.main(["figure", "fig6", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "fig6_gp.csv").exists()
    assert (tmp_path / "fig6_gig.csv").exists()


def test_figure_fig7(tmp_path):
    assert cli.main(["figure", "fig7", "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "fig7_loop.csv")
    mag = np.array([float(r["magnitude_db"]) for r in rows])
    f = np.array([float(r["f"]) for r in rows])
    j = int(np.flatnonzero(mag < 0.0)[0])
    assert f[j - 1] <= 128.1 <= f[j]


def test_unknown_figure_is_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["figure", "fig99"])
    assert info.value.code == 2
