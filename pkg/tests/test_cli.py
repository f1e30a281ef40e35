import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from gfmstab.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main, read_pole_csv

ROOT = Path(__file__).parent.parent
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _write(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def _parse_kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and
                not line.startswith("#"))


def test_poles_rows(capsys):
    code, out, _ = run(capsys, "poles", "--config", CONFIGS / "nameplate_droop.json")
    assert code == EXIT_OK
    rows = read_pole_csv(io.StringIO(out))
    ol = [r for r in rows if r["kind"] == "OL"]
    assert len(ol) == 7 and not any(r["rhp"] for r in ol)
    assert [r["label"] for r in ol[:4]] == ["hf1", "hf2", "hf3", "hf4"]
    lf = {r["label"]: r for r in ol}["lf2"]
    assert lf["re"] == pytest.approx(-1 / 0.051)


@pytest.mark.parametrize("config, golden, extra", [
    ("nameplate_droop.json", "poles_nameplate_droop.csv", ()),
    ("nameplate_droop_i.json", "poles_nameplate_droop_i_hz.csv", ("--hz",)),
])
def test_poles_golden(capsys, config, golden, extra):
    _, out, _ = run(capsys, "poles", "--config", CONFIGS / config, *extra)
    ref = (GOLDEN / golden).read_text()
    assert out.splitlines()[0] == ref.splitlines()[0]
    got, want = read_pole_csv(io.StringIO(out)), read_pole_csv(io.StringIO(ref))
    assert [(r["label"], r["kind"], r["rhp"]) for r in got] == \
           [(r["label"], r["kind"], r["rhp"]) for r in want]
    for a, b in zip(got, want):
        assert a["re"] == pytest.approx(b["re"], rel=1e-9, abs=1e-9)
        assert a["im"] == pytest.approx(b["im"], rel=1e-9, abs=1e-9)


def test_poles_output_is_deterministic(capsys):
    outs = [run(capsys, "poles", "--config", CONFIGS / "nameplate_droop_i.json")[1]
            for _ in range(2)]
    assert outs[0] == outs[1]


def test_pole_csv_round_trip(capsys, tmp_path):
    run(capsys, "poles", "--config", CONFIGS / "nameplate_droop_i.json", "--out", tmp_path)
    text = (tmp_path / "poles.csv").read_text()
    rows = read_pole_csv(io.StringIO(text))
    buf = io.StringIO()
    from gfmstab.cli import POLE_COLUMNS, write_csv
    write_csv(rows, POLE_COLUMNS, buf)
    assert buf.getvalue() == text


def test_law_override(capsys):
    _, out, _ = run(capsys, "verdict", "--config", CONFIGS / "nameplate_droop.json",
                    "--law", "droop-i")
    assert _parse_kv(out)["law"] == "droop-i"


def test_verdict_unstable_still_exits_ok(capsys):
    code, out, _ = run(capsys, "verdict", "--config", CONFIGS / "nameplate_droop_i_high_gain.json")
    kv = _parse_kv(out)
    assert code == EXIT_OK
    assert (kv["P"], kv["N"], kv["Z"], kv["stable"]) == ("4", "0", "4", "false")


def test_routh_lossless(capsys):
    code, out, _ = run(capsys, "routh", "--config", CONFIGS / "nameplate_droop_i.json",
                       "--lossless")
    assert code == EXIT_OK
    assert "used_epsilon=True" in out and "-inf" in out


def test_nyquist_and_margins_to_directory(capsys, tmp_path):
    cfg = CONFIGS / "nameplate_droop_i.json"
    assert run(capsys, "nyquist", "--config", cfg, "--out", tmp_path, "--hz")[0] == EXIT_OK
    with open(tmp_path / "nyquist.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["freq_hz", "re", "im"] and len(rows) > 1000
    assert _parse_kv((tmp_path / "verdict.txt").read_text())["N"] == "0"
    assert run(capsys, "margins", "--config", cfg, "--out", tmp_path)[0] == EXIT_OK
    header, values = (tmp_path / "margins.csv").read_text().splitlines()
    assert values.endswith(",true,0")


def test_invalid_config_exit_code(capsys, tmp_path):
    p = _write(tmp_path, {"plant": {"per_unit": {}}, "control": {"law": "droop-i", "T_q": 0.05}})
    code, _, err = run(capsys, "poles", "--config", p)
    assert code == EXIT_INVALID
    assert "control.k_iq" in err


def test_unknown_key_exit_code(capsys, tmp_path):
    p = _write(tmp_path, {"plant": {"per_unit": {"Lg": 0.2}},
                          "control": {"law": "droop", "T_q": 0.05}})
    code, _, err = run(capsys, "poles", "--config", p)
    assert code == EXIT_INVALID and "plant.per_unit.Lg" in err


def test_lossless_nyquist_is_numerical_failure(capsys, tmp_path):
    p = _write(tmp_path, {"plant": {"per_unit": {"L_g": 0.2, "R_g": 0.0}},
                          "control": {"law": "droop", "T_q": 0.051}})
    code, _, err = run(capsys, "nyquist", "--config", p)
    assert code == EXIT_NUMERICAL
    assert "resistance" in err


def test_sweep_k_iq_crossing(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--config", CONFIGS / "sweep_k_iq.json", "--out", tmp_path,
                     "--jobs", "4")
    assert code == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["index"]) for r in rows] == list(range(len(rows)))
    stable = {float(r["value"]): r["stable"] == "true" for r in rows}
    assert stable[2.99] and not stable[10.97]
    first_unstable = min(v for v, s in stable.items() if not s)
    assert 2.99 < first_unstable <= 10.97
    for r in rows:
        assert (int(r["Z"]) > 0) == (float(r["max_cl_re"]) > 0)


def test_sweep_l_g_flips(capsys, tmp_path):
    run(capsys, "sweep", "--config", CONFIGS / "sweep_l_g.json", "--out", tmp_path)
    with open(tmp_path / "sweep.csv") as fh:
        rows = {float(r["value"]): r for r in csv.DictReader(fh)}
    assert rows[0.2]["stable"] == "true"
    assert rows[0.5]["stable"] == "false"


def test_sweep_poles_parallel_matches_serial(capsys, tmp_path):
    cfg = CONFIGS / "sweep_p_st.json"
    run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "a")
    run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "b", "--jobs", "3")
    assert (tmp_path / "a/sweep.csv").read_text() == (tmp_path / "b/sweep.csv").read_text()


def test_sweep_without_block(capsys):
    code, _, err = run(capsys, "sweep", "--config", CONFIGS / "nameplate_droop.json")
    assert code == EXIT_INVALID and "sweep" in err


@pytest.mark.parametrize("law, stable", [("droop", "true"), ("droop-i", "false")])
def test_grid_current_ad(capsys, law, stable):
    _, out, _ = run(capsys, "verdict", "--config", CONFIGS / "weak_grid_ad_grid-current.json",
                    "--law", law)
    assert _parse_kv(out)["stable"] == stable


def test_simulate_writes_trace(capsys, tmp_path):
    data = json.loads((CONFIGS / "sim_kiq_step.json").read_text())
    data["analysis"].update(t_end=0.6, events=[
        {"t": 0.05, "target": "control.k_iq", "value": 10.97},
        {"t": 0.05, "target": "grid.V_g", "value": 1.0001}])
    data["analysis"]["fft"] = {"signal": "q", "f_min": 100, "t_start": 0.1}
    p = _write(tmp_path, data)
    code, out, _ = run(capsys, "simulate", "--config", p, "--out", tmp_path / "o")
    assert code == EXIT_OK
    assert (tmp_path / "o/trace.csv").exists()
    fft = (tmp_path / "o/fft.txt").read_text().splitlines()
    assert fft[0] == "diverged_at=none"
    f = float(fft[2].split(",")[1])
    assert f == pytest.approx(820, rel=0.02)


def test_simulate_reports_missing_fft_signal(capsys, tmp_path):
    data = {"plant": {"per_unit": {}}, "control": {"law": "droop", "T_q": 0.05},
            "analysis": {"t_end": 0.01, "record": ["p"]}}
    code, out, _ = run(capsys, "simulate", "--config", _write(tmp_path, data))
    assert code == EXIT_OK and "fft=unavailable" in out


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "gfmstab", "poles", "--config",
                        str(CONFIGS / "nameplate_droop.json")], capture_output=True, text=True)
    assert r.returncode == 0
    assert np.isclose(float(r.stdout.splitlines()[1].split(",")[2]), 5786.592015879584)
