import hashlib
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from coldions import presets
from coldions.cli import main
from coldions.csvio import read_csv
from coldions.scenario import parse
from coldions.trapmodel import mathieu_q

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

BASE = """\
[scenario]
name = t
seed = 4

[trap]
preset = be_trap
"""


def write(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def manifest(out: Path) -> dict:
    rows = (out / "manifest.txt").read_text().splitlines()
    return {line.split("  ", 1)[1]: line.split("  ", 1)[0] for line in rows}


def check_manifest(out: Path) -> dict:
    m = manifest(out)
    files = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.txt"}
    assert files == set(m)
    for rel, digest in m.items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    return m


def temperatures(path: Path) -> dict:
    _, rows = read_csv(path)
    out = {}
    for r in rows:
        t, sp, temp = float(r[0]), r[1], float(r[3])
        out.setdefault(sp, ([], []))
        out[sp][0].append(t)
        out[sp][1].append(temp)
    return {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}


def window_mean(series, a, b):
    t, v = series
    return v[(t > a) & (t <= b)].mean()


# ---------------------------------------------------------------- validation

def test_validate_valid_config_is_silent(tmp_path, capsys):
    p = write(tmp_path, BASE + "[species.Be+]\ncount = 10\n")
    assert main(["validate", "--config", str(p)]) == 0
    assert capsys.readouterr().out == ""


def test_validate_shipped_scenarios(capsys):
    for p in sorted(SCENARIOS.glob("*.ini")):
        assert main(["validate", "--config", str(p)]) == 0, p.name
    assert "error" not in capsys.readouterr().out


def test_validate_q_warning_names_species(tmp_path, capsys):
    trap = presets.trap("be_trap")
    v_rf = trap.v_rf * 1.2 / mathieu_q(trap, presets.species("H+"))
    p = write(tmp_path, BASE + f"v_rf = {v_rf}\n[species.H+]\ncount = 1\n")
    assert main(["validate", "--config", str(p)]) == 0
    out = capsys.readouterr().out
    assert "warning" in out and "H+" in out and "q = 1.200" in out


def test_validate_missing_trap(tmp_path, capsys):
    p = write(tmp_path, "[scenario]\nseed = 1\n[species.Be+]\ncount = 3\n")
    assert main(["validate", "--config", str(p)]) == 2
    assert "missing [trap] section" in capsys.readouterr().out


def test_missing_seed_is_an_error(tmp_path, capsys):
    p = write(tmp_path, "[trap]\npreset = be_trap\n")
    assert main(["validate", "--config", str(p)]) == 2
    assert "missing seed" in capsys.readouterr().out
    assert main(["validate", "--config", str(p), "--seed", "3"]) == 0


def test_malformed_key_reports_line(tmp_path, capsys):
    p = write(tmp_path, BASE + "v_rff = 300\n")
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 7" in err and "v_rff" in err
    p = write(tmp_path, BASE + "v_rf 300\n")
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    assert "line 7" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_number_reports_line(tmp_path):
    _, diags = parse(BASE + "v_rf = fast\n")
    assert any(d.line == 7 and "v_rf" in d.message for d in diags)


def test_schedule_checks(tmp_path):
    text = BASE + "[species.Be+]\ncount = 5\n[schedule]\nend = 2e-3\nlasers = 1e-3 on\nheating = 3e-3 Xe+=1\n"
    _, diags = parse(text)
    msgs = {d.line: d.message for d in diags}
    assert "earlier than the previous action" in msgs[11]
    assert "undefined species" in msgs[12]
    _, diags = parse(BASE + "[species.Be+]\ncount = 5\n[schedule]\nwarp = 1e-3\n")
    assert "unknown schedule action" in diags[0].message


def test_unknown_section_and_gas(tmp_path):
    _, diags = parse(BASE + "[lasers]\nx = 1\n[gas]\nXe = 1e-7\n")
    text = " ".join(d.message for d in diags)
    assert "unknown section [lasers]" in text and "unknown gas 'Xe'" in text


# ---------------------------------------------------------------- execution

def test_empty_schedule_writes_empty_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SCENARIOS / "empty.ini"), "--out-dir", str(out)]) == 0
    assert (out / "manifest.txt").read_text() == ""
    assert [p.name for p in out.iterdir()] == ["manifest.txt"]


def test_trap_command(tmp_path):
    p = write(tmp_path, BASE + "[species.Be+]\n[species.H3+]\n")
    out = tmp_path / "o"
    assert main(["trap", "--config", str(p), "--out-dir", str(out)]) == 0
    check_manifest(out)
    _, rows = read_csv(out / "trap.csv")
    be = next(r for r in rows if r[0] == "Be+")
    assert float(be[3]) == pytest.approx(mathieu_q(presets.trap("be_trap"), presets.species("Be+")))
    assert float(be[5]) == pytest.approx(np.sqrt(280e3**2 - 100e3**2 / 2), rel=1e-6)


def test_runtime_error_has_timestamp(tmp_path, capsys):
    text = BASE + "[species.Be+]\ncount = 5\n[schedule]\nkick = 1e-5 ion=99 vx=1\n"
    p = write(tmp_path, text)
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "runtime error" in err and "t = 1" in err and "line 10" in err


def test_run_writes_listed_outputs(tmp_path):
    text = BASE.replace("seed = 4", "seed = 4\ninitial_temperature = 0.01") + ("[species.Be+]\ncount = 20\n[cooling]\naxes = xyz\n"
                   "[image]\nshape = 40 80\nexposure = 5e-5\n[output]\nfinal_snapshot = on\n"
                   "[schedule]\nsnapshot = 0\nkick = 2e-5 ion=3 vx=10\nimage = 5e-5\nend = 1.5e-4\n")
    p = write(tmp_path, text)
    out = tmp_path / "o"
    assert main(["run", "--config", str(p), "--out-dir", str(out)]) == 0
    m = check_manifest(out)
    assert set(m) == {"snapshot_000.csv", "image_000.pgm", "temperature.csv", "final_snapshot.csv", "summary.txt"}
    assert "N_Be+ = 20" in (out / "summary.txt").read_text()


def test_same_seed_same_outputs(tmp_path):
    args = ["react", "--config", str(SCENARIOS / "be_hd.ini")]
    assert main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/manifest.txt").read_bytes() == (tmp_path / "b/manifest.txt").read_bytes()
    assert main([*args, "--out-dir", str(tmp_path / "c"), "--seed", "2"]) == 0
    assert (tmp_path / "a/manifest.txt").read_bytes() != (tmp_path / "c/manifest.txt").read_bytes()


def test_react_be_hd(tmp_path):
    out = tmp_path / "o"
    assert main(["react", "--config", str(SCENARIOS / "be_hd.ini"), "--out-dir", str(out)]) == 0
    check_manifest(out)
    info = dict(line.split(" = ") for line in (out / "react.txt").read_text().splitlines())
    assert int(info["N_Be+"]) + int(info["N_BeH+"]) + int(info["N_BeD+"]) == 160
    _, rows = read_csv(out / "reactions.csv")
    assert len(rows) == 160 - int(info["N_Be+"])


def test_react_ar_chain_ends_in_h3(tmp_path):
    out = tmp_path / "o"
    assert main(["react", "--config", str(SCENARIOS / "ar_chain.ini"), "--out-dir", str(out)]) == 0
    info = dict(line.split(" = ") for line in (out / "react.txt").read_text().splitlines())
    assert int(info["N_H3+"]) == 40
    assert int(info["N_Ar+"]) == int(info["N_ArH+"]) == int(info["N_H2+"]) == 0


def test_rempd_command(tmp_path):
    out = tmp_path / "o"
    assert main(["rempd", "--config", str(SCENARIOS / "rempd.ini"), "--out-dir", str(out)]) == 0
    check_manifest(out)
    _, rows = read_csv(out / "survival.csv")
    s = np.array([float(r[1]) for r in rows])
    assert s[0] == 1.0 and np.all(np.diff(s) <= 1e-12) and s[-1] < 0.9
    header, _ = read_csv(out / "populations.csv")
    assert header[0] == "t_s" and header[-1] == "sink" and len(header) == 57


def test_spectrum_command(tmp_path):
    out = tmp_path / "o"
    assert main(["spectrum", "--config", str(SCENARIOS / "spectrum.ini"), "--out-dir", str(out)]) == 0
    check_manifest(out)
    _, rows = read_csv(out / "peaks.csv")
    top = max(rows, key=lambda r: float(r[1]))
    assert float(top[0]) == pytest.approx(np.sqrt(280e3**2 - 100e3**2 / 2), rel=0.02)


def test_render_then_fit(tmp_path):
    out = tmp_path / "render"
    assert main(["render", "--config", str(SCENARIOS / "render.ini"), "--out-dir", str(out)]) == 0
    check_manifest(out)
    text = (SCENARIOS / "render.ini").read_text()
    text += f"\n[fit]\nreference = {out / 'image.pgm'}\nsettle = 2e-4\n[fit.grid]\nN = 80 100 120\ntemperature = 0.007\n"
    p = write(tmp_path, text, "fit.ini")
    fit_out = tmp_path / "fit"
    assert main(["fit", "--config", str(p), "--out-dir", str(fit_out)]) == 0
    check_manifest(fit_out)
    assert "N = 100" in (fit_out / "fit.txt").read_text()
    _, rows = read_csv(fit_out / "candidates.csv")
    assert len(rows) == 3


def test_threads_do_not_change_outputs(tmp_path):
    text = (SCENARIOS / "thermostat.ini").read_text().replace("end = 40e-3", "end = 2e-3")
    p = write(tmp_path, text)
    digests = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}"
        env = dict(os.environ)
        env.pop("NUMBA_NUM_THREADS", None)
        cmd = [sys.executable, "-m", "coldions.cli", "run", "--config", str(p), "--out-dir", str(out),
               "--threads", str(threads)]
        subprocess.run(cmd, check=True, env=env, capture_output=True)
        digests.append((out / "manifest.txt").read_bytes())
    assert digests[0] == digests[1]
    assert b"temperature.csv" in digests[0]


def test_three_phase_protocol(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SCENARIOS / "three_phase.ini"), "--out-dir", str(out)]) == 0
    t = temperatures(out / "temperature.csv")
    lc, sc1, sc2 = t["Ba+"], t["AF+"], t["Ba_iso+"]
    before = window_mean(lc, 15e-3, 20e-3)
    heated = window_mean(lc, 24e-3, 25e-3)
    cooled = window_mean(lc, 40e-3, 50e-3)
    # phase 1 (lasers off) warms, phase 2 (lasers on) cools within ~10 ms
    assert heated > 1.1 * before
    assert cooled < 0.6 * heated
    # phase 3: the heated sympathetic species is clearly the hottest; the inert
    # isotopes stay within a few percent of the laser-cooled ions
    t1, t2, tl = (window_mean(s, 60e-3, 100e-3) for s in (sc1, sc2, lc))
    assert t1 > 1.1 * t2 and t1 > 1.1 * tl
    assert abs(t2 / tl - 1) < 0.05
