"""End-to-end command line runs against temp directories.

Everything goes through ``main(argv)`` in-process so exit codes and
stdout are observable; one subprocess smoke test covers the installed
console script.  Artifact determinism is asserted at the byte level.
"""

import json
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from mfgstop.cli import grid_csv_text, main, read_grid_csv

DECOUPLED = """\
[grid]
T = 1.0
a = 0.0
b = 1.0
K = 8
J = 6

[model]
mu.kind = constant
mu.params = 0.0
sigma.kind = constant
sigma.params = 0.5

[initial]
kind = uniform

[reward]
term1.fbar.kind = linear
term1.fbar.params = 0.7 0.0
term1.g.kind = affine
term1.g.params = 0.3 0.5

[algorithm]
eps_tol = 1e-9
"""

STOP_NOW = """\
[grid]
T = 1.0
a = 0.0
b = 1.0
K = 6
J = 5

[model]
mu.kind = constant
mu.params = 0.0
sigma.kind = constant
sigma.params = 0.5

[initial]
kind = uniform

[reward]
h.kind = constant
h.params = -1.0
"""

NEVER_STOP = STOP_NOW.replace("h.params = -1.0", "h.params = 1.0").replace(
    "kind = uniform", "kind = atom(0.41)")

BUMP = """\
[grid]
T = 1.0
a = -3.0
b = 3.0
K = 60
J = 59

[model]
mu.kind = constant
mu.params = 0.0
sigma.kind = constant
sigma.params = 0.5

[initial]
kind = tabulated(masses.txt)

[reward]
h.kind = polynomial
h.params = 1.44 0.0 -1.0

[mc]
n_paths = 2000
seed = 0
"""


def _cfg(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def _run(args, capsys=None):
    code = main(args)
    if capsys is None:
        return code, ""
    return code, capsys.readouterr().out


def _bump_cfg(tmp_path):
    x = np.linspace(-3.0, 3.0, 61)[1:-1]
    w = np.exp(-0.5 * (x / 0.5) ** 2)
    np.savetxt(tmp_path / "masses.txt", w / w.sum())
    return _cfg(tmp_path, BUMP, "bump.ini")


# ----------------------------------------------------------------------
# solve-mfg


def test_solve_mfg_decoupled_run(tmp_path, capsys):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    code, text = _run(["solve-mfg", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    assert "converged after 1 iterations" in text

    for name in ("value.csv", "measure.csv", "trace.csv", "moment.csv",
                 "ledger.json", "summary.json"):
        assert (out / name).exists()

    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 1
    assert summary["exploitability"] == 0.0
    assert summary["duality_gap"] <= 1e-12

    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert trace_lines[0] == "iteration,F,eps,rho"
    assert len(trace_lines) == 2

    moment_lines = (out / "moment.csv").read_text().splitlines()
    assert moment_lines[0] == "t,y1"
    assert len(moment_lines) == 1 + 9


def test_solve_mfg_is_byte_deterministic(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve-mfg", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["solve-mfg", "--config", cfg, "--out", str(b), "--quiet"]) == 0
    for name in ("value.csv", "measure.csv", "trace.csv", "moment.csv",
                 "ledger.json", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_measure_csv_round_trips_bitwise(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    assert main(["solve-mfg", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    path = out / "measure.csv"
    times, nodes, masses = read_grid_csv(str(path))
    from mfgstop import build_grid
    grid = build_grid(T=1.0, a=0.0, b=1.0, K=8, J=6)
    np.testing.assert_array_equal(times, grid.t)
    np.testing.assert_array_equal(nodes, grid.x)
    assert grid_csv_text(grid, masses) == path.read_text()


def test_solve_mfg_all_continue_init_agrees(tmp_path):
    cfg_a = _cfg(tmp_path, DECOUPLED, "a.ini")
    cfg_b = _cfg(tmp_path, DECOUPLED + "m_init = all_continue\n", "b.ini")
    out_a, out_b = tmp_path / "oa", tmp_path / "ob"
    assert main(["solve-mfg", "--config", cfg_a, "--out", str(out_a), "--quiet"]) == 0
    assert main(["solve-mfg", "--config", cfg_b, "--out", str(out_b), "--quiet"]) == 0
    va = json.loads((out_a / "summary.json").read_text())["value"]
    vb = json.loads((out_b / "summary.json").read_text())["value"]
    assert va == pytest.approx(vb, abs=1e-12)


# ----------------------------------------------------------------------
# solve-stop


def test_solve_stop_all_negative_reward(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["value"] == 0.0
    assert summary["stopped_mass"] == pytest.approx(1.0, abs=1e-12)
    _, _, masses = read_grid_csv(str(out / "measure.csv"))
    np.testing.assert_array_equal(masses, np.zeros((7, 5)))
    ledger = json.loads((out / "ledger.json").read_text())
    assert ledger["conservation_gap"] <= 1e-12


def test_solve_stop_atom_start_never_stopping(tmp_path):
    cfg = _cfg(tmp_path, NEVER_STOP)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    _, _, masses = read_grid_csv(str(out / "measure.csv"))
    row0 = masses[0]
    assert np.count_nonzero(row0) == 1
    assert row0.sum() == 1.0


# ----------------------------------------------------------------------
# verify


def test_verify_passes_after_solve_mfg(tmp_path, capsys):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    assert main(["solve-mfg", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    code, text = _run(["verify", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    for name in ("round-trip", "admissibility", "duality", "value-agreement",
                 "complementarity", "fp-residual", "audit"):
        assert f"PASS {name}" in text
    assert "FAIL" not in text
    assert "verify: all checks passed" in text


def test_verify_passes_after_solve_stop(tmp_path):
    cfg = _bump_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert main(["verify", "--config", cfg, "--out", str(out), "--quiet"]) == 0


def test_verify_accepts_seed_override(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    assert main(["solve-mfg", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert main(["verify", "--config", cfg, "--out", str(out),
                 "--seed", "5", "--quiet"]) == 0


def test_verify_detects_tampered_measure(tmp_path, capsys):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    assert main(["solve-mfg", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    path = out / "measure.csv"
    lines = path.read_text().splitlines()
    t, x, _ = lines[1].split(",")
    lines[1] = f"{t},{x},0.5"
    path.write_text("\n".join(lines) + "\n")
    code, text = _run(["verify", "--config", cfg, "--out", str(out)], capsys)
    assert code == 5
    assert "FAIL" in text


def test_verify_missing_artifacts_fails(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "none")]) == 5


def test_quiet_suppresses_output(tmp_path, capsys):
    cfg = _cfg(tmp_path, DECOUPLED)
    out = tmp_path / "out"
    code, text = _run(["solve-mfg", "--config", cfg, "--out", str(out),
                       "--quiet"], capsys)
    assert code == 0 and text == ""
    code, text = _run(["verify", "--config", cfg, "--out", str(out),
                       "--quiet"], capsys)
    assert code == 0 and text == ""


# ----------------------------------------------------------------------
# mc-check


def test_mc_check_statistical_agreement(tmp_path, capsys):
    cfg = _bump_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    code, text = _run(["mc-check", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    assert "within 3 standard errors" in text
    report = (out / "mc_report.csv").read_text().splitlines()
    assert report[0] == "k,t,exact,mc,se,z"
    assert len(report) == 1 + 61


def test_mc_check_degenerate_all_stop(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert main(["mc-check", "--config", cfg, "--out", str(out), "--quiet"]) == 0


def test_mc_check_flags_systematic_bias(tmp_path, capsys):
    # atom sitting on the stop frontier: the one-step laws differ too
    # much for agreement at this sample size, and the check must say so
    text = """\
[grid]
T = 1.0
a = -2.0
b = 2.0
K = 40
J = 39

[model]
mu.kind = constant
mu.params = 0.0
sigma.kind = constant
sigma.params = 0.5

[initial]
kind = atom(0.0)

[reward]
h.kind = affine
h.params = -0.2 -1.0

[mc]
n_paths = 20000
seed = 0
"""
    cfg = _cfg(tmp_path, text)
    out = tmp_path / "out"
    assert main(["solve-stop", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    code, _ = _run(["mc-check", "--config", cfg, "--out", str(out), "--quiet"],
                   capsys)
    assert code == 5


# ----------------------------------------------------------------------
# discount folding


def test_discount_folds_terminal_payoff(tmp_path):
    base = """\
[grid]
T = 1.0
a = 0.0
b = 1.0
K = 6
J = 5

[model]
mu.kind = constant
mu.params = 0.0
sigma.kind = constant
sigma.params = 1.0

[initial]
kind = uniform
"""
    folded = base + """\
[discount]
rho = 0.5
terminal.kind = polynomial
terminal.params = 0.0 0.0 0.5
"""
    # same running reward written out by hand: e^{-rho t} (sigma^2/2 - rho x^2/2),
    # with the time factor tabulated exactly at the grid's own time nodes
    from mfgstop import build_grid
    t = build_grid(T=1.0, a=0.0, b=1.0, K=6, J=5).t
    disc = np.exp(-0.5 * t)
    explicit = base + (
        "[reward]\n"
        "h.kind = polynomial\n"
        "h.params = 0.5 0.0 -0.25\n"
        "h.time.kind = tabulated\n"
        f"h.time.nodes = {' '.join(f'{v:.17g}' for v in t)}\n"
        f"h.time.values = {' '.join(f'{v:.17g}' for v in disc)}\n"
    )
    cfg_f = _cfg(tmp_path, folded, "folded.ini")
    cfg_e = _cfg(tmp_path, explicit, "explicit.ini")
    out_f, out_e = tmp_path / "f", tmp_path / "e"
    assert main(["solve-stop", "--config", cfg_f, "--out", str(out_f), "--quiet"]) == 0
    assert main(["solve-stop", "--config", cfg_e, "--out", str(out_e), "--quiet"]) == 0
    _, _, vf = read_grid_csv(str(out_f / "value.csv"))
    _, _, ve = read_grid_csv(str(out_e / "value.csv"))
    np.testing.assert_allclose(vf, ve, atol=1e-14)


def test_discount_with_coupled_term_runs(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED + """\

[discount]
rho = 0.3
""")
    out = tmp_path / "out"
    assert main(["solve-mfg", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exploitability"] <= 1e-9


# ----------------------------------------------------------------------
# failure exits


def test_missing_config_exits_2(tmp_path):
    assert main(["solve-stop", "--config", str(tmp_path / "nope.ini"),
                 "--out", str(tmp_path / "o")]) == 2


def test_malformed_config_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "this is not an ini file [[[")
    assert main(["solve-stop", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_section_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "[grid]\nT = 1\na = 0\nb = 1\nK = 4\nJ = 4\n")
    assert main(["solve-stop", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_zero_horizon_exits_3(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW.replace("T = 1.0", "T = 0.0"))
    assert main(["solve-stop", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_unknown_coefficient_kind_exits_3(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW.replace("mu.kind = constant",
                                          "mu.kind = quartic"))
    assert main(["solve-stop", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_unknown_initial_kind_exits_3(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW.replace("kind = uniform", "kind = spread"))
    assert main(["solve-stop", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_bad_m_init_exits_3(tmp_path):
    cfg = _cfg(tmp_path, DECOUPLED + "m_init = warm\n")
    assert main(["solve-mfg", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


# ----------------------------------------------------------------------
# shipped configs

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def test_shipped_decoupled_config(tmp_path, capsys):
    out = tmp_path / "out"
    code, text = _run(["solve-mfg", "--config", str(CONFIGS / "decoupled.ini"),
                       "--out", str(out)], capsys)
    assert code == 0
    assert "converged after 1 iterations" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 1
    assert summary["exploitability"] == 0.0
    assert summary["value"] == pytest.approx(0.6995527913623115, rel=1e-12)


def test_shipped_stop_now_config(tmp_path):
    out = tmp_path / "out"
    cfg = str(CONFIGS / "stop_now.ini")
    assert main(["solve-stop", "--config", cfg, "--out", str(out),
                 "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["value"] == 0.0
    assert summary["stopped_mass"] == pytest.approx(1.0, abs=1e-12)
    _, _, masses = read_grid_csv(str(out / "measure.csv"))
    assert not masses.any()
    assert main(["mc-check", "--config", cfg, "--out", str(out),
                 "--quiet"]) == 0


def test_shipped_congestion_config(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = str(CONFIGS / "congestion.ini")
    code, text = _run(["solve-mfg", "--config", cfg, "--out", str(out)],
                      capsys)
    assert code == 0
    assert "converged after 11 iterations" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exploitability"] == 0.0
    assert summary["value"] == pytest.approx(0.019319324226063746, rel=1e-12)
    code, text = _run(["verify", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    assert "all checks passed" in text


# ----------------------------------------------------------------------
# console script


def test_console_script_smoke(tmp_path):
    cfg = _cfg(tmp_path, STOP_NOW)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "mfgstop.cli", "solve-stop",
         "--config", cfg, "--out", str(out), "--quiet"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "summary.json").exists()
