import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from gwcoal import closed_form as cf
from gwcoal.cli import EXIT_CONFIG, EXIT_EXHAUSTED, EXIT_FAIL, EXIT_OK, main, parse_grid

GOLDEN = Path(__file__).parent / "golden"
BD = {"regime": "bd_noncrit", "law": {"alpha": 1.0, "beta": 2.0}, "T": 3.0, "k": 3, "replicates": 50,
      "seed": 2024}
NC = {"regime": "near_crit", "law": {"mu": 1.0, "r": 1.0}, "k": 3, "seed": 1}


def _cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def _rows(path):
    return [r for r in csv.reader(l for l in open(path) if not l.startswith("#"))]


def test_simulate_golden_and_thread_invariance(tmp_path):
    cfg = _cfg(tmp_path, BD)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"]) == EXIT_OK
    a = (tmp_path / "a" / "simulate.csv").read_bytes()
    assert a == (tmp_path / "b" / "simulate.csv").read_bytes()
    assert hashlib.sha256(a).hexdigest() == (GOLDEN / "simulate_bd_k3.sha256").read_text().strip()
    rows = _rows(tmp_path / "a" / "simulate.csv")
    assert rows[0] == ["replicate", "s_1", "s_2", "chain", "N_T"]
    assert all(int(r[-1]) >= 3 for r in rows[1:])


def test_cli_flags_override_config(tmp_path):
    cfg = _cfg(tmp_path, BD)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--replicates", "7", "--seed", "5"]) == EXIT_OK
    assert len(_rows(tmp_path / "simulate.csv")) == 8


def test_toml_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('regime = "bd_crit"\nT = 5.0\nk = 2\nreplicates = 5\nseed = 3\n[law]\nbeta = 1.0\n')
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == EXIT_OK
    s = np.array([float(r[1]) for r in _rows(tmp_path / "simulate.csv")[1:]])
    assert np.all((s > 0) & (s <= 1))  # critical regime reports scaled times


@pytest.mark.parametrize("bad", [
    {"regime": "poisson"},
    {"seed": None},
    {"k": 1},
    {"T": -1.0},
    {"colour": "red"},
    {"law": {"alpha": 1.0}},
    {"grid": [[0.1]]},
])
def test_config_errors(tmp_path, bad):
    d = dict(BD, **bad)
    assert main(["simulate", "--config", _cfg(tmp_path, d), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bd_regime_guards(tmp_path):
    crit = {"regime": "bd_crit", "law": {"alpha": 1.0, "beta": 2.0}, "seed": 1}
    non = dict(BD, law={"alpha": 1.0, "beta": 1.0})
    assert main(["tables", "--config", _cfg(tmp_path, crit), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["tables", "--config", _cfg(tmp_path, non), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["limit", "--config", _cfg(tmp_path, BD), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_or_broken_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--seed", "1"]) == EXIT_CONFIG
    (tmp_path / "x.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "x.json")]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_attempts_exhausted(tmp_path):
    d = {"regime": "bd_noncrit", "law": {"alpha": 5.0, "beta": 1.0}, "T": 5.0, "k": 3, "replicates": 10,
         "seed": 1, "max_attempts": 1}
    assert main(["simulate", "--config", _cfg(tmp_path, d), "--out", str(tmp_path)]) == EXIT_EXHAUSTED


def test_tables_golden(tmp_path):
    assert main(["tables", "--config", _cfg(tmp_path, NC), "--out", str(tmp_path)]) == EXIT_OK
    got, want = _rows(tmp_path / "tables.csv"), _rows(GOLDEN / "tables_near_crit_k3.csv")
    assert got[0] == want[0] == ["s_1", "s_2", "tail", "density", "error"]
    g = np.array([[float(x) for x in r[:4]] for r in got[1:]])
    w = np.array([[float(x) for x in r[:4]] for r in want[1:]])
    assert np.max(np.abs(g - w)) <= 1e-12
    assert g[0, 2] == pytest.approx(cf.nearcrit_joint_tail(1.0, 1.0, [0.1, 0.3]), abs=1e-12)


def test_tables_depend_on_sign_of_mu(tmp_path):
    for mu, sub in ((1.0, "p"), (-1.0, "m")):
        d = dict(NC, law={"mu": mu}, k=2)
        assert main(["tables", "--config", _cfg(tmp_path, d), "--out", str(tmp_path / sub)]) == EXIT_OK
    p = np.array([float(r[1]) for r in _rows(tmp_path / "p" / "tables.csv")[1:]])
    m = np.array([float(r[1]) for r in _rows(tmp_path / "m" / "tables.csv")[1:]])
    # subcritical genealogies split later
    assert np.all(m > p)


def test_tables_report_ties(tmp_path):
    d = dict(NC, grid="0.3,0.3;0.2,0.6")
    assert main(["tables", "--config", _cfg(tmp_path, d), "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "tables.csv")
    assert rows[1][2] == "" and rows[1][4].startswith("tie suggested_eps=")
    assert rows[2][4] == "" and float(rows[2][2]) > 0


def test_tables_header_documents_formula(tmp_path):
    d = {"regime": "bd_crit", "law": {"beta": 1.0}, "T": 100.0, "k": 2, "seed": 1}
    assert main(["tables", "--config", _cfg(tmp_path, d), "--out", str(tmp_path), "--grid", "0.5"]) == EXIT_OK
    text = (tmp_path / "tables.csv").read_text()
    assert "b = 1/(beta T)" in text
    row = _rows(tmp_path / "tables.csv")[1]
    assert float(row[1]) == pytest.approx(cf.bd_crit_k2_tail(1.0, 100.0, 0.5), abs=1e-12)


def test_spine_and_limit_outputs(tmp_path):
    d = dict(BD, replicates=20)
    assert main(["spine", "--config", _cfg(tmp_path, d), "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "spine.csv")
    assert rows[0] == ["replicate", "psi_1", "psi_2", "chain", "ordinary", "residue", "N_T"]
    assert all(int(r[6]) == 3 + int(r[4]) + int(r[5]) for r in rows[1:])
    d = dict(NC, replicates=15, k=4)
    assert main(["limit", "--config", _cfg(tmp_path, d), "--out", str(tmp_path)]) == EXIT_OK
    trees = json.loads((tmp_path / "limit_trees.json").read_text())
    assert len(trees) == 15 and len(_rows(tmp_path / "limit.csv")) == 16
    assert all(sorted(t["attachments"]).count(-1) == 1 for t in trees)


def test_parse_grid():
    assert parse_grid("0.1,0.5") == [[0.1], [0.5]]
    assert parse_grid("0.1,0.3;0.2,0.6", 3) == [[0.1, 0.3], [0.2, 0.6]]
    assert parse_grid("0.1,0.3", 3) == [[0.1, 0.3]]


def test_selftest_and_list(capsys):
    assert main(["selftest"]) == EXIT_OK
    assert main(["verify", "--list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("bd-noncrit", "spine", "determinism"):
        assert name in out


def test_verify_single_check(tmp_path, capsys):
    assert main(["verify", "--check", "analytic", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    payload = json.loads((tmp_path / "verify.json").read_text())
    assert payload["pass"] and payload["attempts"][0]["seed"] == 3
    assert "PASS" in capsys.readouterr().out
    assert main(["verify", "--check", "nonsense", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_verify_fault_injection_fails(tmp_path):
    rc = main(["verify", "--check", "spine", "--seed", "3", "--scale", "0.02", "--fault", "size-bias",
               "--out", str(tmp_path)])
    assert rc == EXIT_FAIL
    payload = json.loads((tmp_path / "verify.json").read_text())
    assert len(payload["attempts"]) == 2
    camp = [r for r in payload["reports"] if r["statistic"].startswith("campbell")]
    assert camp and not any(r["passed"] for r in camp)
