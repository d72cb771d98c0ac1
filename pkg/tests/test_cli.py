import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from crnosc.cli import main, parse_state, UsageError
from crnosc.model import read_network

NETS = resources.files("crnosc").joinpath("networks")
R1 = str(NETS / "r1.crn")
ADD = str(NETS / "r2_additions.crn")


def run(*argv):
    return main([str(a) for a in argv])


def test_parse_state_forms():
    np.testing.assert_array_equal(parse_state("1,2,3", ("X", "Y", "Z")), [1, 2, 3])
    np.testing.assert_array_equal(parse_state("Z=3, X=1,Y=2", ("X", "Y", "Z")), [1, 2, 3])
    with pytest.raises(UsageError, match="Z"):
        parse_state("X=1,Y=2", ("X", "Y", "Z"))
    with pytest.raises(UsageError, match="Z"):
        parse_state("1,2", ("X", "Y", "Z"))
    with pytest.raises(UsageError):
        parse_state("1,a,2", ("X", "Y", "Z"))


def test_simulate(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert run("simulate", R1, "--x0", "1,1,1", "--t-end", 20, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,X,Y,Z" and lines[1] == "0,1,1,1"
    assert "drift" in capsys.readouterr().out


def test_simulate_zero_duration(tmp_path):
    out = tmp_path / "t.csv"
    assert run("simulate", R1, "--x0", "1,1,1", "--t-end", 0, "--out", out) == 0
    assert out.read_text().splitlines() == ["t,X,Y,Z", "0,1,1,1"]


def test_simulate_missing_species(tmp_path, capsys):
    assert run("simulate", R1, "--x0", "X=1,Y=1", "--t-end", 1, "--out", tmp_path / "t.csv") == 1
    assert "Z" in capsys.readouterr().err


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.crn"
    bad.write_text("X -> ; k = 1\n")
    assert run("simulate", bad, "--x0", "1", "--t-end", 1, "--out", tmp_path / "t.csv") == 1
    assert "line 1" in capsys.readouterr().err
    assert run("simulate", tmp_path / "absent.crn", "--x0", "1", "--t-end", 1, "--out", tmp_path / "t.csv") == 1


def test_integration_failure_exit(tmp_path, capsys):
    net = tmp_path / "blow.crn"
    net.write_text("2 X -> 3 X ; k = 1\n")
    assert run("simulate", net, "--x0", "1", "--t-end", 5, "--out", tmp_path / "t.csv") == 2
    assert "stiffness" in capsys.readouterr().err


def test_orbit_and_floquet(tmp_path, capsys):
    out, csv = tmp_path / "o.json", tmp_path / "s.csv"
    assert run("orbit", R1, "--x0", "1,1,1", "--out", out, "--samples-csv", csv) == 0
    rep = json.loads(out.read_text())
    assert rep["schema"] == 1 and rep["classification"] == "nondegenerate-stable"
    assert rep["samples_csv_path"] == str(csv)
    assert len(csv.read_text().splitlines()) == 513
    capsys.readouterr()
    assert run("floquet", R1) == 0
    text = capsys.readouterr().out
    assert "classification: nondegenerate-stable" in text and "(trivial)" in text


def test_no_orbit_exit(tmp_path, capsys):
    net = tmp_path / "dec.crn"
    net.write_text("0 <-> X ; kf = 1, kr = 1\n")
    assert run("orbit", net) == 3
    assert "converged-to-equilibrium" in capsys.readouterr().err


def test_tighter_tolerance_reduces_multiplier_drift(tmp_path):
    def mu(rtol):
        out = tmp_path / f"o{rtol}.json"
        assert run("floquet", R1, "--rtol", rtol, "--atol", rtol / 100, "--out", out) == 0
        return json.loads(out.read_text())["multipliers_relative"][1]["re"]

    a, b, c = mu(1e-7), mu(1e-8), mu(1e-10)
    assert abs(b - c) < abs(a - c)


def test_extend(tmp_path, capsys):
    out = tmp_path / "r2.crn"
    assert run("extend", R1, "--add", ADD, "--eps", 0.2, "--eta", 0.2, "--out", out) == 0
    text = capsys.readouterr().out
    assert "rank 2" in text and "pivot species: U, V" in text
    net = read_network(out)
    assert net.species == ("X", "Y", "Z", "U", "V", "W")
    added = net.reactions[5:]
    np.testing.assert_allclose([added[0].k_forward, added[0].k_backward, added[1].k_forward, added[1].k_backward],
                               [5, 125, 25, 125], rtol=1e-15)


def test_extend_eta_one(tmp_path):
    out = tmp_path / "r2.crn"
    assert run("extend", R1, "--add", ADD, "--eps", 0.5, "--eta", 1, "--out", out) == 0
    for rxn in read_network(out).reactions[5:]:
        assert rxn.k_forward == 2.0 and rxn.k_backward == 2.0


def test_extend_rank_deficient(tmp_path, capsys):
    add = tmp_path / "bad.crn"
    add.write_text("X + N <-> N\n")
    assert run("extend", R1, "--add", add, "--out", tmp_path / "x.crn") == 4
    err = capsys.readouterr().err
    assert "rank 0" in err and "[[0]]" in err
    assert not (tmp_path / "x.crn").exists()


def test_verify_rank_deficient_fails_fast(tmp_path):
    add = tmp_path / "bad.crn"
    add.write_text("X + N <-> N\n")
    assert run("verify", R1, "--add", add, "--y0", "1", "--out", tmp_path / "v.json") == 4


def test_verify(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert run("verify", R1, "--add", ADD, "--y0", "U=0,V=0,W=1", "--out", out, "--samples-csv") == 0
    rep = json.loads(out.read_text())
    assert rep["schema"] == 1 and rep["orbit"]["classification"] == "nondegenerate-stable"
    assert rep["conserved_combination"]["initial"] == [1.0]
    assert (tmp_path / "v.samples.csv").exists()
    assert "nondegenerate-stable" in capsys.readouterr().out


def test_verify_bad_y0(tmp_path, capsys):
    assert run("verify", R1, "--add", ADD, "--y0", "0,0") == 1
    assert "W" in capsys.readouterr().err


def test_verify_sweep_and_determinism(tmp_path):
    out = tmp_path / "sweep.json"
    args = ("verify", R1, "--add", ADD, "--y0", "0,0,1", "--eps-list", "0.2,0.1", "--out", out)
    assert run(*args) == 0
    first = {p.name: p.read_bytes() for p in tmp_path.glob("sweep_eps*.json")}
    assert sorted(first) == ["sweep_eps0.1.json", "sweep_eps0.2.json"]
    h = [json.loads(first[f"sweep_eps{e}.json"])["hausdorff_old_species"] for e in ("0.2", "0.1")]
    assert h[1] <= 1.2 * h[0]
    assert json.loads(first["sweep_eps0.1.json"])["eta"] == 0.1
    assert run(*args) == 0
    assert {p.name: p.read_bytes() for p in tmp_path.glob("sweep_eps*.json")} == first


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "crnosc", "extend", R1, "--add", ADD, "--out",
                          str(tmp_path / "r2.crn")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    bad = subprocess.run([sys.executable, "-m", "crnosc", "simulate"], capture_output=True, text=True)
    assert bad.returncode == 1  # usage errors share the invalid-input code
