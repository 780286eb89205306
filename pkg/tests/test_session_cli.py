import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from maxent_doe.cli import main
from maxent_doe.errors import DataError, ParameterError, StateError
from maxent_doe.geometry import Domain
from maxent_doe.session import (DoeSession, parse_seed_design, read_points_csv, session_lock,
                                write_points_csv)
from maxent_doe.testbed import SQUARE, test_function


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def _fill(csv_text, fid="T1"):
    """Complete a proposals file with analytic measurements."""
    P, _ = read_points_csv(io.StringIO(csv_text), with_values=False)
    return write_points_csv(P, test_function(fid)(P))


@pytest.fixture
def session(tmp_path, capsys):
    path = tmp_path / "s.json"
    assert main(["init", "--seed", "ff:5x5", "--function", "T1", "--out", str(path)]) == 0
    capsys.readouterr()
    return path


def test_seed_design_parsing(tmp_path):
    assert parse_seed_design("ff:5x5", SQUARE).shape == (25, 2)
    a = parse_seed_design("lhs:25:seed=7", SQUARE)
    np.testing.assert_array_equal(a, parse_seed_design("lhs:25:seed=7", SQUARE))
    assert SQUARE.contains(a).all()
    f = tmp_path / "p.csv"
    f.write_text("x1,x2\n0.1,0.2\n-0.5,0.5\n")
    np.testing.assert_array_equal(parse_seed_design(f"points:{f}", SQUARE), [[0.1, 0.2], [-0.5, 0.5]])
    assert parse_seed_design("ff:4", SQUARE).shape == (16, 2)
    for bad in ("lhs:25", "ff:3x3x3", "grid:3", "ff:axb"):
        with pytest.raises(ParameterError):
            parse_seed_design(bad, SQUARE)


def test_csv_round_trip_is_exact():
    P = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    v = np.random.default_rng(1).normal(size=5)
    Q, w = read_points_csv(io.StringIO(write_points_csv(P, v)))
    np.testing.assert_array_equal(Q, P)
    np.testing.assert_array_equal(w, v)
    with pytest.raises(DataError):
        read_points_csv(io.StringIO("a,b,value\n1,2,3\n"))
    with pytest.raises(DataError):
        read_points_csv(io.StringIO("x1,x2\n1,2\n"))


def test_init_evaluates_seed(session):
    s = DoeSession.load(session)
    assert len(s.nodes) == 25 and not s.pending
    np.testing.assert_allclose(s.values(), test_function("T1")(s.positions()))


def test_init_rejects_duplicates(tmp_path, capsys):
    f = tmp_path / "p.csv"
    f.write_text("x1,x2\n0.1,0.2\n0.1,0.2\n")
    assert main(["init", "--seed", f"points:{f}", "--out", str(tmp_path / "s.json")]) == 2
    assert "DataError" in capsys.readouterr().err


def test_init_requires_seed_and_refuses_overwrite(session, capsys):
    assert main(["init", "--out", str(session)]) == 2
    assert main(["init", "--seed", "ff:3x3", "--out", str(session)]) == 2
    assert main(["init", "--seed", "lhs:9", "--out", str(session) + "2"]) == 2


def test_propose_one_point_near_hill(session, capsys):
    assert main(["propose", str(session), "--np", "1"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["x1", "x2", "value"] and len(rows) == 2
    assert np.hypot(float(rows[1][0]), float(rows[1][1])) < 0.5
    assert (session.parent / "s.json.proposals.csv").exists()


def test_propose_twice_is_a_state_error(session, capsys):
    assert main(["propose", str(session), "--np", "3"]) == 0
    rows = _rows(capsys.readouterr().out)[1:]
    assert len({tuple(r) for r in rows}) == 3
    assert main(["propose", str(session)]) == 3
    assert "pending" in capsys.readouterr().err


def test_record_cycle(session, tmp_path, capsys):
    main(["propose", str(session), "--np", "4"])
    text = capsys.readouterr().out
    full = _fill(text)
    lines = full.strip().split("\n")
    part = tmp_path / "part.csv"
    part.write_text("\n".join(lines[:3]) + "\n")
    assert main(["record", str(session), str(part)]) == 0
    s = DoeSession.load(session)
    assert len(s.pending) == 2 and len(s.nodes) == 27 and s.iteration == 0
    bogus = tmp_path / "bogus.csv"
    bogus.write_text("x1,x2,value\n0.123,0.456,1.0\n")
    assert main(["record", str(session), str(bogus)]) == 2
    assert "match no pending" in capsys.readouterr().err
    rest = tmp_path / "rest.csv"
    rest.write_text("\n".join([lines[0]] + lines[3:]) + "\n")
    assert main(["record", str(session), str(rest)]) == 0
    s = DoeSession.load(session)
    assert not s.pending and len(s.nodes) == 29 and s.iteration == 1


def test_record_analytic_mode(session):
    main(["propose", str(session), "--np", "2"])
    assert main(["record", str(session)]) == 0
    s = DoeSession.load(session)
    assert len(s.nodes) == 27 and s.iteration == 1 and len(s.diagnostics) == 1


def test_physical_session_records_seed(tmp_path, capsys):
    path = tmp_path / "lab.json"
    assert main(["init", "--seed", "ff:3x3", "--out", str(path)]) == 0
    s = DoeSession.load(path)
    assert len(s.pending) == 9 and not s.nodes
    assert main(["propose", str(path)]) == 3
    sheet = tmp_path / "lab.json.proposals.csv"
    assert sheet.read_text() == write_points_csv(s.pending_positions())
    seed = tmp_path / "seed.csv"
    seed.write_text(_fill(sheet.read_text(), "T6"))
    assert main(["record", str(path), str(seed)]) == 0
    s = DoeSession.load(path)
    assert len(s.nodes) == 9 and s.iteration == 0


def test_session_round_trip(session):
    main(["propose", str(session), "--np", "2"])
    s = DoeSession.load(session)
    again = DoeSession.from_dict(json.loads(json.dumps(s.to_dict())))
    assert again == s
    assert set(s.to_dict()) == {"version", "domain", "config", "nodes", "pending", "diagnostics"}


def test_noisy_session_round_trip(tmp_path):
    path = tmp_path / "n.json"
    assert main(["init", "--seed", "ff:4x4", "--function", "T1", "--noise", "additive", "--zeta", "0.05",
                 "--seed-rng", "3", "--out", str(path)]) == 0
    s = DoeSession.load(path)
    assert s.noise.zeta == 0.05 and s.noise_calls == 1
    assert not np.allclose(s.values(), test_function("T1")(s.positions()))
    assert DoeSession.from_dict(s.to_dict()) == s
    assert main(["init", "--seed", "ff:4x4", "--function", "T1", "--noise", "additive", "--zeta", "0.05",
                 "--out", str(tmp_path / "m.json")]) == 2


def test_lock(session):
    with session_lock(session):
        with pytest.raises(StateError):
            with session_lock(session):
                pass
        assert main(["propose", str(session)]) == 3
    assert not (session.parent / "s.json.lock").exists()


def test_missing_session(tmp_path):
    assert main(["propose", str(tmp_path / "nope.json")]) == 3
    with pytest.raises(StateError):
        DoeSession(Domain.cube(0.0, 1.0, 2)).model()


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["wave", "--method", "rk4"]) == 2
    assert main(["benchmark", "--method", "lhs", "--replicates", "1"]) == 2


def test_wave_command(tmp_path, capsys):
    out = tmp_path / "ff.csv"
    assert main(["wave", "--method", "ff", "--t-end", "0.2", "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert rows[0] == ["t", "l2", "n_nodes", "method"]
    assert [r[2] for r in rows[1:-1]] == ["49"] * 3
    assert rows[-1][0] == "integrated" and float(rows[-1][1]) > 0
    assert capsys.readouterr().out == out.read_text()
    assert main(["wave", "--method", "me", "--t-end", "0.2"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [r[2] for r in rows[1:-1]] == ["49"] * 3 and float(rows[-1][1]) > 0


def test_benchmark_command(capsys):
    args = ["benchmark", "--function", "T1", "--method", "adaptive", "ff", "lhs", "--np", "4", "--iters", "2",
            "--replicates", "2", "--seed-rng", "5"]
    assert main(args) == 0
    first = capsys.readouterr().out
    rows = _rows(first)
    assert rows[0] == ["function", "method", "n_points", "l2", "R0", "seed"]
    by = {}
    for r in rows[1:]:
        by.setdefault(r[1], []).append(r)
    assert [r[2] for r in by["adaptive"]] == ["29", "33"]
    assert [r[2] for r in by["ff"]] == ["25", "36"]
    assert len(by["lhs"]) == 2 * 2 + 2 and by["lhs"][-1][5] == "mean"
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "maxent_doe.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "propose" in res.stdout
