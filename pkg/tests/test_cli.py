import json
import subprocess
import sys

import pytest

from trnmrf.cli import RunConfig, main, run
from trnmrf.generators import random_tree_model
from trnmrf.model import brute_force_map, energy, load_model, save_model
from trnmrf.trn import TrnConfig

TABLE_LABELS = ("time (s)", "oracle calls", "non-smooth dual", "non-smooth primal", "integer primal")


@pytest.fixture
def tree_file(tmp_path):
    path = tmp_path / "tree.mrf"
    save_model(random_tree_model(1, n_nodes=5, max_labels=3), path)
    return path


def test_generate_matching_and_solve(tmp_path, capsys):
    model = tmp_path / "m.mrf"
    assert main(["generate", "matching", "--n", "4", "--k", "6", "--seed", "3", "--out", str(model)]) == 0
    m = load_model(model)
    assert m.node_count == 4
    trace, report = tmp_path / "t.csv", tmp_path / "r.json"
    assert main(["solve", str(model), "--solver", "trn", "--trace", str(trace), "--report", str(report)]) == 0
    out = capsys.readouterr().out
    for label in TABLE_LABELS:
        assert label in out
    rep = json.loads(report.read_text())
    assert rep["trace_version"] == 1
    for key in ("wall_time_s", "oracle_calls", "nonsmooth_dual", "nonsmooth_primal", "integer_primal"):
        assert rep[key] is not None
    assert rep["nonsmooth_dual"] <= rep["integer_primal"] + 1e-9
    lines = trace.read_text().splitlines()
    assert lines[0] == "oracle_calls,wall_ms,tau,lambda,f,grad_l2,grad_linf,cg_iters,event"
    assert len(lines) > 2


@pytest.mark.parametrize("kind, extra", [("curvature", ["--width", "4", "--height", "3", "--labels", "2"]), ("tree", ["--nodes", "4"])])
def test_generate_other_kinds(tmp_path, kind, extra):
    out = tmp_path / "g.mrf"
    assert main(["generate", kind, "--out", str(out), *extra]) == 0
    assert load_model(out).node_count > 0


def test_generate_is_seed_deterministic(tmp_path):
    a, b = tmp_path / "a.mrf", tmp_path / "b.mrf"
    for path in (a, b):
        main(["generate", "matching", "--n", "4", "--k", "5", "--seed", "7", "--out", str(path)])
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_brute_force_labeling(tmp_path, tree_file, capsys):
    x, e = brute_force_map(load_model(tree_file))
    labels = tmp_path / "x.txt"
    labels.write_text(" ".join(str(v) for v in x) + "\n")
    assert main(["evaluate", str(tree_file), str(labels)]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == energy(load_model(tree_file), x)
    assert value == pytest.approx(e, abs=1e-12)


def test_solve_traces_byte_identical(tmp_path, tree_file):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["solve", str(tree_file), "--trace", str(p), "--threads", "1"]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_wall_time_flag_fills_column(tmp_path, tree_file):
    trace = tmp_path / "t.csv"
    main(["solve", str(tree_file), "--trace", str(trace), "--wall-time"])
    rows = [line.split(",") for line in trace.read_text().splitlines()[1:]]
    assert any(float(r[1]) > 0 for r in rows)


def test_compare_table_and_agreement(tmp_path, tree_file, capsys):
    report = tmp_path / "cmp.json"
    assert main(["compare", str(tree_file), "--solvers", "trn,fista", "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert all(label in out for label in TABLE_LABELS)
    rep = json.loads(report.read_text())
    assert set(rep["table"]) == set(TABLE_LABELS)
    duals = rep["table"]["non-smooth dual"]
    assert abs(duals["trn"] - duals["fista"]) <= 1e-3


def test_solve_qn_with_chain_file(tmp_path, tree_file):
    m = load_model(tree_file)
    chains = tmp_path / "chains.txt"
    chains.write_text("# one clique per chain\n" + "\n".join(str(c) for c in range(m.clique_count)) + "\n")
    report = tmp_path / "r.json"
    rc = main(["solve", str(tree_file), "--solver", "qn", "--decomposition", "chains", "--chains", str(chains), "--report", str(report)])
    assert rc == 0
    assert json.loads(report.read_text())["solver"] == "qn"


def test_run_with_config_object(tree_file, capsys):
    cfg = RunConfig("solve", model=str(tree_file), trn=TrnConfig(max_outer=3))
    assert run(cfg) == 0
    assert "trn" in capsys.readouterr().out


# ---------------------------------------------------------------- exit codes

def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["solve"])
    assert info.value.code == 2


def test_invalid_config_exit_code(tree_file, capsys):
    assert main(["solve", str(tree_file), "--alpha", "0.5"]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_solver_in_compare(tree_file, capsys):
    assert main(["compare", str(tree_file), "--solvers", "trn,newton"]) == 2


def test_missing_or_malformed_model(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "missing.mrf")]) == 1
    bad = tmp_path / "bad.mrf"
    bad.write_text("HOMRF 1\n2\n2 x\n")
    assert main(["evaluate", str(bad), str(bad)]) != 0
    assert capsys.readouterr().err


def test_bad_labeling_file(tmp_path, tree_file):
    labels = tmp_path / "x.txt"
    labels.write_text("0 one 2\n")
    assert main(["evaluate", str(tree_file), str(labels)]) != 0
    labels.write_text("0\n")
    assert main(["evaluate", str(tree_file), str(labels)]) != 0


def test_numerical_abort_exit_code(tmp_path, tree_file, capsys, monkeypatch):
    from trnmrf import cli
    from trnmrf.errors import SolverAbort

    def boom(*args, **kw):
        raise SolverAbort("forced", None)

    monkeypatch.setitem(cli.SOLVERS, "trn", boom)
    assert main(["solve", str(tree_file)]) == 3


def test_console_entry_point(tmp_path, tree_file):
    out = subprocess.run([sys.executable, "-m", "trnmrf.cli", "solve", str(tree_file), "--max-outer", "2"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "non-smooth dual" in out.stdout
