import json
import subprocess
import sys

import pytest

from autobid.cli import main


@pytest.fixture
def files(tmp_path):
    inst = tmp_path / "inst.json"
    inst.write_text(json.dumps({"budgets": [1.0, 1.0], "values": [[2.0], [2.0]]}))
    bids = tmp_path / "bids.json"
    bids.write_text(json.dumps({"mode": "per_query", "bids": [[1.0], [1.0]]}))
    return tmp_path, str(inst), str(bids)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_opt(capsys, files):
    _, inst, _ = files
    code, out, _ = run(capsys, "opt", "--instance", inst)
    assert code == 0 and json.loads(out)["value"] == 2.0
    code, out, _ = run(capsys, "opt", "--instance", inst, "--mode", "integral")
    # one unit-budget winner: the gap instance at n = 2
    assert json.loads(out)["value"] == 1.0


def test_eq_verify_and_diagnose(capsys, files):
    _, inst, bids = files
    code, out, _ = run(capsys, "eq", "verify", "--instance", inst, "--bids", bids, "--diagnose")
    doc = json.loads(out)
    assert code == 0 and doc["is_equilibrium"]
    assert all(c["passed"] for c in doc["diagnostics"])
    code, out, _ = run(capsys, "eq", "diagnose", "--instance", inst, "--bids", bids)
    assert json.loads(out)["all_passed"]


def test_dynamics_and_poa(capsys, files):
    tmp, inst, _ = files
    out_path = tmp / "dyn.json"
    code, _, _ = run(capsys, "eq", "dynamics", "--instance", inst, "--out", str(out_path))
    doc = json.loads(out_path.read_text())
    assert code == 0 and doc["converged"]
    (tmp / "eq.json").write_text(json.dumps(doc["bids"]))
    code, out, _ = run(capsys, "poa", "--instance", inst, "--bids", str(tmp / "eq.json"))
    doc = json.loads(out)
    assert doc["poa"] == pytest.approx(2.0) and doc["ipoa"] == pytest.approx(1.0)


def test_bounds_commands(capsys):
    code, out, _ = run(capsys, "bounds", "certify-rfpa", "--alpha", "1.4", "--eta", "0.44",
                       "--gamma", "0.56")
    assert code == 0 and json.loads(out)["value"] >= 1 / 1.8 - 1e-4
    code, out, _ = run(capsys, "bounds", "qp", "--eta", "0.5", "--alpha", "2", "--n", "2")
    assert json.loads(out)["poa_bound"] == pytest.approx(4.0)


def test_replicate_csv(capsys):
    code, out, _ = run(capsys, "replicate", "--only", "gap,qp", "--scale", "0.01", "--format", "csv")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0].startswith("name,")
    assert len(lines) == 1 + 4 + 2


def test_replicate_unknown_group_gives_empty_table(capsys):
    code, out, _ = run(capsys, "replicate", "--only", "nothing")
    assert code == 0 and json.loads(out)["rows"] == []


@pytest.mark.parametrize("argv", [
    ["opt", "--instance", "/no/such/file.json"],
    ["bounds", "certify-rfpa", "--alpha", "0.5", "--eta", "0.3"],
    ["bounds", "qp", "--eta", "1.5", "--alpha", "2", "--n", "2"],
    ["search", "--n", "0", "--q", "1"],
    ["replicate", "--scale", "0"],
    ["frobnicate"],
])
def test_bad_input_exits_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and err


def test_rfpa_needs_alpha(capsys, files):
    _, inst, bids = files
    code, _, err = run(capsys, "eq", "verify", "--instance", inst, "--bids", bids, "--mechanism", "rfpa")
    assert code == 1 and "--alpha" in err


def test_node_cap_exits_2(capsys, tmp_path):
    inst = tmp_path / "big.json"
    inst.write_text(json.dumps({"budgets": ["inf"] * 4, "values": [[1.0] * 8] * 4}))
    code, _, err = run(capsys, "opt", "--instance", str(inst), "--mode", "integral", "--node-cap", "5")
    assert code == 2 and "numeric" in err


def test_console_script_installed():
    res = subprocess.run([sys.executable, "-m", "autobid.cli", "bounds", "qp", "--eta", "0.5",
                          "--alpha", "2", "--n", "2"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["limit"] == 3.0
