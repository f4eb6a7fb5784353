import csv
import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from perfora.cli import RUN_SCHEMA, RunConfig, main
from perfora.errors import InvalidParameter
from perfora.grid import load_field

DOMAINS = Path(__file__).resolve().parents[1] / "domains"
FAST = ["--window", "1", "--h", "0.125", "--starts", "2"]


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_lambda_report(capsys):
    code, out, _ = _run(capsys, ["lambda", "--domain", str(DOMAINS / "balls.json"), "--p", "3", "--q", "6", *FAST])
    assert code == 0
    rep = json.loads(out)
    assert rep["schema"] == "perfora.report/1"
    cfg = rep["run_config"]
    assert cfg["schema"] == RUN_SCHEMA and cfg["p"] == 3.0 and cfg["h"] == 0.125
    assert "threads" not in cfg and "emit_field" not in cfg
    assert rep["result"]["lambda"] > 0
    assert rep["result"]["converged"]


def test_output_is_deterministic(capsys, monkeypatch):
    argv = ["lambda", "--domain", str(DOMAINS / "balls.json"), "--p", "3", "--q", "6", *FAST]
    _, a, _ = _run(capsys, argv)
    _, b, _ = _run(capsys, argv)
    monkeypatch.setenv("PERFORA_THREADS", "2")
    _, c, _ = _run(capsys, argv)
    assert a == b == c


def test_config_file_and_flags(tmp_path, capsys):
    cfg = {"schema": RUN_SCHEMA, "command": "lambda", "domain": str(DOMAINS / "pepper.json"),
           "p": 2.0, "q": 4.0, "window": 1, "h": 0.125, "starts": 2}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = _run(capsys, ["lambda", "--config", str(path), "--q", "3"])
    assert code == 0
    assert json.loads(out)["run_config"]["q"] == 3.0  # flags override the file


def test_config_errors(tmp_path, capsys):
    base = {"schema": RUN_SCHEMA, "domain": str(DOMAINS / "pepper.json")}
    for bad in ({**base, "colour": "red"}, {"domain": base["domain"]}, {**base, "command": "capacity"}, [1, 2]):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        code, out, err = _run(capsys, ["lambda", "--config", str(path)])
        assert code == 1 and out == "" and "error" in err
    code, _, err = _run(capsys, ["lambda"])
    assert code == 1 and "domain" in err
    with pytest.raises(InvalidParameter):
        RunConfig.build("nope", None, {})


def test_invalid_domain_exits_one(tmp_path, capsys):
    d = json.loads((DOMAINS / "pepper.json").read_text())
    d["t"] = [1.0, 0.0]
    path = tmp_path / "bad_t.json"
    path.write_text(json.dumps(d))
    code, _, err = _run(capsys, ["lambda", "--domain", str(path)])
    assert code == 1 and "positive" in err
    code, _, _ = _run(capsys, ["lambda", "--domain", str(DOMAINS / "pepper.json"), "--p", "2", "--q", "1"])
    assert code == 1


def test_not_converged_exits_two(capsys):
    code, out, err = _run(capsys, ["lambda", "--domain", str(DOMAINS / "balls.json"), "--max-iters", "1", *FAST])
    assert code == 2
    assert json.loads(out)["result"]["converged"] is False
    assert "converge" in err


def test_csv_and_field(tmp_path, capsys):
    table = tmp_path / "hist.csv"
    field = tmp_path / "u.txt"
    code, out, _ = _run(capsys, ["lambda", "--domain", str(DOMAINS / "balls.json"), "--csv", str(table),
                                 "--emit-field", str(field), *FAST])
    assert code == 0
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["iteration", "energy"]
    assert float(rows[-1][1]) > 0
    h, U = load_field(field)
    assert h == 0.125 and U.shape == (25, 25)
    assert U.min() >= 0 and np.isclose(U.max(), json.loads(out)["result"]["diagnostics"]["sup_norm"])


def test_capacity_command(capsys):
    code, out, _ = _run(capsys, ["capacity", "--obstacle", '{"kind": "ball", "center": [0, 0], "radius": 1}',
                                 "--box", '{"kind": "ball", "center": [0, 0], "radius": 2}', "--h", "0.0625"])
    assert code == 0
    val = json.loads(out)["result"]["value"]
    exact = 2 * np.pi / np.log(2)
    assert abs(val - exact) / exact < 0.05
    code, _, _ = _run(capsys, ["capacity", "--obstacle", '{"kind": "blob"}',
                               "--box", '{"kind": "ball", "center": [0, 0], "radius": 2}'])
    assert code == 1


def test_other_commands(capsys):
    code, out, _ = _run(capsys, ["lieb-ball", "--domain", str(DOMAINS / "balls.json"), "--window", "1",
                                 "--h", "0.0625", "--radii", "0.25,0.5,1.0"])
    assert code == 0 and json.loads(out)["result"]["radius"] > 0
    code, out, _ = _run(capsys, ["infinity", "--domain", str(DOMAINS / "pepper.json"), "--window", "1",
                                 "--h", "0.125", "--q-list", "8,16"])
    assert code == 0 and len(json.loads(out)["result"]["table"]) == 2
    code, _, err = _run(capsys, ["infinity", "--domain", str(DOMAINS / "pepper.json"), "--p", "2"])
    assert code == 1 and "p > N" in err
    code, out, _ = _run(capsys, ["mazya-sweep", "--hole", '{"kind": "ball", "center": [0, 0], "radius": 0.25}',
                                 "--t-list", "[[1, 1]]", "--nodes-per-cell", "8", "--cap-h", "0.0625"])
    assert code == 0 and json.loads(out)["result"]["scalars"]["c_emp_min"] > 0
    code, _, _ = _run(capsys, ["section8", "--variant", "shrunk", "--radius", "0.4"])
    assert code == 1


@pytest.mark.skipif(shutil.which("perfora") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["perfora", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "perfora" in res.stdout
