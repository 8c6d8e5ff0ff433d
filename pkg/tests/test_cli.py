import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

import oracles
from coordcap import cli
from coordcap.errors import InputError

HERE = os.path.dirname(__file__)
FIX = os.path.join(HERE, "fixtures")
NOISELESS = os.path.join(FIX, "noiseless.json")
TWO_STATE = os.path.join(FIX, "two_state.json")
GOLDEN = os.path.join(HERE, "golden")

RECORD_KEYS = {"command", "version", "timestamp", "duration_s", "config", "result"}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def record(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    rec = json.loads(out)
    assert set(rec) == RECORD_KEYS
    return rec


def stable(rec):
    return {k: v for k, v in rec.items() if k not in ("timestamp", "duration_s")}


def test_parse_two_state_fixture():
    ch = cli.parse_channel_spec(TWO_STATE)
    assert ch.num_states == 2 and ch.name == "two-state binary"
    assert ch.states[0].kernel_y.rows.tolist() == [[0.9, 0.1], [0.2, 0.8]]
    assert ch.states[0].kernel_z.rows.tolist() == [[0.7, 0.3], [0.4, 0.6]]
    assert ch.states[1].kernel_y.rows.tolist() == [[0.8, 0.2], [0.1, 0.9]]
    assert ch.states[1].kernel_z.rows.tolist() == [[0.6, 0.4], [0.3, 0.7]]


def test_round_trip(tmp_path):
    ch = cli.parse_channel_spec(NOISELESS)
    text = cli.serialize_channel_spec(ch)
    path = tmp_path / "rt.json"
    path.write_text(text)
    again = cli.parse_channel_spec(str(path))
    assert cli.serialize_channel_spec(again) == text
    assert again.x_alphabet.labels == ("0", "1")


def test_row_sum_error_names_state_row_and_line():
    with pytest.raises(InputError) as exc:
        cli.parse_channel_spec(os.path.join(FIX, "bad_row.json"))
    msg = str(exc.value)
    assert "state 1" in msg and "kernel_y row 1" in msg and "line 10" in msg


@pytest.mark.parametrize("doc,fragment", [
    ('{"alphabets": {"x": 2, "y": 2}, "states": []}', "missing field 'z'"),
    ('{"alphabets": {"x": 2, "y": 2, "z": 2}, "states": []}', "nonempty"),
    ('{"alphabets": {"x": 2, "y": 2, "z": 3}, "states": [{"kernel_y": [[1,0],[0,1]], '
     '"kernel_z": [[1,0],[0,1]]}]}', "dimension mismatch"),
    ('{"alphabets": {"x": 2, "y": 2, "z": 2},\n "states": [\n}', "line 3"),
])
def test_spec_errors(tmp_path, doc, fragment):
    path = tmp_path / "s.json"
    path.write_text(doc)
    with pytest.raises(InputError) as exc:
        cli.parse_channel_spec(str(path))
    assert fragment in str(exc.value)


def test_capacity_a1(capsys):
    rec = record(capsys, "capacity", "--channel", NOISELESS, "--targets",
                 os.path.join(FIX, "uniform.json"))
    assert rec["result"]["rate_bits"] == pytest.approx(1.0, abs=1e-6)
    assert rec["command"] == "capacity" and rec["version"] == "0.1.0"


def test_adaptive_a2(capsys):
    rec = record(capsys, "adaptive", "--channel", NOISELESS, "--target",
                 os.path.join(FIX, "point.json"), "--delta", "0.5")
    assert rec["result"]["rate_nats"] == pytest.approx(oracles.H_QUARTER, abs=1e-5)
    assert rec["config"]["deltas"] == [0.5]


def test_sweep_csv_monotone(capsys):
    code, out, _ = run(capsys, "sweep", "--channel", NOISELESS, "--target", "1,0",
                       "--delta-grid", "0:2:0.25", "--format", "csv", "--threads", "1")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "delta_0,rate_nats,rate_bits"
    rates = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(rates) == 9
    assert all(b >= a - 1e-6 for a, b in zip(rates, rates[1:]))
    assert lines[3].startswith("0.5,0.562335,")


def test_sweep_json(capsys):
    rec = record(capsys, "sweep", "--channel", TWO_STATE, "--target", "0.5,0.5",
                 "--delta", "[0.2, [0.3, 0.5]]")
    rows = rec["result"]["rows"]
    assert rows[0]["deltas"] == [0.2, 0.2] and rows[1]["deltas"] == [0.3, 0.5]


def test_feasible_infeasible_exits_zero(capsys):
    rec = record(capsys, "feasible", "--channel", TWO_STATE, "--targets", "[[1,0],[0,1]]")
    assert rec["result"] == {"feasible": False, "witness": None}
    rec = record(capsys, "feasible", "--channel", NOISELESS, "--target", "1,0", "--delta", "0.5")
    assert rec["result"]["feasible"] is True


def test_capacity_infeasible_exits_zero(capsys):
    rec = record(capsys, "capacity", "--channel", TWO_STATE, "--targets", "[[1,0],[0,1]]")
    assert rec["result"]["feasible"] is False and rec["result"]["rate_nats"] is None


def test_oracle(capsys):
    rec = record(capsys, "oracle", "--channel", NOISELESS, "--target", "1,0", "--delta", "0.5",
                 "--lattice-n", "200")
    assert rec["result"]["rate_nats"] == pytest.approx(oracles.H_QUARTER, abs=0.005)


def test_bounds(capsys):
    rec = record(capsys, "bounds", "--joint", "[[0.45,0.05],[0.1,0.4]]", "--blocklength", "8",
                 "--epsilon", "0.6", "--x", "[0,0,0,0,1,1,1,1]", "--q-y", "0.5,0.5", "--exact")
    res = rec["result"]
    assert res["typical_set_size"]["exact"] == 2310
    assert set(res) == {"typical_set_size", "conditional_sequence_probability",
                        "conditional_set_probability", "conditional_set_size",
                        "cross_probability"}
    for rep in res.values():
        assert rep["lower"] <= rep["upper"]


def test_simulate_record(capsys):
    rec = record(capsys, "simulate", "--channel", NOISELESS, "--input-pmf", "0.5,0.5",
                 "--rate", "0.4", "--blocklength", "100", "--trials", "30", "--target",
                 "0.5,0.5", "--seed", "4")
    res = rec["result"]
    assert res["trials_run"] == 30 and res["seed_used"] == 4
    assert res["codebook_mode"] == "ensemble"
    assert rec["config"]["seed"] == 4


def test_simulate_byte_identical(capsys):
    argv = ["simulate", "--channel", TWO_STATE, "--input-pmf", "0.5,0.5", "--rate", "0.1",
            "--blocklength", "30", "--trials", "40", "--target", "0.5,0.5", "--delta", "0.3",
            "--seed", "11"]
    a = stable(record(capsys, *argv))
    b = stable(record(capsys, *argv, "--threads", "2"))
    assert cli.dumps(a) == cli.dumps(b)


def test_golden_records(capsys):
    cases = {
        "capacity_noiseless.json": ["capacity", "--channel", "NOISELESS", "--targets", "0.5,0.5"],
        "adaptive_half.json": ["adaptive", "--channel", "NOISELESS", "--target", "1,0",
                               "--delta", "0.5"],
    }
    for name, argv in cases.items():
        argv = [NOISELESS if a == "NOISELESS" else a for a in argv]
        rec = stable(record(capsys, *argv))
        with open(os.path.join(GOLDEN, name)) as fh:
            golden = json.load(fh)
        rec["config"]["channel"] = "NOISELESS"
        assert set(rec) == set(golden)
        assert rec["config"] == golden["config"]
        assert set(rec["result"]) == set(golden["result"])
        for key in ("rate_nats", "rate_bits"):
            assert rec["result"][key] == pytest.approx(golden["result"][key], abs=1e-9)
        assert rec["result"]["optimizer"] == pytest.approx(golden["result"]["optimizer"], abs=1e-6)


def test_json_precision():
    text = cli.dumps({"a": 0.1, "b": [1.0, math.nan], "c": np.float64(2.5), "d": True})
    assert '"a": 0.10000000000000001' in text
    assert "null" in text
    assert json.loads(text)["c"] == 2.5


@pytest.mark.parametrize("argv,code,kind", [
    (["capacity", "--channel", NOISELESS, "--targets", "0.5,0.5", "--bogus"], 2, "usage"),
    (["capacity", "--channel", "/nonexistent.json", "--targets", "0.5,0.5"], 3, "input"),
    (["capacity", "--channel", os.path.join(FIX, "bad_row.json"), "--targets", "0.5,0.5"], 3,
     "input"),
    (["adaptive", "--channel", NOISELESS, "--target", "1,0", "--delta", "-1"], 3, "input"),
    (["bounds", "--joint", "[[0.45,0.05],[0.1,0.4]]", "--blocklength", "8", "--epsilon", "0.1",
      "--x", "[0,0,0,0,0,0,0,1]"], 4, "precondition"),
    (["simulate", "--channel", NOISELESS, "--input-pmf", "0.5,0.5", "--rate", "0.6",
      "--blocklength", "400", "--trials", "2", "--target", "0.5,0.5", "--codebook-mode",
      "fresh"], 5, "resource"),
    (["oracle", "--channel", NOISELESS, "--target", "1,0", "--lattice-n", "20000000"], 5,
     "resource"),
    (["capacity", "--channel", NOISELESS, "--targets", "0.5,0.5", "--format", "csv"], 2, "usage"),
])
def test_exit_codes(capsys, argv, code, kind):
    got, out, err = run(capsys, *argv) if code != 2 else _run_usage(capsys, argv)
    assert got == code
    assert json.loads(err.strip().splitlines()[-1])["error"]["kind"] == kind
    assert out == ""


def _run_usage(capsys, argv):
    try:
        got = cli.main(argv)
    except SystemExit as exc:
        got = exc.code
    out, err = capsys.readouterr()
    return got, out, err


def test_out_file(tmp_path, capsys):
    dest = tmp_path / "rec.json"
    code, out, _ = run(capsys, "capacity", "--channel", NOISELESS, "--targets", "0.5,0.5",
                       "--out", str(dest))
    assert code == 0 and out == ""
    assert json.loads(dest.read_text())["result"]["feasible"] is True


def test_env_threads(monkeypatch):
    monkeypatch.setenv("COORDCAP_THREADS", "3")
    ns = cli.build_parser().parse_args(["sweep", "--channel", "x", "--target", "1,0",
                                        "--delta", "0"])
    assert cli._threads(ns) == 3
    monkeypatch.setenv("COORDCAP_THREADS", "many")
    with pytest.raises(InputError):
        cli._threads(ns)


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "coordcap", "capacity", "--channel", NOISELESS,
                           "--targets", "0.5,0.5"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["rate_bits"] == pytest.approx(1.0, abs=1e-6)
