import json
import subprocess
import sys

import pytest

from vlkey.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def result(out):
    return json.loads(out)["result"]


def test_mi(capsys):
    code, out, _ = run(capsys, "mi", "--source", "builtin:erasure:m=4,eps=1/4")
    assert code == 0 and result(out)["I"] == 3.0


def test_scheme_exact(capsys):
    code, out, _ = run(capsys, "scheme", "--source", "builtin:partial-copy:m=8", "--m", "8", "--t", "3")
    r = result(out)
    assert code == 0
    assert r["E_L"]["exact"] == "75/64"
    assert r["sup_distance"]["exact"] == "217/480"
    assert set(r["per_l_distance"]) == {"0", "5"}


def test_scheme_csv_and_out(capsys, tmp_path):
    dest = tmp_path / "r.csv"
    code, out, _ = run(capsys, "scheme", "--source", "builtin:partial-copy:m=4", "--m", "4", "--t", "2",
                       "--csv", "--out", str(dest))
    assert code == 0
    assert out.splitlines()[0] == "path,value"
    assert "result.E_L.exact,11/16" in out
    assert dest.read_text() == out


def test_sampled_scheme_needs_seed(capsys, monkeypatch):
    monkeypatch.delenv("VLKEY_SEED", raising=False)
    code, _, err = run(capsys, "scheme", "--source", "builtin:partial-copy:m=4", "--m", "4", "--t", "2",
                       "--trials", "100")
    assert code == 2 and "--seed" in err
    monkeypatch.setenv("VLKEY_SEED", "4")
    code, out, _ = run(capsys, "scheme", "--source", "builtin:partial-copy:m=4", "--m", "4", "--t", "2",
                       "--trials", "100")
    assert code == 0 and json.loads(out)["config"]["seed"] == 4


def test_replay_is_byte_identical(capsys, tmp_path):
    first = tmp_path / "a.json"
    code, out, _ = run(capsys, "scheme", "--source", "builtin:partial-copy:m=4", "--m", "4", "--t", "1",
                       "--trials", "500", "--seed", "9", "--out", str(first))
    assert code == 0
    code, again, _ = run(capsys, "run", "--config", str(first))
    assert code == 0 and again == out


def test_audit_keys_file(capsys, tmp_path):
    keys = tmp_path / "k.jsonl"
    run(capsys, "scheme", "--source", "builtin:erasure:m=4,eps=1/4", "--scheme", "erasure", "--m", "4",
        "--keys-out", str(keys))
    code, out, _ = run(capsys, "audit", "--source", "builtin:erasure:m=4,eps=1/4", "--keys", str(keys))
    r = result(out)
    assert code == 0
    assert r["E_L"]["exact"] == "4/1"
    assert r["per_bit_violations"] == []
    assert all(rep["satisfied"] for rep in r["reports"])


def test_entropy_model_exact_and_hint(capsys):
    code, out, _ = run(capsys, "entropy-model", "--source", "builtin:identity:m=2", "--m", "2", "--eps", "1/10")
    assert code == 0 and result(out)["H_eq"] == 0.5625
    code, _, err = run(capsys, "entropy-model", "--source", "builtin:partial-copy:m=8", "--m", "8",
                       "--eps", "0.05")
    assert code == 2 and "--trials" in err


def test_entropy_model_sampled(capsys):
    code, out, _ = run(capsys, "entropy-model", "--source", "builtin:partial-copy:m=4", "--m", "4",
                       "--eps", "1/20", "--trials", "300", "--seed", "1", "--conditional-trials", "50")
    r = result(out)
    assert code == 0 and "H_eq_stderr" in r
    assert 0 <= r["P_disagree"]["value"] <= 1


def test_convert_and_pipeline(capsys, tmp_path):
    keys = tmp_path / "e.jsonl"
    run(capsys, "entropy-model", "--source", "builtin:partial-copy:m=2", "--m", "2", "--eps", "9/20",
        "--keys-out", str(keys))
    code, out, _ = run(capsys, "convert", "--keys", str(keys), "--eps-prime", "3/10")
    r = result(out)
    assert code == 0 and r["bound_satisfied"]
    assert r["sup_distance"]["value"] <= 0.3
    code, out, _ = run(capsys, "pipeline", "--source", "builtin:identity:m=2", "--eps", "1/10",
                       "--eps-prime", "3/10")
    assert code == 0 and result(out)["P_disagree_entropy_model"]["exact"] == "0/1"


def test_bounds(capsys):
    code, out, _ = run(capsys, "bounds", "--I", "500", "--eps", "0.002", "--lam", "1", "--kappa", "20")
    r = result(out)
    assert code == 0
    assert r["key_length"]["lower"] >= 440
    assert {"lambda_regime", "coinciding_entropy", "kappa_range"} <= set(r)
    code, _, err = run(capsys, "bounds", "--I", "1", "--lam", "1")
    assert code == 2


def test_concat_code_split(capsys, tmp_path):
    keys = tmp_path / "p.jsonl"
    run(capsys, "scheme", "--source", "builtin:partial-copy:m=4", "--m", "4", "--t", "2", "--keys-out", str(keys))
    code, out, _ = run(capsys, "concat", "--keys", str(keys), "--keys", str(keys))
    assert code == 0 and result(out)["violations"] == []
    code, out, _ = run(capsys, "code", "--n", "7", "--d", "3", "--k", "4", "--seed", "5")
    assert code == 0 and result(out)["min_distance"] >= 3
    code, _, err = run(capsys, "code", "--n", "10", "--d", "21")
    assert code == 2
    code, out, _ = run(capsys, "split", "--keys", str(keys), "--t", "1", "--game", "guess", "--trials", "500",
                       "--seed", "2")
    payoff = result(out)["payoff"]
    assert set(payoff) == {"fixed", "replay", "random"}


def test_bad_inputs(capsys, tmp_path):
    code, _, err = run(capsys, "mi", "--source", "builtin:nope")
    assert code == 2 and "unknown builtin" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"config": {"command": "frobnicate"}}')
    code, _, err = run(capsys, "run", "--config", str(bad))
    assert code == 2
    with pytest.raises(SystemExit):
        main(["scheme"])


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vlkey.cli", "mi", "--source", "builtin:identity:m=1"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["result"]["I"] == 1.0
