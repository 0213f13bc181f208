import csv
import json

import pytest

from puredp import cli, relagg, summation, utest
from puredp.cli import emit_results, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def test_params_sum(capsys):
    code, out, _ = run(["params", "--protocol", "sum", "--eps", "1", "--q", "0.05", "--n", "100"], capsys)
    assert code == 0
    kv = _kv(out)
    assert (kv["g"], kv["tau"], kv["m"]) == ("10", "37", "1148")
    assert float(kv["lam"]) == pytest.approx(0.904837, abs=1e-6)


def test_params_agree_with_modules(capsys, tmp_path):
    path = tmp_path / "p.json"
    code, _, _ = run(["params", "--protocol", "relagg", "--m", "3", "--n", "4", "--eps-hat", "0.4",
                      "--q-hat", "0.1", "--out", str(path)], capsys)
    assert code == 0
    doc = json.loads(path.read_text())
    pr = relagg.select_params(3, 4, 0.4, 0.1)
    assert doc["t"] == pr.t and doc["lam"] == pr.lam and doc["msg_len"] == pr.msg_len

    code, out, _ = run(["params", "--protocol", "utest", "--d", "10", "--alpha", "0.4", "--eps", "1",
                        "--cap-N", "100000"], capsys)
    kv = _kv(out)
    ut = utest.select_params_ut(10, 0.4, 1.0, cap_N=1e5)
    assert int(kv["tau"]) == ut.tau and int(kv["m"]) == ut.m
    assert float(kv["ell"]) == pytest.approx(ut.ell, rel=1e-8)


@pytest.mark.parametrize("argv,flag", [
    (["params", "--protocol", "sum", "--eps", "2", "--q", "0.05", "--n", "100"], "--eps"),
    (["params", "--protocol", "sum", "--eps", "1", "--q", "0.05", "--n", "7"], "--n"),
    (["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "10", "--trials", "0"], "--trials"),
    (["ut-experiment", "--d", "10", "--alpha", "0.4", "--eps", "1", "--dist", "half-bump:x"], "--dist"),
    (["ut-experiment", "--d", "10", "--alpha", "0.4", "--eps", "1", "--dist", "cauchy"], "--dist"),
    (["sum-experiment", "--eps", "1", "--q", "0.05"], "--n"),
    (["figure1", "--m", "1"], "--m"),
])
def test_validation_errors(argv, flag, capsys, tmp_path):
    out_path = tmp_path / "never.csv"
    code, _, err = run(argv + ["--out", str(out_path)], capsys)
    assert code == 1
    assert flag in err
    assert not out_path.exists()


def test_parse_errors_exit_1(capsys):
    assert run(["nonsense"], capsys)[0] == 1
    assert run([], capsys)[0] == 1
    assert run(["verify", "--bogus"], capsys)[0] == 1


def test_sum_experiment_csv(capsys, tmp_path):
    path = tmp_path / "s.csv"
    code, out, _ = run(["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "100", "--trials", "4",
                        "--seed", "3", "--out", str(path)], capsys)
    assert code == 0 and "4 trials" in out
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["trial", "true_sum", "estimate", "abs_error"]
    assert [r["trial"] for r in rows] == ["0", "1", "2", "3"]
    p = summation.select_params_sum(1, 0.05, 100)
    ref = [r for r, _ in summation.experiment(p, 4, 3)]
    assert float(rows[2]["estimate"]) == pytest.approx(ref[2]["estimate"])


def test_sum_experiment_deterministic_and_parallel(capsys, tmp_path):
    base = ["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "100", "--trials", "6", "--seed", "5"]
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    run(base + ["--out", str(a)], capsys)
    run(base + ["--out", str(b)], capsys)
    run(base + ["--out", str(c), "--workers", "3"], capsys)
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_sum_experiment_attack_and_transcripts(capsys, tmp_path):
    out, dump = tmp_path / "s.csv", tmp_path / "t.jsonl"
    code, _, _ = run(["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "20", "--trials", "2",
                      "--aggregator", "relagg-with-attack", "--corrupt", "4", "--out", str(out),
                      "--dump-transcripts", str(dump)], capsys)
    assert code == 0
    lines = dump.read_text().splitlines()
    assert len(lines) == 2
    tr = json.loads(lines[0])
    assert tr["view"]["C"] == [0, 1, 2, 3]
    rows = list(csv.DictReader(out.open()))
    assert float(rows[0]["true_sum"]) == pytest.approx(sum(tr["inputs"][4:]), abs=1e-6)


def test_ut_experiment(capsys, tmp_path):
    path = tmp_path / "u.csv"
    code, out, _ = run(["ut-experiment", "--d", "10", "--alpha", "0.4", "--eps", "1", "--trials", "3",
                        "--dist", "half-bump:0.4", "--cap-N", "100000", "--out", str(path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["trial", "n", "Z_prime", "ell", "verdict"]
    assert all(r["verdict"] == "not-uniform" for r in rows)


def test_ut_experiment_file_dist_and_final(capsys, tmp_path):
    pmf_path = tmp_path / "pmf.json"
    pmf_path.write_text(json.dumps([0.25, 0.25, 0.25, 0.25]))
    path = tmp_path / "u.csv"
    code, _, _ = run(["ut-experiment", "--d", "4", "--alpha", "0.4", "--eps", "1", "--trials", "2",
                      "--dist", f"file:{pmf_path}", "--mode", "final", "--N", "200",
                      "--out", str(path)], capsys)
    assert code == 0
    assert len(list(csv.DictReader(path.open()))) == 2


def test_config_file_flags_win(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eps": 1, "q": 0.05, "n": 100, "trials": 5, "seed": 2}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["sum-experiment", "--config", str(cfg), "--trials", "2", "--out", str(a)], capsys)[0] == 0
    assert len(a.read_text().splitlines()) == 3
    run(["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "100", "--trials", "2", "--seed", "2",
         "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert run(["verify", "--config", str(bad)], capsys)[0] == 1


def test_seed_env(capsys, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["sum-experiment", "--eps", "1", "--q", "0.05", "--n", "100", "--trials", "2"]
    monkeypatch.setenv(cli.SEED_ENV, "17")
    run(base + ["--out", str(a)], capsys)
    monkeypatch.delenv(cli.SEED_ENV)
    run(base + ["--seed", "17", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv(cli.SEED_ENV, "abc")
    assert run(base, capsys)[0] == 1


def test_verify_exit_zero(capsys, tmp_path):
    path = tmp_path / "v.json"
    code, out, _ = run(["verify", "--out", str(path)], capsys)
    assert code == 0
    doc = json.loads(path.read_text())
    assert all(r["passed"] for r in doc)


def test_verify_exit_two_on_failure(capsys, monkeypatch):
    from puredp import verify
    monkeypatch.setattr(verify, "run_all", lambda: [verify.InequalityReport("fake", {}, -1.0)])
    code, _, err = run(["verify"], capsys)
    assert code == 2 and "fake" in err


def test_relagg_verify(capsys, tmp_path):
    path = tmp_path / "r.json"
    code, _, _ = run(["relagg-verify", "--trials", "200", "--out", str(path)], capsys)
    assert code == 0
    checks = {r["check"] for r in json.loads(path.read_text())}
    assert checks == {"pair-security", "naive-unbounded", "hybrid", "corrupt-shift", "correctness"}


def test_figure1(capsys, tmp_path):
    path = tmp_path / "f.csv"
    code, _, _ = run(["figure1", "--m", "4", "--n", "2", "--eps-hat", "0.4", "--q-hat", "0.1",
                      "--out", str(path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["point", "mass_black", "mass_red"]
    assert sum(float(r["mass_black"]) for r in rows) == pytest.approx(1.0, abs=1e-6)
    assert sum(float(r["mass_red"]) for r in rows) == pytest.approx(1.0, abs=1e-6)
    jpath = tmp_path / "f.json"
    run(["figure1", "--format", "json", "--out", str(jpath)], capsys)
    assert len(json.loads(jpath.read_text())) == len(rows)


def test_emit_results(tmp_path):
    p = tmp_path / "e.csv"
    emit_results([], str(p), "csv", ["trial", "true_sum", "estimate", "abs_error"])
    assert p.read_text() == "trial,true_sum,estimate,abs_error\n"
    emit_results([{"a": 1, "b": 1 / 3}], str(p), "csv", ["a", "b"])
    assert p.read_text() == "a,b\n1,0.333333333\n"
    with pytest.raises(ValueError):
        emit_results([{"a": 1}], str(p), "csv", ["a", "b"])
    emit_results([{"a": float("inf")}], str(p), "json")
    assert json.loads(p.read_text()) == [{"a": "inf"}]
