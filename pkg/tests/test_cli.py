import json
from fractions import Fraction

import pytest

from fhglab import cli
from fhglab.core import load_instance


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_star_writes_the_family_instance(tmp_path, capsys):
    out = tmp_path / "star.json"
    code, _, _ = run_cli(capsys, "gen", "star", "--I", "1,2", "--eps", "1/2",
                         "--x", "5", "--out", str(out))
    assert code == 0
    G = load_instance(out)
    assert G.n == 4 and G.w(0, 2) == 2 and G.w(0, 3) == 4 and G.w(0, 1) == -32


def test_gen_bistar_weight_strings(tmp_path, capsys):
    out = tmp_path / "bistar.json"
    code, _, _ = run_cli(capsys, "gen", "bistar", "--I", "1", "--J", "2",
                         "--eps", "1/2", "--x", "5", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    ab = [e for e in doc["weights"] if (e["i"], e["j"]) == (0, 1)]
    assert ab[0]["w"] == "8/1"


def test_gen_tree_is_byte_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run_cli(capsys, "gen", "tree", "--n", "5", "--seed", "7", "--out", str(a))
    run_cli(capsys, "gen", "tree", "--n", "5", "--seed", "7", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_run_greedy_on_pair_reports_unit_ratio(tmp_path, capsys):
    inst = tmp_path / "pair.json"
    inst.write_text(json.dumps(
        {"n": 2, "weights": [{"i": 0, "j": 1, "w": "5/1"}]}))
    code, out, _ = run_cli(capsys, "run", "--instance", str(inst),
                           "--alg", "greedy", "--arrival", "order:0,1")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "instance_id,alg,mode,arrival,welfare,opt,ratio,samples,stderr,seed"
    cells = row.split(",")
    assert cells[4] == "5/1" and cells[5] == "5/1" and cells[6] == "1/1"


def test_run_sampling_policy_on_tiny_instance_warns_and_reports_zero(tmp_path, capsys):
    inst = tmp_path / "tri.json"
    inst.write_text(json.dumps(
        {"n": 3, "weights": [{"i": 0, "j": 1, "w": "4/1"}, {"i": 1, "j": 2, "w": "2/1"}]}))
    code, out, err = run_cli(capsys, "run", "--instance", str(inst),
                             "--alg", "sample-mwm:k=3", "--arrival", "random",
                             "--expect", "exact", "--format", "json")
    assert code == 0
    assert "sampling phase" in err and "warning" in err
    doc = json.loads(out)
    assert doc["welfare"] == "0/1"


def test_run_star_policy_via_inferred_view(tmp_path, capsys):
    out = tmp_path / "star.json"
    run_cli(capsys, "gen", "star", "--I", "1,2", "--eps", "1/2", "--x", "5",
            "--out", str(out))
    code, text, _ = run_cli(capsys, "run", "--instance", str(out),
                            "--alg", "star:f=one", "--arrival", "random",
                            "--expect", "exact", "--format", "json")
    assert code == 0
    doc = json.loads(text)
    assert doc["welfare"] == "10/3"


def test_run_exact_refuses_oversized_instances(tmp_path, capsys):
    inst = tmp_path / "big.json"
    inst.write_text(json.dumps({"n": 9, "weights": []}))
    code, _, err = run_cli(capsys, "run", "--instance", str(inst),
                           "--alg", "greedy", "--arrival", "random",
                           "--expect", "exact")
    assert code == cli.EXIT_USAGE
    assert "exact expectation needs n <=" in err


def test_run_missing_instance_is_io_error(capsys):
    code, _, _ = run_cli(capsys, "run", "--instance", "/nonexistent/x.json",
                         "--alg", "greedy")
    assert code == cli.EXIT_IO


def test_adversary_low_gamma_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "adversary", "--alg", "greedy", "--gamma", "1/50")
    assert code == cli.EXIT_USAGE
    assert "gamma" in err


def test_adversary_against_greedy_records_never_dissolves(tmp_path, capsys):
    bundle = tmp_path / "bundle.json"
    code, out, _ = run_cli(capsys, "adversary", "--alg", "greedy", "--gamma", "1/5",
                           "--phases", "1", "--waves", "4", "--out", str(bundle))
    assert code == 0
    assert "outcome: policy-never-dissolves" in out
    doc = json.loads(bundle.read_text())
    assert doc["outcome"] == "policy-never-dissolves"
    assert doc["instance"]["n"] > 2


def test_verify_suites_pass_and_fail_codes(capsys):
    code, out, _ = run_cli(capsys, "verify", "sequence", "--beta", "18/100",
                           "--cases", "10000")
    assert code == 0
    doc = json.loads(out)
    assert doc["pass"] is True and doc["horizon"] is not None

    code, out, _ = run_cli(capsys, "verify", "starprob", "--f", "one", "--maxI", "3")
    assert code == 0

    code, out, _ = run_cli(capsys, "verify", "thm-half-approx", "--cases", "25", "--n", "6")
    assert code == 0
    assert json.loads(out)["failures"] == []


def test_star_prob_command(capsys):
    code, out, _ = run_cli(capsys, "star-prob", "--I", "1,2", "--f", "one")
    assert code == 0
    doc = json.loads(out)
    assert doc["h"] == "1/1" and doc["r"] == "2/3"


def test_sweep_produces_sorted_csv(tmp_path, capsys):
    for seed in (1, 2):
        run_cli(capsys, "gen", "random", "--n", "4", "--seed", str(seed),
                "--out", str(tmp_path / f"i{seed}.json"))
    out = tmp_path / "sweep.csv"
    code, _, _ = run_cli(capsys, "sweep", "--instances", str(tmp_path / "i*.json"),
                         "--algs", "greedy,sample-mwm:k=3", "--expect", "exact",
                         "--out", str(out))
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("instance_id,alg,")
    assert len(lines) == 5
    assert lines[1:] == sorted(lines[1:])


def test_config_raises_caps_with_warning(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"exact_cap": 9}))
    inst = tmp_path / "pair.json"
    inst.write_text(json.dumps({"n": 2, "weights": [{"i": 0, "j": 1, "w": "3/1"}]}))
    code, _, err = run_cli(capsys, "--config", str(cfg), "run", "--instance",
                           str(inst), "--alg", "greedy", "--arrival", "random")
    assert code == 0
    assert "raising exact_cap" in err
