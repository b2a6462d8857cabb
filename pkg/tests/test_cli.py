import json

import pytest

from qbalab import cli, report


def run(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    code = cli.main(list(args) + ["--out", str(out)])
    return code, out


def header_of(path):
    first = path.read_text().splitlines()[0]
    if path.suffix == ".tsv":
        assert first.startswith("# ")
        first = first[2:]
    return json.loads(first)["provenance"]


def test_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    text = capsys.readouterr().out
    assert "failstop-leadercrash-n3" in text and "byz-hadamard-n4" in text


def test_check_reduction_pass(tmp_path, capsys):
    code, out = run(tmp_path, "check-reduction", "--scenario", "failstop-leadercrash-n3")
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    rows = report.read_tsv(out / "summary.tsv")
    assert float(rows[0]["tv"]) <= 1e-9 and rows[0]["result"] == "PASS"
    assert (out / "reduction.png").stat().st_size > 0


def test_unknown_scenario_lists_available(tmp_path, capsys):
    code, _ = run(tmp_path, "check-reduction", "--scenario", "nope")
    assert code == 2
    assert "failstop-empty-n3" in capsys.readouterr().err


def test_missing_protocol_is_usage_error(tmp_path, capsys):
    code, _ = run(tmp_path, "run")
    assert code == 2
    assert "protocol" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["run", "--frobnicate"])
    assert err.value.code == 2


def test_t_above_resilience_needs_override(tmp_path):
    code, _ = run(tmp_path, "run", "--protocol", "bracha", "--n", "4", "--t", "2")
    assert code == 2
    code, _ = run(tmp_path, "run", "--protocol", "bracha", "--n", "4", "--t", "2",
                  "--allow-t-override", "--trials", "3")
    assert code in (0, 1)


def test_ba_majority_bound_is_hard(tmp_path):
    code, _ = run(tmp_path, "run", "--protocol", "ba", "--n", "4", "--t", "2", "--allow-t-override")
    assert code == 2


def test_bad_field_size(tmp_path):
    code, _ = run(tmp_path, "run", "--protocol", "savss", "--n", "4", "--p", "4")
    assert code == 2


def test_budget_exceeded_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "run", "--protocol", "leader-coin", "--branch-budget", "1")
    assert code == 3
    assert "budget" in capsys.readouterr().err


def test_property_failure_exit_code(tmp_path):
    # a zero tolerance cannot absorb floating point rounding in the projector suite
    code, _ = run(tmp_path, "props", "--instances", "20", "--runs", "0", "--tol", "0")
    assert code == 1


def test_props_zero_instances_warns(tmp_path, capsys):
    code, _ = run(tmp_path, "props", "--instances", "0", "--runs", "5")
    assert code == 0
    assert "vacuous" in capsys.readouterr().out


def test_props_seeded_rerun_identical(tmp_path):
    run(tmp_path, "props", "--instances", "30", "--runs", "5", sub="a")
    run(tmp_path, "props", "--instances", "30", "--runs", "5", sub="b")
    for name in ("summary.tsv", "transcript.tsv", "traces.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_coin_summary_columns(tmp_path):
    code, out = run(tmp_path, "run", "--protocol", "q-coin", "--n", "4", "--t", "1",
                    "--mode", "enumerate", "--adversary", "core-set")
    assert code == 0
    row = report.read_tsv(out / "summary.tsv")[0]
    assert abs(float(row["P_all1"]) - 81 / 256) <= 1e-9
    assert float(row["core_set_min_all0"]) >= 0.393469
    assert (out / "coin.png").exists()


def test_savss_privacy_table(tmp_path):
    code, out = run(tmp_path, "run", "--protocol", "savss", "--n", "4", "--t", "1", "--p", "5",
                    "--audit", "privacy")
    assert code == 0
    rows = report.read_tsv(out / "privacy.tsv")
    singles = [r for r in rows if r["size"] == "1"]
    assert len(singles) == 4 and all(float(r["max_tv"]) <= 1e-12 for r in singles)
    assert all(float(r["max_tv"]) == pytest.approx(1.0) for r in rows if r["size"] == "2")


def test_ba_run_summary(tmp_path):
    code, out = run(tmp_path, "run", "--protocol", "ba", "--n", "4", "--t", "1", "--adversary", "crash",
                    "--trials", "40", "--seed", "7")
    assert code == 0
    row = report.read_tsv(out / "summary.tsv")[0]
    assert row["agreement_violations"] == "0" and row["validity_violations"] == "0"
    assert (out / "phases.png").exists()


@pytest.mark.parametrize("args", [
    ["run", "--protocol", "ba", "--n", "3", "--trials", "20"],
    ["run", "--protocol", "early-stop", "--mode", "sample", "--trials", "20"],
    ["run", "--protocol", "bracha", "--adversary", "equivocate", "--trials", "10"],
])
def test_same_seed_same_bytes(tmp_path, args):
    run(tmp_path, *args, "--seed", "3", sub="a")
    run(tmp_path, *args, "--seed", "3", "--workers", "4", sub="b")
    run(tmp_path, *args, "--seed", "4", sub="c")
    a = (tmp_path / "a" / "traces.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "traces.jsonl").read_bytes()
    assert a != (tmp_path / "c" / "traces.jsonl").read_bytes()


def test_every_artifact_has_provenance(tmp_path):
    code, out = run(tmp_path, "run", "--protocol", "echo-all", "--seed", "5")
    assert code == 0
    for path in (out / "traces.jsonl", out / "summary.tsv"):
        head = header_of(path)
        assert head["tool"] == "qbalab" and head["seed"] == 5
        assert head["config_hash"] == report.config_hash(head["config"])
        assert "version" in head


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "exp.conf"
    cfg.write_text("protocol = echo-all\nseed = 11\nn = 4\n")
    code, out = run(tmp_path, "run", "--config", str(cfg), "--seed", "12")
    assert code == 0
    head = header_of(out / "traces.jsonl")
    assert head["seed"] == 12
    assert head["config"]["n"] == 4 and head["config"]["protocol"] == "echo-all"
    assert "effective config" in capsys.readouterr().out


@pytest.mark.parametrize("body, needle", [
    ("protocol = echo-all\ncolour = red\n", ":2:"),
    ("protocol = echo-all\nseed = 1\nn = many\n", ":3:"),
])
def test_config_errors_are_line_precise(tmp_path, capsys, body, needle):
    cfg = tmp_path / "bad.conf"
    cfg.write_text(body)
    code, _ = run(tmp_path, "run", "--config", str(cfg))
    assert code == 2
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    code, _ = run(tmp_path, "run", "--config", str(tmp_path / "absent.conf"))
    assert code == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "qbalab.cli", "list-scenarios"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "byz-flip-n4" in proc.stdout
