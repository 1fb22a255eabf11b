import json

import numpy as np
import pytest
from scipy.stats import binom

from qvote import transcript as tx
from qvote.cli import main
from qvote.errors import ConfigError, InvalidArgument
from qvote.harness import (emit_outputs, estimate_detection_rate, load_scenario, run_scenario,
                           scenario_from_dict, verify_transcript)
from qvote.stats import wilson_interval


def _records(artifacts):
    return [r for t in artifacts.transcripts for r in t.records]


def test_wilson_interval_reference_values():
    # reference: 95 % Wilson interval for 8/10 is (0.4902, 0.9433)
    lo, hi = wilson_interval(8, 10)
    assert lo == pytest.approx(0.4902, abs=1e-4) and hi == pytest.approx(0.9433, abs=1e-4)
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(1000, 1000)
    assert hi == 1.0 and lo > 0.996


def test_honest_baseline():
    art = run_scenario(scenario_from_dict({"N": 10, "m": 128, "trials": 100, "seed": 1}))
    t = art.report.totals
    assert t["outcomes"] == {"completed": 100} and t["tally_matches_cast"] == 100
    assert sum(t["verdicts"].values()) == t["messages_injected"]


def test_counts_reconcile_under_adversaries():
    for adv in ({"kind": "replay-ballot"}, {"kind": "forge-random-ballot", "params": {"attempts": 50}}):
        art = run_scenario(scenario_from_dict({"N": 5, "m": 1024, "trials": 3, "adversary": adv}))
        for trial in art.report.trials:
            assert sum(trial["verdicts"].values()) == trial["injected"]


def test_intercept_resend_scenario_no_completed_sessions():
    art = run_scenario(scenario_from_dict({"N": 10, "m": 128, "retry_cap": 0, "max_rounds": 1,
                                           "adversary": {"kind": "intercept-resend"}}))
    assert art.report.totals["sessions_completed"] == 0
    assert art.report.statistics["detection_rate"] == 1.0
    assert art.report.statistics["detection_rate_ci95"][0] > 0.6


def test_same_seed_same_report_bytes():
    sc = {"N": 6, "m": 128, "trials": 3, "seed": 99, "channel": {"loss_prob": 0.05, "flip_prob": 0.01}}
    a, b = run_scenario(scenario_from_dict(sc)), run_scenario(scenario_from_dict(sc))
    assert a.report.to_json() == b.report.to_json()
    assert "wall_time" not in a.report.to_json()
    assert [t.dumps() for t in a.transcripts] == [t.dumps() for t in b.transcripts]


@pytest.mark.parametrize("bad", [
    {"trials": 0}, {"N": -1}, {"s": 8}, {"bogus": 1}, {"channel": {"loss_prob": 2}},
    {"channel": {"jitter": 1}}, {"adversary": {"kind": "teleport"}}, {"adversary": "replay"},
    {"adversary": {"kind": "replay-ballot", "params": {"nope": 1}}}, {"ecc_r": 4}, {"seed": -1},
])
def test_invalid_config_fails_before_trials(bad):
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)


def test_load_scenario_yaml_and_json(tmp_path):
    y = tmp_path / "s.yaml"
    y.write_text("N: 4\nm: 256\nchannel:\n  loss_prob: 0.05\nadversary:\n  kind: replay-ballot\n")
    sc = load_scenario(y)
    assert sc.N == 4 and sc.loss_prob == 0.05 and sc.adversary["kind"] == "replay-ballot"
    j = tmp_path / "s.json"
    j.write_text(json.dumps({"N": 3, "trials": 2}))
    assert load_scenario(j).trials == 2
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "list.yaml")
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.yaml")


def test_detection_rate_estimates():
    rng = np.random.default_rng(0)
    full = estimate_detection_rate(64, 1.0, 0.0, 4000, rng)
    exact = 1 - sum(binom.pmf(c, 64, 0.5) * 0.75 ** c for c in range(65))
    assert full.rate >= 0.9995 and exact >= 0.9995
    none = estimate_detection_rate(64, 0.0, 0.05, 500, rng)
    assert none.rate == 0.0 and none.low == 0.0
    half = estimate_detection_rate(64, 0.5, 0.05, 2000, rng)
    top = estimate_detection_rate(64, 1.0, 0.05, 2000, rng)
    assert none.rate < half.rate < top.rate
    assert top.low <= top.rate <= top.high
    with pytest.raises(InvalidArgument):
        estimate_detection_rate(64, 1.0, 0.05, 99, rng)


def test_emit_outputs_and_verify_replay(tmp_path):
    art = run_scenario(scenario_from_dict({"N": 5, "m": 1024, "trials": 2, "seed": 4}))
    paths = emit_outputs(art, tmp_path / "out")
    assert sorted(p.name for p in paths) == ["report.json", "table3.json", "transcript.jsonl"]
    records = tx.load_jsonl((tmp_path / "out" / "transcript.jsonl").read_text())
    result = verify_transcript(records)
    assert result.ok
    assert result.tallies == {t["trial"]: t["tally"] for t in art.report.trials}
    table3 = json.loads((tmp_path / "out" / "table3.json").read_text())
    assert [len(t["rows"]) for t in table3] == [5, 5]


def test_aborted_trial_transcript_complete_through_abort(tmp_path):
    art = run_scenario(scenario_from_dict({"N": 3, "m": 128, "retry_cap": 0, "max_rounds": 1,
                                           "adversary": {"kind": "intercept-resend"}}))
    steps = [r["step"] for r in art.transcripts[0]]
    assert "aqkd.abort" in steps and steps[-1] == "publish.tally"
    emit_outputs(art, tmp_path)
    assert (tmp_path / "transcript.jsonl").read_text().count("\n") == len(steps)


def test_unwritable_path_fails_cleanly(tmp_path):
    art = run_scenario(scenario_from_dict({"N": 2, "m": 1024}))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_outputs(art, blocker / "out")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]


def test_partial_outputs_removed_on_midway_failure(tmp_path):
    art = run_scenario(scenario_from_dict({"N": 2, "m": 1024}))
    out = tmp_path / "o"
    out.mkdir()
    (out / "table3.json").mkdir()  # third write fails
    with pytest.raises(OSError):
        emit_outputs(art, out)
    assert sorted(p.name for p in out.iterdir()) == ["table3.json"]


def test_verify_detects_tampering():
    art = run_scenario(scenario_from_dict({"N": 4, "m": 1024, "seed": 2}))
    records = json.loads(json.dumps(_records(art)))
    tally = next(r for r in records if r["step"] == "publish.tally")
    label = next(iter(tally["payload"]["tally"]))
    tally["payload"]["tally"][label] += 1
    assert any("published tally" in v for v in verify_transcript(records).violations)

    records = json.loads(json.dumps(_records(art)))
    table = next(r for r in records if r["step"] == "publish.table3")
    table["payload"]["rows"].append(dict(table["payload"]["rows"][0]))
    violations = verify_transcript(records).violations
    assert any("duplicate key" in v for v in violations)
    assert any("Table 3 has" in v for v in violations)

    records = json.loads(json.dumps(_records(art)))
    ballot = next(r for r in records if r["step"] == "voting.ballot")
    ballot["sender"] = "V1"
    assert any("identifies its sender" in v for v in verify_transcript(records).violations)


def test_verify_flags_dropped_ballot():
    art = run_scenario(scenario_from_dict({"N": 4, "m": 1024, "faults": {"drop_ballot": True}}))
    v = verify_transcript(_records(art)).violations
    assert any("missing-inclusion" in x for x in v)


# -- CLI -----------------------------------------------------------------------------------

def test_cli_run_and_verify(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("N: 4\nm: 1024\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seed", "3", "--trials", "2", "--out", str(out)]) == 0
    assert "outcomes={'completed': 2}" in capsys.readouterr().out
    assert main(["verify", str(out)]) == 0
    assert capsys.readouterr().out.strip().endswith("ok")


def test_cli_verify_violation_exit_code(tmp_path):
    out = tmp_path / "out"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 3, "m": 1024, "faults": {"drop_ballot": True}}))
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert main(["verify", str(out / "transcript.jsonl"), "--quiet"]) == 2


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("N: 4\nwidgets: 2\n")
    assert main(["run", "--config", str(cfg)]) == 1
    assert "widgets" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "nothing.jsonl")]) == 1


def test_cli_adversary_flag(capsys):
    assert main(["run", "--adversary", "forge-random-ballot", "--seed", "1"]) == 0
    assert "unknown-key" in capsys.readouterr().out


def test_cli_sweep(tmp_path, capsys):
    assert main(["sweep", "--param", "flip_prob", "--values", "0,0.01", "--trials", "2",
                 "--out", str(tmp_path)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("flip_prob=")]
    assert len(lines) == 2
    rows = json.loads((tmp_path / "sweep.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [0, 0.01]
    assert main(["sweep", "--adversary", "intercept-resend", "--param", "adversary.fraction",
                 "--values", "0,1", "--quiet"]) == 0
    assert main(["sweep", "--param", "adversary.fraction", "--values", "1", "--quiet"]) == 1


def test_cli_demo(capsys):
    assert main(["demo"]) == 0
    out = capsys.readouterr().out
    assert "inclusion confirmed" in out and "tally matches" in out


def test_detection_rate_matches_exact_sum():
    # E_c[P(Bin(c, 1/4) > floor(0.05 c))], c ~ Bin(64, 1/2)
    exact = sum(binom.pmf(c, 64, 0.5) * binom.sf(np.floor(0.05 * c), c, 0.25) for c in range(1, 65))
    assert exact == pytest.approx(0.998033, abs=1e-6)
    est = estimate_detection_rate(64, 1.0, 0.05, 5000, np.random.default_rng(31))
    assert abs(est.rate - exact) <= 0.005
