"""Scenario runner, Monte-Carlo estimators and report/transcript emission."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import adversaries
from . import transcript as tx
from .aqkd import (AqkdUserState, charlie_measure_and_announce, charlie_open_session, seal_bundle,
                   user_request, user_send_qubits, user_verify_announcement)
from .bits import BitString
from .crypto import AqkdCredential
from .election import Election, ElectionConfig
from .errors import ConfigError, InvalidArgument, SessionAborted
from .qubits import QuantumChannelConfig
from .stats import wilson_interval

log = logging.getLogger(__name__)

REPORT_FILE = "report.json"
TRANSCRIPT_FILE = "transcript.jsonl"
TABLE3_FILE = "table3.json"


@dataclass
class Scenario:
    s: int = 64
    m: int = 128
    N: int = 10
    candidates: list = field(default_factory=lambda: ["A", "B", "C", "D"])
    loss_prob: float = 0.0
    flip_prob: float = 0.0
    ecc_r: int = 5
    tolerance: Optional[float] = None
    adversary: Optional[dict] = None
    seed: int = 0
    retry_cap: int = 3
    trials: int = 1
    report_path: Optional[str] = None
    votes: Optional[list] = None
    faults: dict = field(default_factory=dict)
    max_rounds: Optional[int] = None
    enforce_gate: bool = True

    def election_config(self) -> ElectionConfig:
        return ElectionConfig(candidates=list(self.candidates), s=self.s, m=self.m, N=self.N,
                              loss_prob=self.loss_prob, flip_prob=self.flip_prob, ecc_r=self.ecc_r,
                              tolerance=self.tolerance, retry_cap=self.retry_cap, votes=self.votes,
                              enforce_gate=self.enforce_gate, max_rounds=self.max_rounds,
                              faults=dict(self.faults))

    def make_adversary(self):
        if not self.adversary:
            return None
        return adversaries.build(self.adversary["kind"], self.adversary.get("params"))

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            self.election_config().validate()
            if self.enforce_gate and (self.s < 64 or len(self.candidates) / 2.0 ** self.s > 2.0 ** -40):
                raise InvalidArgument(f"s={self.s} fails the candidate negligibility gate")
            self.make_adversary()
        except (InvalidArgument, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data or {})
    channel = dict(data.pop("channel", None) or {})
    for key in ("loss_prob", "flip_prob"):
        if key in channel:
            data[key] = channel.pop(key)
    if channel:
        raise ConfigError(f"unknown channel keys: {sorted(channel)}")
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    adv = data.get("adversary")
    if adv is not None and (not isinstance(adv, dict) or "kind" not in adv):
        raise ConfigError("adversary must be a mapping with a 'kind' entry")
    try:
        sc = Scenario(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    return scenario_from_dict(data or {})


# -- running ---------------------------------------------------------------------------

@dataclass
class RunReport:
    scenario: dict
    trials: list
    totals: dict
    statistics: dict
    wall_time: float = 0.0

    def to_json(self) -> str:
        # wall time is excluded so identical runs serialize identically
        body = {"scenario": self.scenario, "trials": self.trials, "totals": self.totals,
                "statistics": self.statistics}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


@dataclass
class RunArtifacts:
    report: RunReport
    transcripts: list
    tables: list
    results: list


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def run_trial(sc: Scenario, trial: int):
    rng = trial_rng(sc.seed, trial)
    transcript = tx.Transcript(context={"trial": trial})
    adversary = sc.make_adversary()
    election = Election(sc.election_config(), rng, transcript, adversary)
    return election.run(), transcript, adversary


def _trial_summary(trial: int, result) -> dict:
    sessions = result.sessions
    return {
        "trial": trial,
        "outcome": result.status,
        "reason": result.reason,
        "rounds": result.rounds,
        "tally": result.tally,
        "cast": dict(sorted(result.cast.items())),
        "tally_matches_cast": result.complete_and_correct,
        "flagged": result.flagged,
        "inclusion": dict(Counter(result.inclusion.values())),
        "missing": sorted(k for k, v in result.inclusion.items() if v == "missing"),
        "verdicts": dict(sorted(result.verdicts.items())),
        "injected": result.injected,
        "sessions": len(sessions),
        "sessions_completed": sum(s["status"] == "completed" for s in sessions),
        "detection_events": sum(s["reason"] == "eavesdropping-detected" for s in sessions),
        "session_aborts": dict(sorted(Counter(s["reason"] for s in sessions
                                              if s["status"] in ("aborted", "rejected")).items())),
    }


def run_scenario(sc: Scenario, *, keep_results: bool = False) -> RunArtifacts:
    sc.validate()
    started = time.perf_counter()
    summaries, transcripts, tables, results = [], [], [], []
    rates, sifts = [], []
    checked = detected = completed_sessions = agreeing = 0
    for t in range(sc.trials):
        result, transcript, _ = run_trial(sc, t)
        summaries.append(_trial_summary(t, result))
        transcripts.append(transcript)
        tables.append({"trial": t, "rows": tx.to_jsonable(result.ballot_table.to_payload())})
        for s in result.sessions:
            if s["check_rate"] is not None:
                checked += 1
                rates.append(s["check_rate"])
                detected += s["reason"] == "eavesdropping-detected"
            if s["sift"] is not None:
                sifts.append(s["sift"])
            if s["status"] == "completed":
                completed_sessions += 1
                agreeing += bool(s["keys_agree"])
        if keep_results:
            results.append(result)
        log.debug("trial %d: %s after %d round(s)", t, result.status, result.rounds)

    verdicts = Counter()
    for s in summaries:
        verdicts.update(s["verdicts"])
    outcomes = Counter(s["outcome"] if s["outcome"] == "completed" else f"aborted({s['reason']})"
                       for s in summaries)
    lo, hi = wilson_interval(detected, checked)
    totals = {
        "trials": sc.trials,
        "outcomes": dict(sorted(outcomes.items())),
        "tally_matches_cast": sum(s["tally_matches_cast"] for s in summaries),
        "flagged_voters": sum(len(s["flagged"]) for s in summaries),
        "messages_injected": sum(s["injected"] for s in summaries),
        "verdicts": dict(sorted(verdicts.items())),
        "detection_events": detected,
        "sessions": sum(s["sessions"] for s in summaries),
        "sessions_completed": completed_sessions,
    }
    statistics = {
        "mean_check_error_rate": float(np.mean(rates)) if rates else None,
        "mean_sift_length": float(np.mean(sifts)) if sifts else None,
        "key_agreement_rate": agreeing / completed_sessions if completed_sessions else None,
        "detection_rate": detected / checked if checked else None,
        "detection_rate_ci95": [lo, hi],
    }
    report = RunReport(scenario=dataclasses.asdict(sc), trials=summaries, totals=totals,
                       statistics=statistics, wall_time=time.perf_counter() - started)
    return RunArtifacts(report, transcripts, tables, results)


# -- detection estimate ------------------------------------------------------------------

@dataclass
class DetectionEstimate:
    rate: float
    low: float
    high: float
    trials: int
    aborted: int
    mean_error_rate: float


def check_error_trial(m: int, fraction: float, tolerance: float, rng: np.random.Generator,
                      loss_prob: float = 0.0, flip_prob: float = 0.0):
    """Run one session up to the user's check; returns the CheckResult or None if undecidable."""
    cred = AqkdCredential.generate(m, rng)
    user = AqkdUserState(cred)
    user_request(user)
    auth = seal_bundle(cred.x, cred.y, cred.z, rng)
    session = charlie_open_session(auth.X, auth.link)
    eve = adversaries.InterceptResend(fraction)
    channel = QuantumChannelConfig(loss_prob, flip_prob, eve.channel_hook() if fraction > 0 else None)
    report = user_send_qubits(user, channel, rng)
    try:
        ann = charlie_measure_and_announce(session, report, m, rng)
        return user_verify_announcement(user, ann, tolerance)
    except SessionAborted:
        return None


def estimate_detection_rate(m: int, fraction: float, tolerance: float, trials: int,
                            rng: np.random.Generator, *, loss_prob: float = 0.0,
                            flip_prob: float = 0.0) -> DetectionEstimate:
    """Fraction of sessions the user aborts at the check step, with a Wilson 95 % interval."""
    if trials < 100:
        raise InvalidArgument("at least 100 trials are required")
    aborted = 0
    rates = []
    for _ in range(trials):
        check = check_error_trial(m, fraction, tolerance, rng, loss_prob, flip_prob)
        if check is None or not check.accepted:
            aborted += 1
        if check is not None:
            rates.append(check.rate)
    lo, hi = wilson_interval(aborted, trials)
    return DetectionEstimate(rate=aborted / trials, low=lo, high=hi, trials=trials, aborted=aborted,
                             mean_error_rate=float(np.mean(rates)) if rates else float("nan"))


# -- outputs ---------------------------------------------------------------------------------

def emit_outputs(artifacts: RunArtifacts, out_dir) -> list[Path]:
    """Write report, transcript and Table 3. On failure, partial files are removed."""
    out = Path(out_dir)
    written: list[Path] = []
    payloads = [
        (REPORT_FILE, artifacts.report.to_json()),
        (TRANSCRIPT_FILE, "".join(t.dumps() for t in artifacts.transcripts)),
        (TABLE3_FILE, json.dumps(artifacts.tables, sort_keys=True, indent=2) + "\n"),
    ]
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in payloads:
            path = out / name
            path.write_text(text)
            written.append(path)
    except OSError:
        for path in written:
            try:
                path.unlink()
            except OSError:
                pass
        raise
    return written


# -- transcript verification ----------------------------------------------------------------

@dataclass
class VerifyResult:
    tallies: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def _scan_privacy(records: list, violations: list) -> None:
    ids = set()
    for r in records:
        if r["step"] in ("auth.request", "setup.credential"):
            ids.add(r["payload"]["id"])
    for r in records:
        if r["channel"] in tx.ANONYMOUS:
            text = json.dumps(r["payload"])
            if "sender" in r or '"id"' in text or any(f'"{i}"' in text for i in ids):
                violations.append(f"trial {r.get('trial')}: anonymous record {r['seq']} identifies its sender")


def verify_transcript(records: list) -> VerifyResult:
    """Recheck every trial from its public records alone.

    Recomputes the tally from the published ballot table, and checks ballot
    validity, key uniqueness, agreement with the per-round verification sets,
    raised irregularities and anonymous-channel hygiene.
    """
    by_trial: dict[Any, list] = {}
    for r in records:
        by_trial.setdefault(r.get("trial", 0), []).append(r)
    tallies, violations = {}, []
    for trial, recs in by_trial.items():
        _scan_privacy(recs, violations)
        public = tx.public_records(recs)
        cands = next((r["payload"] for r in public if r["step"] == "setup.candidates"), None)
        table = next((r["payload"]["rows"] for r in public if r["step"] == "publish.table3"), None)
        published = next((r["payload"]["tally"] for r in public if r["step"] == "publish.tally"), None)
        if cands is None or table is None or published is None:
            violations.append(f"trial {trial}: transcript lacks the candidate set, Table 3 or tally")
            continue
        label_of = {(e["v"]["hex"], e["v"]["bits"]): e["label"] for e in cands["entries"]}
        tally = {label: 0 for label in label_of.values()}
        keys = set()
        for row in table:
            label = label_of.get((row["v"]["hex"], row["v"]["bits"]))
            if label is None:
                violations.append(f"trial {trial}: Table 3 holds a ballot outside the candidate set")
                continue
            tally[label] += 1
            k = (row["K_L"]["hex"], row["K_L"]["bits"])
            if k in keys:
                violations.append(f"trial {trial}: duplicate key in Table 3")
            keys.add(k)
        tallies[trial] = tally
        if tally != published:
            violations.append(f"trial {trial}: published tally {published} != recomputed {tally}")
        accepted = sum(len(r["payload"]["a"]) for r in public if r["step"] == "voting.verification-set")
        if accepted != len(table):
            violations.append(f"trial {trial}: {accepted} ballots accepted but Table 3 has {len(table)} rows")
        for r in public:
            if r["step"] == "verify.irregularity":
                violations.append(f"trial {trial}: voter {r['payload']['id']} reports {r['payload']['issue']}")
    return VerifyResult(tallies=tallies, violations=violations)
