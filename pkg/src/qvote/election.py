"""Four-phase election: setup, authentication, key distribution, voting.

The administrator (Bob) certifies voters and keeps Table 1; the counter
(Charlie) keeps Table 2 of anonymous keys and publishes Table 3 of ballots.
Voters who fail a round are re-credentialed and vote again in the next round
until they succeed or exhaust ``retry_cap`` failed rounds.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import transcript as tx
from .aqkd import (AqkdCounter, AqkdUserState, SessionParams, UserPhase, run_session,
                   seal_bundle)
from .bits import BitString, random_bits
from .crypto import EccConfig, VoterCredential, issue_voter_credentials, otp_decrypt, otp_encrypt
from .errors import InvalidArgument, Rejected
from .qubits import QuantumChannelConfig

NEGLIGIBLE = 2.0 ** -40
MIN_CANDIDATE_BITS = 64


class ElectionPhase(enum.IntEnum):
    SETUP = 0
    AUTHENTICATION = 1
    KEY_DISTRIBUTION = 2
    VOTING = 3
    PUBLISHED = 4


class Verdict(str, enum.Enum):
    COUNTED = "counted"
    UNKNOWN_KEY = "unknown-key"
    REPLAY = "replay"
    INVALID_BALLOT = "invalid-ballot"
    WRONG_PHASE = "wrong-phase"


# -- tables -------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateSet:
    s: int
    entries: dict  # BitString -> label

    def __contains__(self, bits: BitString) -> bool:
        return bits in self.entries

    def __len__(self):
        return len(self.entries)

    def encoding(self, label: str) -> BitString:
        for bits, name in self.entries.items():
            if name == label:
                return bits
        raise InvalidArgument(f"unknown candidate {label!r}")

    @property
    def labels(self) -> list[str]:
        return list(self.entries.values())

    def to_payload(self) -> dict:
        return {"s": self.s, "entries": [{"label": lab, "v": bits} for bits, lab in self.entries.items()]}


@dataclass
class VoterRow:
    entry: int
    voter_id: str
    credential: VoterCredential


@dataclass
class VerifiedVoterTable:
    rows: list = field(default_factory=list)

    def ids(self) -> set:
        return {r.voter_id for r in self.rows}

    def by_remark(self, a: BitString) -> Optional[VoterRow]:
        for r in self.rows:
            if r.credential.a == a:
                return r
        return None


@dataclass
class KeyRow:
    k_left: BitString
    k_right: BitString
    remark: BitString
    round_no: int = 1
    accepted_round: Optional[int] = None
    ballot: Optional[BitString] = None

    @property
    def accepted(self) -> bool:
        return self.accepted_round is not None


class KeyCollision(Exception):
    pass


class KeyTable:
    """Charlie's key list, keyed by the left half of each anonymous key."""

    def __init__(self):
        self.rows: dict[BitString, KeyRow] = {}

    def add(self, key: BitString, s: int, remark: BitString, round_no: int = 1) -> KeyRow:
        left, right = key[:s], key[s:]
        if left in self.rows:
            raise KeyCollision(left)
        row = KeyRow(left, right, remark, round_no)
        self.rows[left] = row
        return row

    def __len__(self):
        return len(self.rows)

    def __contains__(self, left):
        return left in self.rows


@dataclass(frozen=True)
class BallotMessage:
    k_left: BitString
    ciphertext: BitString

    def to_payload(self) -> dict:
        return {"K_L": self.k_left, "ct": self.ciphertext}


@dataclass
class BallotTable:
    rows: list = field(default_factory=list)  # (v, K_L) pairs

    def __len__(self):
        return len(self.rows)

    def __contains__(self, pair) -> bool:
        return pair in self.rows

    def to_payload(self) -> list:
        return [{"v": v, "K_L": k} for v, k in self.rows]


@dataclass
class Voter:
    voter_id: str
    credential: VoterCredential
    choice: str
    key: Optional[BitString] = None
    sent: Optional[BallotMessage] = None
    casts: int = 0
    failed_rounds: int = 0
    status: str = "pending"  # pending | voted | flagged | denied


@dataclass
class RoundClose:
    verification_set: set
    failed_ids: list
    deleted: int


# -- phase operations ----------------------------------------------------------

def setup(candidates, s: int, N: int, rng: np.random.Generator, *, m: int,
          enforce_gate: bool = True) -> tuple[CandidateSet, list[VoterCredential]]:
    if not candidates:
        raise InvalidArgument("at least one candidate is required")
    if len(set(candidates)) != len(candidates):
        raise InvalidArgument("candidate labels must be distinct")
    if enforce_gate:
        if s < MIN_CANDIDATE_BITS:
            raise InvalidArgument(f"s={s} is below the minimum of {MIN_CANDIDATE_BITS} bits")
        if len(candidates) / 2.0 ** s > NEGLIGIBLE:
            raise InvalidArgument(f"{len(candidates)} candidates in 2^{s} strings is not negligible")
    elif len(candidates) > 2 ** s:
        raise InvalidArgument("more candidates than s-bit strings")
    entries: dict[BitString, str] = {}
    for label in candidates:
        while True:
            bits = random_bits(s, rng)
            if bits not in entries:
                break
        entries[bits] = label
    return CandidateSet(s, entries), issue_voter_credentials(N, m, rng)


def authenticate(request: tuple, table: VerifiedVoterTable, directory: dict,
                 voted: set | None = None) -> VoterRow:
    """Bob's check of ``(ID, k)``. Raises :class:`Rejected` with a reason tag."""
    voter_id, token = request
    cred = directory.get(voter_id)
    if cred is None:
        raise Rejected("unknown-id")
    if voted and voter_id in voted:
        raise Rejected("already-voted")
    if voter_id in table.ids():
        raise Rejected("repeat-application")
    if token != cred.k:
        raise Rejected("bad-token")
    row = VoterRow(entry=len(table.rows) + 1, voter_id=voter_id, credential=cred)
    table.rows.append(row)
    return row


def cast_ballot(voter: Voter, choice: str, candidate_set: CandidateSet) -> BallotMessage:
    v = candidate_set.encoding(choice)
    if voter.key is None:
        raise InvalidArgument(f"voter {voter.voter_id} holds no counter key")
    s = candidate_set.s
    msg = BallotMessage(voter.key[:s], otp_encrypt(voter.key[s:], v))
    voter.sent = msg
    voter.casts += 1
    return msg


def receive_ballot(msg: BallotMessage, key_table: KeyTable, candidate_set: CandidateSet, *,
                   phase: ElectionPhase | None = None, round_no: int = 1) -> Verdict:
    if phase is not None and phase != ElectionPhase.VOTING:
        return Verdict.WRONG_PHASE
    row = key_table.rows.get(msg.k_left)
    if row is None:
        return Verdict.UNKNOWN_KEY
    if row.accepted:
        return Verdict.REPLAY
    if len(msg.ciphertext) != len(row.k_right):
        return Verdict.INVALID_BALLOT
    v = otp_decrypt(row.k_right, msg.ciphertext)
    if v not in candidate_set:
        return Verdict.INVALID_BALLOT
    row.accepted_round = round_no
    row.ballot = v
    return Verdict.COUNTED


def close_round(key_table: KeyTable, voter_table: VerifiedVoterTable, round_no: int) -> RoundClose:
    """Delete never-accepted rows and publish the remarks accepted this round."""
    stale = [k for k, row in key_table.rows.items() if not row.accepted]
    for k in stale:
        del key_table.rows[k]
    vset = {row.remark for row in key_table.rows.values() if row.accepted_round == round_no}
    failed = [r.voter_id for r in voter_table.rows if r.credential.a not in vset]
    return RoundClose(verification_set=vset, failed_ids=failed, deleted=len(stale))


def publish_results(ballots: list, candidate_set: CandidateSet,
                    rng: np.random.Generator) -> tuple[dict, BallotTable]:
    """``ballots`` holds ``(K_L, v)`` pairs; returns per-label tally and shuffled Table 3."""
    tally = {label: 0 for label in candidate_set.labels}
    for _, v in ballots:
        tally[candidate_set.entries[v]] += 1
    order = rng.permutation(len(ballots))
    return tally, BallotTable([(ballots[i][1], ballots[i][0]) for i in order])


def verify_inclusion(voter: Voter, ballot_table: BallotTable, candidate_set: CandidateSet) -> str:
    if voter.sent is None or voter.key is None:
        return "missing"
    v = candidate_set.encoding(voter.choice)
    return "confirmed" if (v, voter.sent.k_left) in ballot_table else "missing"


# -- orchestration -----------------------------------------------------------------

@dataclass
class ElectionConfig:
    candidates: list = field(default_factory=lambda: ["A", "B", "C", "D"])
    s: int = 64
    m: int = 128
    N: int = 10
    loss_prob: float = 0.0
    flip_prob: float = 0.0
    ecc_r: int = 5
    tolerance: Optional[float] = None
    retry_cap: int = 3
    votes: Optional[list] = None
    enforce_gate: bool = True
    max_rounds: Optional[int] = None
    faults: dict = field(default_factory=dict)

    def effective_tolerance(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return 0.05 if self.flip_prob == 0 else self.flip_prob + 0.03

    def validate(self) -> None:
        if self.N < 0 or self.m < 1 or self.s < 1:
            raise InvalidArgument("N must be >= 0 and m, s >= 1")
        if self.retry_cap < 0:
            raise InvalidArgument("retry_cap must be >= 0")
        if self.votes is not None:
            if len(self.votes) != self.N:
                raise InvalidArgument("votes must list one choice per voter")
            unknown = set(self.votes) - set(self.candidates)
            if unknown:
                raise InvalidArgument(f"votes name unknown candidates {sorted(unknown)}")
        QuantumChannelConfig(self.loss_prob, self.flip_prob)
        EccConfig(self.ecc_r)


@dataclass
class ElectionResult:
    status: str
    reason: str
    rounds: int
    tally: dict
    cast: Counter
    ballot_table: BallotTable
    candidate_set: CandidateSet
    inclusion: dict
    flagged: dict
    verification_sets: list
    verdicts: Counter
    injected: int
    sessions: list
    voters: list
    dropped: Optional[BitString] = None

    @property
    def complete_and_correct(self) -> bool:
        return self.status == "completed" and +Counter(self.tally) == +self.cast


class _NullAdversary:
    kind = "none"

    def bind(self, election):
        pass

    def interceptor_for(self, serial, voter_id, attempt):
        return None

    def abstains(self, voter_id, round_no):
        return False

    def after_session(self, election, voter, outcome, attempt):
        return None

    def tamper_ballots(self, round_no, pool, rng):
        return pool

    def extra_ballots(self, election, round_no):
        return []

    def observe(self, record):
        pass

    def drain_actions(self):
        return []


class Election:
    def __init__(self, config: ElectionConfig, rng: np.random.Generator,
                 transcript: tx.Transcript | None = None, adversary=None):
        config.validate()
        self.cfg = config
        self.rng = rng
        self.transcript = transcript if transcript is not None else tx.Transcript()
        self.adv = adversary if adversary is not None else _NullAdversary()
        self.phase = ElectionPhase.SETUP
        self.m = config.m
        self.ecc = EccConfig(config.ecc_r)
        self.counter = AqkdCounter()
        self.key_table = KeyTable()
        self.directory: dict[str, VoterCredential] = {}
        self.voters: list[Voter] = []
        self.voted_ids: set[str] = set()
        self.round_no = 0
        self.serial = 0
        self.accepted: list = []
        self.verdicts: Counter = Counter()
        self.injected = 0
        self.sessions: list[dict] = []
        self.verification_sets: list[list] = []
        self.flagged: dict[str, str] = {}
        self._taken: set = set()
        self.candidate_set: Optional[CandidateSet] = None

    # transcript helper: every record carries the round number
    def _log(self, step, channel, payload=None, **kw):
        rec = self.transcript.record(step, channel, payload, round=self.round_no, **kw)
        self.adv.observe(rec)
        return rec

    def _flush_adversary(self):
        for action in self.adv.drain_actions():
            self._log("adversary." + action.pop("action"), tx.LOCAL, action, sender="adversary")

    def _fresh_credential(self, voter: Voter) -> VoterCredential:
        cred = issue_voter_credentials(1, self.m, self.rng, self._taken)[0]
        voter.credential = cred
        self.directory[voter.voter_id] = cred
        return cred

    # -- initial phase
    def setup(self) -> None:
        cfg = self.cfg
        self.candidate_set, creds = setup(cfg.candidates, cfg.s, cfg.N, self.rng, m=self.m,
                                          enforce_gate=cfg.enforce_gate)
        for cred in creds:
            self._taken.update(cred.components())
        width = max(2, len(str(cfg.N)))
        for j, cred in enumerate(creds):
            choice = cfg.votes[j] if cfg.votes is not None else str(self.rng.choice(cfg.candidates))
            voter = Voter(f"V{j + 1:0{width}d}", cred, choice)
            self.voters.append(voter)
            self.directory[voter.voter_id] = cred
        self.adv.bind(self)
        self._log("setup.candidates", tx.PUBLIC, self.candidate_set.to_payload(), sender="bob")
        for voter in self.voters:
            self._log("setup.credential", tx.AUTHENTICATED, {"id": voter.voter_id, "m": self.m},
                      sender="bob", recipient="voter")

    def pending(self) -> list[Voter]:
        return [v for v in self.voters if v.status == "pending"]

    # -- one round of authentication, key distribution and voting
    def run_round(self) -> RoundClose:
        self.round_no += 1
        rnd = self.round_no
        self.phase = ElectionPhase.AUTHENTICATION
        table = VerifiedVoterTable()
        for voter in self.pending():
            self._log("auth.request", tx.AUTHENTICATED, {"id": voter.voter_id, "k": voter.credential.k},
                      sender="voter", recipient="bob")
            try:
                authenticate((voter.voter_id, voter.credential.k), table, self.directory, self.voted_ids)
                self._log("auth.reply", tx.AUTHENTICATED, {"id": voter.voter_id, "accepted": True},
                          sender="bob", recipient="voter")
            except Rejected as exc:
                self._log("auth.reply", tx.AUTHENTICATED,
                          {"id": voter.voter_id, "accepted": False, "reason": exc.reason},
                          sender="bob", recipient="voter")
        self._log("auth.verified", tx.PUBLIC, {"n": len(table.rows), "ids": sorted(table.ids())}, sender="bob")

        self.phase = ElectionPhase.KEY_DISTRIBUTION
        by_id = {v.voter_id: v for v in self.voters}
        for row in table.rows:
            self._distribute(row, by_id[row.voter_id])
        self._log("keydist.complete", tx.PUBLIC, {"rows": len(self.key_table)}, sender="charlie")

        self.phase = ElectionPhase.VOTING
        pool = []
        for row in table.rows:
            voter = by_id[row.voter_id]
            if voter.key is None:
                continue
            if self.adv.abstains(voter.voter_id, rnd):
                continue
            pool.append(cast_ballot(voter, voter.choice, self.candidate_set))
        honest = len(pool)
        pool = pool + list(self.adv.extra_ballots(self, rnd))
        pool = self.adv.tamper_ballots(rnd, pool, self.rng)
        self._flush_adversary()
        self.injected += len(pool)
        for i in self.rng.permutation(len(pool)):
            self._deliver(pool[i])
        self._log("voting.pool", tx.LOCAL, {"honest": honest, "delivered": len(pool)}, sender="simulator")

        close = close_round(self.key_table, table, rnd)
        remarks = sorted(close.verification_set, key=lambda b: b.to_hex())
        self.verification_sets.append(remarks)
        self._log("voting.verification-set", tx.PUBLIC, {"a": remarks, "deleted": close.deleted},
                  sender="charlie")
        for row in table.rows:
            if row.voter_id not in close.failed_ids:
                self.voted_ids.add(row.voter_id)
                by_id[row.voter_id].status = "voted"
        for voter in self.pending():
            voter.failed_rounds += 1
            voter.key = None
            if voter.failed_rounds > self.cfg.retry_cap:
                voter.status = "flagged"
                self.flagged[voter.voter_id] = "disruptive"
                self._log("round.flagged", tx.PUBLIC, {"id": voter.voter_id,
                                                       "failed_rounds": voter.failed_rounds}, sender="bob")
            else:
                self._fresh_credential(voter)
                self._log("round.recredential", tx.AUTHENTICATED, {"id": voter.voter_id, "m": self.m},
                          sender="bob", recipient="voter")
        return close

    def receive_ballot(self, msg: BallotMessage) -> Verdict:
        verdict = receive_ballot(msg, self.key_table, self.candidate_set, phase=self.phase,
                                 round_no=self.round_no)
        self.verdicts[verdict.value] += 1
        if verdict is Verdict.COUNTED:
            row = self.key_table.rows[msg.k_left]
            self.accepted.append((row.k_left, row.ballot))
        return verdict

    def _deliver(self, msg: BallotMessage) -> Verdict:
        self._log("voting.ballot", tx.ANON_CLASSICAL, msg.to_payload(), recipient="charlie")
        verdict = self.receive_ballot(msg)
        self._log("voting.verdict", tx.LOCAL, {"K_L": msg.k_left, "verdict": verdict.value}, sender="charlie")
        return verdict

    def _distribute(self, row: VoterRow, voter: Voter) -> bool:
        """Run key distribution for one verified voter, retrying on failure."""
        failures = 0
        collisions = 0
        attempt = 0
        while failures <= self.cfg.retry_cap and collisions <= 16:
            attempt += 1
            if len(voter.credential.k) != self.m:
                self._fresh_credential(voter)
                row.credential = voter.credential
                self._log("keydist.resize", tx.AUTHENTICATED, {"id": voter.voter_id, "m": self.m},
                          sender="bob", recipient="voter")
            cred = voter.credential
            user = AqkdUserState(cred.as_aqkd(), phase=UserPhase.SENT_REQUEST)
            auth = seal_bundle(cred.a, cred.b, cred.c, self.rng)
            channel = QuantumChannelConfig(self.cfg.loss_prob, self.cfg.flip_prob,
                                           self.adv.interceptor_for(self.serial, voter.voter_id, attempt))
            params = SessionParams(m=self.m, target_len=2 * self.cfg.s, ecc=self.ecc,
                                   tolerance=self.cfg.effective_tolerance(), channel=channel)
            serial = self.serial
            self.serial += 1
            outcome = run_session(user, auth, self.counter, params, self.rng, self.transcript,
                                  user_role="voter", entry=row.entry, serial=serial)
            stat = {"serial": serial, "status": outcome.status, "reason": outcome.reason,
                    "check_rate": user.check.rate if user.check else None,
                    "sift": len(user.g) if user.g is not None else None,
                    "keys_agree": outcome.keys_agree}
            self.sessions.append(stat)
            hijack = self.adv.after_session(self, voter, outcome, attempt)
            self._flush_adversary()
            if outcome.ok:
                try:
                    self.key_table.add(outcome.charlie_key, self.cfg.s, cred.a, self.round_no)
                except KeyCollision:
                    collisions += 1
                    stat["status"], stat["reason"] = "retry", "key-collision"
                    self._log("keydist.retry", tx.PUBLIC, {"serial": serial, "reason": "key-collision"},
                              sender="charlie")
                    self._fresh_credential(voter)
                    row.credential = voter.credential
                    continue
                voter.key = outcome.user_key
                return True
            if hijack:
                # a malicious administrator keeps the victim's slot for itself
                return False
            failures += 1
            if outcome.reason == "insufficient-sift":
                self.m *= 2
                self._log("keydist.grow", tx.PUBLIC, {"m": self.m}, sender="bob")
            self._fresh_credential(voter)
            row.credential = voter.credential
            self._log("keydist.recredential", tx.AUTHENTICATED, {"id": voter.voter_id, "m": self.m},
                      sender="bob", recipient="voter")
        return False

    # -- final publication
    def publish(self) -> tuple[dict, BallotTable, Optional[BitString]]:
        ballots = list(self.accepted)
        dropped = None
        if self.cfg.faults.get("drop_ballot") and ballots:
            # fault injection: a malicious counter silently discards one accepted ballot
            dropped = ballots.pop(int(self.rng.integers(len(ballots))))[0]
        tally, table = publish_results(ballots, self.candidate_set, self.rng)
        self.phase = ElectionPhase.PUBLISHED
        self._log("publish.table3", tx.PUBLIC, {"rows": table.to_payload()}, sender="charlie")
        self._log("publish.tally", tx.PUBLIC, {"tally": tally}, sender="charlie")
        return tally, table, dropped

    def run(self) -> ElectionResult:
        self.setup()
        cap = self.cfg.max_rounds or (self.cfg.retry_cap + 2)
        while self.pending() and self.round_no < cap:
            self.run_round()
        status, reason = "completed", ""
        if self.pending():
            status, reason = "aborted", "round-limit"
            self._log("election.abort", tx.PUBLIC, {"reason": reason}, sender="bob")
        tally, table, dropped = self.publish()
        inclusion = {}
        for voter in self.voters:
            if voter.status == "flagged":
                continue
            inclusion[voter.voter_id] = verify_inclusion(voter, table, self.candidate_set)
            if inclusion[voter.voter_id] == "missing":
                self._log("verify.irregularity", tx.PUBLIC, {"id": voter.voter_id, "issue": "missing-inclusion"},
                          sender="voter")
        cast = Counter(v.choice for v in self.voters if v.casts > 0)
        return ElectionResult(status=status, reason=reason, rounds=self.round_no, tally=tally, cast=cast,
                              ballot_table=table, candidate_set=self.candidate_set, inclusion=inclusion,
                              flagged=dict(self.flagged), verification_sets=self.verification_sets,
                              verdicts=self.verdicts, injected=self.injected, sessions=self.sessions,
                              voters=self.voters, dropped=dropped)
