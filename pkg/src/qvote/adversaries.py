"""Attacker strategies, usable as quantum-channel interceptors or misbehaving parties.

Each adversary class plugs into :class:`qvote.election.Election` through a
small set of hooks (see ``Adversary``). The standalone functions run a single
attack outside an election and report what happened.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import transcript as tx
from .aqkd import (AqkdCounter, BasisConfirmation, CheckAnnouncement, _announced_bases,
                   _complement, charlie_accept_confirmation, charlie_measure_and_announce,
                   charlie_open_session, charlie_reconcile, seal_bundle, sigma_from_f)
from .bits import BitString, random_bits
from .crypto import AqkdCredential, EccConfig, ecc_encode, otp_encrypt
from .election import BallotMessage, CandidateSet, KeyTable, Verdict, receive_ballot
from .errors import InvalidArgument, Rejected
from .qubits import QuantumChannelConfig, QubitRegister, encode, measure, merge, split, transmit


class AdversaryKind(str, enum.Enum):
    INTERCEPT_RESEND = "intercept-resend"
    IMPERSONATE_VOTER = "impersonate-voter"
    REPLAY_BALLOT = "replay-ballot"
    FORGE_RANDOM_BALLOT = "forge-random-ballot"
    DISHONEST_ABSTAIN = "dishonest-abstain"
    EAVESDROP_CLASSICAL = "eavesdrop-classical"


class Adversary:
    """No-op hooks; subclasses override the ones they need."""

    kind: Optional[AdversaryKind] = None

    def __init__(self):
        self._actions: list[dict] = []

    def _act(self, action: str, **info) -> None:
        self._actions.append({"action": action, **info})

    def drain_actions(self) -> list[dict]:
        out, self._actions = self._actions, []
        return out

    def bind(self, election) -> None:
        pass

    def interceptor_for(self, serial, voter_id, attempt):
        return None

    def abstains(self, voter_id, round_no) -> bool:
        return False

    def after_session(self, election, voter, outcome, attempt) -> bool:
        return False

    def extra_ballots(self, election, round_no) -> list:
        return []

    def tamper_ballots(self, round_no, pool, rng):
        return pool

    def observe(self, record) -> None:
        pass


# -- intercept-resend ------------------------------------------------------------

@dataclass
class InterceptNotes:
    """What Eve learned from one register, aligned with the delivered positions."""

    attacked: np.ndarray
    bases: np.ndarray
    outcomes: np.ndarray


def intercept_resend(qubits: QubitRegister, fraction: float,
                     rng: np.random.Generator) -> tuple[QubitRegister, InterceptNotes]:
    """Measure a random ``fraction`` of the qubits in random bases and re-prepare them.

    Untouched qubits pass through unchanged. Eve's re-preparation uses her own
    basis and outcome.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument("fraction must lie in [0, 1]")
    n = len(qubits)
    attacked = rng.random(n) < fraction if fraction < 1.0 else np.ones(n, dtype=bool)
    bases = random_bits(n, rng).array
    if not attacked.any():
        return qubits, InterceptNotes(attacked, np.zeros(0, np.uint8), np.zeros(0, np.uint8))
    if attacked.all():
        outcomes = measure(qubits, bases, rng).array
        return encode(BitString._wrap(bases), BitString._wrap(outcomes)), InterceptNotes(attacked, bases, outcomes)
    # qubits Eve leaves alone are forwarded untouched
    target, passthrough = split(qubits, attacked)
    outcomes = np.zeros(n, np.uint8)
    outcomes[attacked] = measure(target, bases[attacked], rng).array
    fresh = encode(BitString._wrap(bases[attacked]), BitString._wrap(outcomes[attacked]))
    notes = InterceptNotes(attacked, np.where(attacked, bases, 0).astype(np.uint8), outcomes)
    return merge(fresh, passthrough, attacked), notes


def guess_sifted_bits(notes: InterceptNotes, positions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Eve's best guess of key bits at ``positions`` (indices into the delivered register)."""
    guess = rng.integers(0, 2, size=len(positions), dtype=np.uint8)
    if notes.outcomes.size:
        hit = notes.attacked[positions]
        guess[hit] = notes.outcomes[positions][hit]
    return guess


class InterceptResend(Adversary):
    kind = AdversaryKind.INTERCEPT_RESEND

    def __init__(self, fraction: float = 1.0, sessions: Optional[int] = None, rng=None):
        super().__init__()
        self.fraction = fraction
        self.sessions = sessions  # attack only the first N sessions; None means all
        self.notes: list[InterceptNotes] = []
        self.attacked_sessions = 0

    def channel_hook(self):
        def hook(reg: QubitRegister, rng: np.random.Generator) -> QubitRegister:
            out, notes = intercept_resend(reg, self.fraction, rng)
            self.notes.append(notes)
            return out
        return hook

    def interceptor_for(self, serial, voter_id, attempt):
        if self.sessions is not None and self.attacked_sessions >= self.sessions:
            return None
        self.attacked_sessions += 1
        self._act("intercept", serial=serial, fraction=self.fraction)
        return self.channel_hook()


# -- impersonation -----------------------------------------------------------------

KNOWLEDGE_FIELDS = ("a", "b", "c")


class Impersonator:
    """Substitutes the victim's qubits with its own and answers the announcement."""

    def __init__(self, knowledge=(), victim: AqkdCredential | None = None):
        knowledge = set(knowledge)
        if knowledge - set(KNOWLEDGE_FIELDS):
            raise InvalidArgument(f"knowledge must be a subset of {KNOWLEDGE_FIELDS}")
        self.knowledge = knowledge
        self.victim = victim
        self.r1 = self.r2 = None
        self.final_key = None

    def interceptor(self, reg: QubitRegister, rng: np.random.Generator) -> QubitRegister:
        n = len(reg)
        self.r1, self.r2 = random_bits(n, rng), random_bits(n, rng)
        # the victim's qubits are discarded: measure them away
        measure(reg, self.r1, rng)
        return encode(self.r1, self.r2)

    def confirm(self, ann: CheckAnnouncement, m: int, delivered: np.ndarray, rng: np.random.Generator,
                ecc: EccConfig | None = None, target_len: int = 0) -> BasisConfirmation:
        v = self.victim
        x = v.x if "a" in self.knowledge else random_bits(3 * m, rng)
        y = v.y if "b" in self.knowledge else random_bits(3 * m, rng)
        z = v.z if "c" in self.knowledge else random_bits(5 * m, rng)
        # own qubits sit at the delivered positions in order
        r1_full = np.full(3 * m, 254, dtype=np.uint8)
        r2_full = np.zeros(3 * m, dtype=np.uint8)
        r1_full[delivered] = self.r1.array
        r2_full[delivered] = self.r2.array
        rest = _complement(sigma_from_f(ann.f), 3 * m)
        r3 = (_announced_bases(ann)[rest] == r1_full[rest]).astype(np.uint8)
        sealed = otp_encrypt(z, y + BitString._wrap(r3))
        z_block = None
        if ecc is not None and target_len:
            g = r2_full[rest[r3 == 1]]
            need = ecc.r * target_len
            if len(g) >= need:
                self.final_key = random_bits(target_len, rng)
                z_block = BitString._wrap(g[:need]) ^ ecc_encode(self.final_key, ecc)
        return BasisConfirmation(x_token=x, sealed=sealed, z_block=z_block)


@dataclass
class ImpersonationResult:
    accepted: bool
    reason: str = ""


def impersonate_voter(knowledge, m: int, rng: np.random.Generator,
                      victim: AqkdCredential | None = None) -> ImpersonationResult:
    """One forged session attempt against the counter's session for ``victim``."""
    victim = victim or AqkdCredential.generate(m, rng)
    auth = seal_bundle(victim.x, victim.y, victim.z, rng)
    session = charlie_open_session(auth.X, auth.link)
    attacker = Impersonator(knowledge, victim)
    own = random_bits(3 * m, rng)
    reg = encode(own, own)
    report = transmit(reg, QuantumChannelConfig(interceptor=attacker.interceptor), rng)
    ann = charlie_measure_and_announce(session, report, m, rng)
    conf = attacker.confirm(ann, m, report.delivered_indices, rng)
    try:
        charlie_accept_confirmation(session, conf)
    except Rejected as exc:
        return ImpersonationResult(False, exc.reason)
    return ImpersonationResult(True)


class ImpersonateVoter(Adversary):
    """Replaces one victim's qubits during key distribution and tries to claim the session.

    With full knowledge of ``(a, b, c)`` this is the malicious-administrator
    fault: the forged session succeeds, the administrator withholds the
    victim's retry and votes with the stolen key.
    """

    kind = AdversaryKind.IMPERSONATE_VOTER

    def __init__(self, knowledge=(), victim_index: int = 0, choice: Optional[str] = None):
        super().__init__()
        self.knowledge = tuple(knowledge)
        self.victim_index = victim_index
        self.choice = choice
        self.attempts: list[ImpersonationResult] = []
        self.stolen: list[BitString] = []
        self._current: Optional[Impersonator] = None
        self._victim_id = None
        self._done = False

    def bind(self, election) -> None:
        self._victim_id = election.voters[self.victim_index].voter_id

    def interceptor_for(self, serial, voter_id, attempt):
        if self._done or voter_id != self._victim_id:
            return None
        self._current = Impersonator(self.knowledge)
        self._act("substitute-qubits", serial=serial)
        return self._current.interceptor

    def after_session(self, election, voter, outcome, attempt) -> bool:
        if self._current is None or voter.voter_id != self._victim_id:
            return False
        imp, self._current = self._current, None
        self._done = True
        ann = outcome.announcement
        if ann is None or outcome.charlie is None:
            return False
        imp.victim = voter.credential.as_aqkd()
        conf = imp.confirm(ann, election.m, ann.delivered_indices, election.rng,
                           election.ecc, 2 * election.cfg.s)
        election._log("aqkd.confirm", tx.ANON_CLASSICAL, conf.to_payload(), recipient="charlie")
        try:
            session = election.counter.lookup(conf.x_token)
            charlie_accept_confirmation(session, conf)
            if conf.z_block is None:
                raise Rejected("short-sift")
            key = charlie_reconcile(session, conf.z_block, election.ecc)
        except Rejected as exc:
            self.attempts.append(ImpersonationResult(False, exc.reason))
            self._act("impersonation-rejected", reason=exc.reason)
            return False
        self.attempts.append(ImpersonationResult(True))
        self._act("impersonation-accepted")
        election.key_table.add(key, election.cfg.s, voter.credential.a, election.round_no)
        if imp.final_key == key:
            self.stolen.append(key)
        return set(self.knowledge) == set(KNOWLEDGE_FIELDS)

    def extra_ballots(self, election, round_no) -> list:
        out = []
        s = election.cfg.s
        for key in self.stolen:
            label = self.choice or election.candidate_set.labels[0]
            v = election.candidate_set.encoding(label)
            out.append(BallotMessage(key[:s], otp_encrypt(key[s:], v)))
            self._act("cast-stolen", round=round_no)
        self.stolen = []
        return out


# -- ballot replay -------------------------------------------------------------------

class ReplayBallot(Adversary):
    """Duplicates observed ballots within a round and holds some back for a later round."""

    kind = AdversaryKind.REPLAY_BALLOT

    def __init__(self, duplicate: bool = True, delay: int = 1, delay_rounds=(1,),
                 resend_old: bool = False):
        super().__init__()
        self.duplicate = duplicate
        self.delay = delay
        self.delay_rounds = set(delay_rounds)
        self.resend_old = resend_old
        self.held: list[BallotMessage] = []
        self.seen: list[BallotMessage] = []
        self.delayed_out: list[BallotMessage] = []
        self.duplicated: list[BallotMessage] = []

    def tamper_ballots(self, round_no, pool, rng):
        released, self.held = self.held, []
        self.delayed_out.extend(released)
        old = list(self.seen) if self.resend_old else []
        pool = list(pool)
        if self.delay and pool and round_no in self.delay_rounds:
            k = min(self.delay, len(pool))
            pick = set(rng.choice(len(pool), size=k, replace=False).tolist())
            self.held = [pool[i] for i in sorted(pick)]
            pool = [msg for i, msg in enumerate(pool) if i not in pick]
            self._act("hold", count=k)
        dups = list(pool) if self.duplicate else []
        self.duplicated.extend(dups)
        self.seen.extend(pool)
        self.seen.extend(self.held)
        if dups:
            self._act("duplicate", count=len(dups))
        if released:
            self._act("release-delayed", count=len(released))
        if old:
            self._act("resend-old", count=len(old))
        return pool + dups + released + old


def replay_ballot(observed: list, rng: np.random.Generator, copies: int = 1) -> list:
    """Re-inject ``copies`` duplicates of every observed message in shuffled order."""
    out = [msg for msg in observed for _ in range(copies)]
    return [out[i] for i in rng.permutation(len(out))]


# -- random forgery ---------------------------------------------------------------------

def forge_random_ballot(attempts: int, s: int, rng: np.random.Generator,
                        k_left: BitString | None = None) -> list[BallotMessage]:
    """Forged ballots with random ciphertexts; random left keys unless ``k_left`` is fixed."""
    out = []
    for _ in range(attempts):
        left = k_left if k_left is not None else random_bits(s, rng)
        out.append(BallotMessage(left, random_bits(s, rng)))
    return out


def forgery_trial(attempts: int, key_table: KeyTable, candidate_set: CandidateSet,
                  rng: np.random.Generator) -> dict:
    """Submit random forgeries against a key table and count verdicts."""
    counts: dict[str, int] = {}
    for msg in forge_random_ballot(attempts, candidate_set.s, rng):
        verdict = receive_ballot(msg, key_table, candidate_set)
        counts[verdict.value] = counts.get(verdict.value, 0) + 1
    return counts


class ForgeRandomBallot(Adversary):
    kind = AdversaryKind.FORGE_RANDOM_BALLOT

    def __init__(self, attempts: int = 100, rounds=(1,)):
        super().__init__()
        self.attempts = attempts
        self.rounds = set(rounds)
        self.forged: list[BallotMessage] = []

    def extra_ballots(self, election, round_no) -> list:
        if round_no not in self.rounds or self.attempts <= 0:
            return []
        msgs = forge_random_ballot(self.attempts, election.cfg.s, election.rng)
        self.forged.extend(msgs)
        self._act("inject-forged", count=len(msgs))
        return msgs


# -- disruptive voter ------------------------------------------------------------------

class DishonestAbstain(Adversary):
    """A verified voter who completes key distribution but withholds the ballot."""

    kind = AdversaryKind.DISHONEST_ABSTAIN

    def __init__(self, voter_index: int = 0, rounds_to_waste: int = 1):
        super().__init__()
        self.voter_index = voter_index
        self.rounds_to_waste = rounds_to_waste
        self._voter_id = None
        self.wasted = 0

    def bind(self, election) -> None:
        self._voter_id = election.voters[self.voter_index].voter_id

    def abstains(self, voter_id, round_no) -> bool:
        if voter_id != self._voter_id or self.wasted >= self.rounds_to_waste:
            return False
        self.wasted += 1
        self._act("abstain", round=round_no)
        return True


def dishonest_abstain(voter_index: int, rounds_to_waste: int) -> DishonestAbstain:
    return DishonestAbstain(voter_index, rounds_to_waste)


# -- passive classical eavesdropper --------------------------------------------------------

class EavesdropClassical(Adversary):
    """Reads anonymous and public traffic; authenticated channels stay confidential."""

    kind = AdversaryKind.EAVESDROP_CLASSICAL

    def __init__(self):
        super().__init__()
        self.observed: list[dict] = []

    def observe(self, record) -> None:
        if record["channel"] in (tx.ANON_CLASSICAL, tx.ANON_QUANTUM, tx.PUBLIC):
            self.observed.append(record)


def build(kind, params: dict | None = None) -> Adversary:
    """Construct an adversary from a scenario's ``{kind, params}`` entry."""
    params = dict(params or {})
    kind = AdversaryKind(kind)
    if kind is AdversaryKind.INTERCEPT_RESEND:
        return InterceptResend(**params)
    if kind is AdversaryKind.IMPERSONATE_VOTER:
        return ImpersonateVoter(**params)
    if kind is AdversaryKind.REPLAY_BALLOT:
        return ReplayBallot(**params)
    if kind is AdversaryKind.FORGE_RANDOM_BALLOT:
        return ForgeRandomBallot(**params)
    if kind is AdversaryKind.DISHONEST_ABSTAIN:
        return DishonestAbstain(**params)
    return EavesdropClassical(**params)
