"""Authority-certified anonymous key distribution between a user and the counter.

Three roles take part: the anonymous user, the administrator (who certifies
the user's pre-shared credential and forwards it to the counter), and the
counter (who measures the user's qubits and ends up sharing a key with an
anonymous party). Each role's state is a plain dataclass; the protocol steps
are functions over that state, in the order the roles execute them.

Internally positions are 0-based; position 0 is the first transmitted qubit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import transcript as tx
from .bits import BitString, random_bits
from .crypto import (AqkdCredential, CredentialRegistry, EccConfig, PadRegistry,
                     ecc_decode, ecc_encode, otp_decrypt, otp_encrypt)
from .errors import InvalidArgument, ProtocolViolation, Rejected, SessionAborted
from .qubits import QuantumChannelConfig, TransmissionReport, encode, measure, transmit

_NO_BASIS = 255


class UserPhase(enum.IntEnum):
    INIT = 0
    SENT_REQUEST = 1
    SENT_QUBITS = 2
    VERIFIED = 3
    CONFIRMED = 4
    RECONCILED = 5
    ABORTED = 99


@dataclass
class CheckResult:
    decisive: int
    errors: int
    rate: float
    accepted: bool


@dataclass
class AqkdUserState:
    credential: AqkdCredential
    phase: UserPhase = UserPhase.INIT
    r1: Optional[BitString] = None
    r2: Optional[BitString] = None
    r3: Optional[BitString] = None
    sealed: Optional[BitString] = None
    g: Optional[BitString] = None
    final_key: Optional[BitString] = None
    check: Optional[CheckResult] = None

    @property
    def m(self) -> int:
        return self.credential.m

    def _require(self, phase: UserPhase) -> None:
        if self.phase != phase:
            raise ProtocolViolation(f"user is in phase {self.phase.name}, expected {phase.name}")

    def _abort(self, reason: str, **info):
        self.phase = UserPhase.ABORTED
        raise SessionAborted(reason, **info)


@dataclass(frozen=True)
class LinkKeys:
    """Fresh administrator/counter keys: ``k_c`` (m bits) and the pad ``k_bc``."""

    k_c: BitString
    k_bc: BitString


@dataclass(frozen=True)
class Authorization:
    X: BitString
    link: LinkKeys


@dataclass
class CheckAnnouncement:
    length: int  # 3m
    delivered_indices: np.ndarray
    bases: BitString
    sigma: np.ndarray
    f: BitString
    F: BitString

    def to_payload(self) -> dict:
        mask = np.zeros(self.length, dtype=np.uint8)
        mask[self.delivered_indices] = 1
        return {"length": self.length, "delivered": BitString._wrap(mask),
                "bases": self.bases, "f": self.f, "F": self.F}


@dataclass(frozen=True)
class BasisConfirmation:
    x_token: BitString
    sealed: BitString
    z_block: Optional[BitString] = None

    def to_payload(self) -> dict:
        out = {"x": self.x_token, "Y": self.sealed}
        if self.z_block is not None:
            out["Z"] = self.z_block
        return out


@dataclass
class CharlieSession:
    m: int
    k_c: BitString
    x: BitString
    y: BitString
    z: BitString
    accepted_x: set = field(default_factory=set)
    delivered: Optional[np.ndarray] = None
    bases: Optional[BitString] = None
    measured: Optional[BitString] = None
    sigma: Optional[np.ndarray] = None
    sifted: Optional[BitString] = None
    final_key: Optional[BitString] = None


# -- certification by the administrator ------------------------------------

def user_request(state: AqkdUserState) -> BitString:
    state._require(UserPhase.INIT)
    state.phase = UserPhase.SENT_REQUEST
    return state.credential.p


def seal_bundle(x: BitString, y: BitString, z: BitString, rng: np.random.Generator,
                pads: PadRegistry | None = None) -> Authorization:
    """Administrator side: fresh ``(k_c, k_bc)`` and ``X = E_kbc[k_c || x || y || z]``."""
    m = len(x) // 3
    bundle = x + y + z
    k_c = random_bits(m, rng)
    k_bc = random_bits(m + len(bundle), rng)
    X = otp_encrypt(k_bc, k_c + bundle, pads)
    return Authorization(X=X, link=LinkKeys(k_c=k_c, k_bc=k_bc))


def bob_authorize(p_received: BitString, registry: CredentialRegistry, rng: np.random.Generator,
                  pads: PadRegistry | None = None) -> Authorization:
    cred = registry.issued.get(p_received)
    if cred is None:
        raise Rejected("unknown-token")
    if p_received in registry.consumed:
        raise Rejected("token-replay")
    registry.consumed.add(p_received)
    return seal_bundle(cred.x, cred.y, cred.z, rng, pads)


def charlie_open_session(X: BitString, link: LinkKeys, accepted_x: set | None = None) -> CharlieSession:
    """Decrypt the forwarded bundle and check the embedded ``k_c``."""
    if len(X) != len(link.k_bc):
        raise Rejected("malformed-forward")
    plain = otp_decrypt(link.k_bc, X)
    m = len(link.k_c)
    if plain[:m] != link.k_c:
        raise Rejected("kc-mismatch")
    bundle = plain[m:]
    if len(bundle) != 11 * m:
        raise Rejected("malformed-forward")
    return CharlieSession(m=m, k_c=link.k_c, x=bundle[:3 * m], y=bundle[3 * m:6 * m],
                          z=bundle[6 * m:], accepted_x=accepted_x if accepted_x is not None else set())


# -- quantum transmission and check -----------------------------------------

def user_send_qubits(state: AqkdUserState, channel_cfg: QuantumChannelConfig,
                     rng: np.random.Generator) -> TransmissionReport:
    state._require(UserPhase.SENT_REQUEST)
    n = 3 * state.m
    state.r1 = random_bits(n, rng)
    state.r2 = random_bits(n, rng)
    report = transmit(encode(state.r1, state.r2), channel_cfg, rng)
    state.phase = UserPhase.SENT_QUBITS
    return report


def charlie_measure_and_announce(session: CharlieSession, report: TransmissionReport, m: int,
                                 rng: np.random.Generator) -> CheckAnnouncement:
    delivered = np.asarray(report.delivered_indices, dtype=np.int64)
    bases = random_bits(len(delivered), rng)
    outcomes = measure(report.qubits, bases, rng) if len(delivered) else BitString()
    session.delivered, session.bases, session.measured = delivered, bases, outcomes
    if len(delivered) < m:
        raise SessionAborted("insufficient-delivery", delivered=len(delivered))
    sigma = np.sort(rng.choice(delivered, size=m, replace=False))
    session.sigma = sigma
    f = np.ones(3 * m, dtype=np.uint8)
    f[sigma] = 0
    F = outcomes.array[np.searchsorted(delivered, sigma)]
    return CheckAnnouncement(length=3 * m, delivered_indices=delivered, bases=bases, sigma=sigma,
                             f=BitString._wrap(f), F=BitString._wrap(F))


def sigma_from_f(f: BitString) -> np.ndarray:
    return np.flatnonzero(f.array == 0)


def _announced_bases(ann: CheckAnnouncement) -> np.ndarray:
    full = np.full(ann.length, _NO_BASIS, dtype=np.uint8)
    full[ann.delivered_indices] = ann.bases.array
    return full


def user_verify_announcement(state: AqkdUserState, ann: CheckAnnouncement, tolerance: float) -> CheckResult:
    """Compare the published check bits against our own values.

    Only check positions measured in the preparation basis are decisive; the
    session is accepted iff their error rate is at most ``tolerance``.
    """
    state._require(UserPhase.SENT_QUBITS)
    if ann.length != 3 * state.m:
        state._abort("malformed-announcement")
    sigma = sigma_from_f(ann.f)
    if len(sigma) != len(ann.F):
        state._abort("malformed-announcement")
    decisive = _announced_bases(ann)[sigma] == state.r1.array[sigma]
    c = int(decisive.sum())
    if c == 0:
        state._abort("undecidable")
    errors = int((ann.F.array[decisive] != state.r2.array[sigma][decisive]).sum())
    rate = errors / c
    result = CheckResult(decisive=c, errors=errors, rate=rate, accepted=rate <= tolerance)
    state.check = result
    state.phase = UserPhase.VERIFIED if result.accepted else UserPhase.ABORTED
    return result


def _complement(sigma: np.ndarray, n: int) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[sigma] = False
    return np.flatnonzero(mask)


def user_confirm(state: AqkdUserState, ann: CheckAnnouncement) -> BasisConfirmation:
    state._require(UserPhase.VERIFIED)
    m = state.m
    rest = _complement(sigma_from_f(ann.f), 3 * m)
    if len(rest) != 2 * m:
        state._abort("malformed-announcement")
    # undelivered positions carry no announced basis and are flagged 0
    r3 = (_announced_bases(ann)[rest] == state.r1.array[rest]).astype(np.uint8)
    state.r3 = BitString._wrap(r3)
    state.sealed = otp_encrypt(state.credential.z, state.credential.y + state.r3)
    state.g = BitString._wrap(state.r2.array[rest[r3 == 1]])
    state.phase = UserPhase.CONFIRMED
    return BasisConfirmation(x_token=state.credential.x, sealed=state.sealed)


def user_reconcile(state: AqkdUserState, target_len: int, ecc: EccConfig,
                   rng: np.random.Generator) -> BasisConfirmation:
    """Pick the final key, mask its codeword with the sifted key, and emit ``(x, Y, Z)``."""
    state._require(UserPhase.CONFIRMED)
    if target_len <= 0:
        raise InvalidArgument("target key length must be positive")
    need = ecc.r * target_len
    if len(state.g) < need:
        state._abort("insufficient-sift", sifted=len(state.g), needed=need)
    key = random_bits(target_len, rng)
    codeword = ecc_encode(key, ecc)
    z_block = state.g[:need] ^ codeword
    state.final_key = key
    state.phase = UserPhase.RECONCILED
    return BasisConfirmation(x_token=state.credential.x, sealed=state.sealed, z_block=z_block)


# -- confirmation and reconciliation on the counter side --------------------

def charlie_accept_confirmation(session: CharlieSession, conf: BasisConfirmation) -> BitString:
    if conf.x_token in session.accepted_x:
        raise Rejected("x-replay")
    if conf.x_token != session.x:
        raise Rejected("unknown-x")
    if session.sigma is None:
        raise Rejected("no-announcement")
    m = session.m
    if len(conf.sealed) != len(session.z):
        raise Rejected("malformed-confirmation")
    plain = otp_decrypt(session.z, conf.sealed)
    if plain[:3 * m] != session.y:
        raise Rejected("y-mismatch")
    r3 = plain[3 * m:].array
    rest = _complement(session.sigma, 3 * m)
    flagged = rest[r3 == 1]
    slot = np.full(3 * m, -1, dtype=np.int64)
    slot[session.delivered] = np.arange(len(session.delivered))
    hits = slot[flagged]
    session.sifted = BitString._wrap(session.measured.array[hits[hits >= 0]])
    session.accepted_x.add(conf.x_token)
    return session.sifted


def charlie_reconcile(session: CharlieSession, z_block: BitString, ecc: EccConfig) -> BitString:
    if session.sifted is None:
        raise ProtocolViolation("reconciliation before the confirmation was accepted")
    if len(z_block) % ecc.r or len(z_block) > len(session.sifted):
        raise Rejected("short-sift")
    session.final_key = ecc_decode(z_block ^ session.sifted[:len(z_block)], ecc)
    return session.final_key


# -- drivers -----------------------------------------------------------------

class AqkdCounter:
    """Counter-side registry: open sessions indexed by their ``x`` token."""

    def __init__(self):
        self.accepted_x: set[BitString] = set()
        self.sessions: dict[BitString, CharlieSession] = {}

    def open(self, X: BitString, link: LinkKeys) -> CharlieSession:
        session = charlie_open_session(X, link, self.accepted_x)
        self.sessions.setdefault(session.x, session)
        return session

    def lookup(self, x: BitString) -> CharlieSession:
        session = self.sessions.get(x)
        if session is None:
            raise Rejected("unknown-x")
        return session


@dataclass
class SessionParams:
    m: int
    target_len: int
    ecc: EccConfig = field(default_factory=EccConfig)
    tolerance: float = 0.05
    channel: QuantumChannelConfig = field(default_factory=QuantumChannelConfig)


@dataclass
class SessionOutcome:
    status: str  # "completed" | "aborted" | "rejected"
    reason: str = ""
    user: Optional[AqkdUserState] = None
    charlie: Optional[CharlieSession] = None
    announcement: Optional[CheckAnnouncement] = None
    user_key: Optional[BitString] = None
    charlie_key: Optional[BitString] = None

    @property
    def ok(self) -> bool:
        return self.status == "completed"

    @property
    def keys_agree(self) -> bool:
        return self.ok and self.user_key == self.charlie_key


def run_session(user: AqkdUserState, auth: Authorization, counter: AqkdCounter,
                params: SessionParams, rng: np.random.Generator,
                transcript: tx.Transcript | None = None, *, user_role: str = "user",
                entry: int | None = None, serial: int = 0) -> SessionOutcome:
    """Run forwarding, transmission, check, confirmation and reconciliation for a certified user."""
    log = transcript.record if transcript is not None else (lambda *a, **k: None)
    out = SessionOutcome(status="aborted", user=user)
    head = {"serial": serial} if entry is None else {"serial": serial, "entry": entry}
    log("aqkd.forward", tx.AUTHENTICATED, {**head, "X": auth.X}, sender="bob", recipient="charlie")
    try:
        session = counter.open(auth.X, auth.link)
    except Rejected as exc:
        log("aqkd.forward-rejected", tx.LOCAL, {**head, "reason": exc.reason}, sender="charlie")
        out.status, out.reason = "rejected", exc.reason
        return out
    out.charlie = session
    try:
        report = user_send_qubits(user, params.channel, rng)
        log("aqkd.qubits", tx.ANON_QUANTUM, {"serial": serial, "sent": 3 * user.m,
                                             "delivered": len(report.qubits)}, recipient="charlie")
        ann = charlie_measure_and_announce(session, report, user.m, rng)
        out.announcement = ann
        log("aqkd.announce", tx.PUBLIC, {"serial": serial, **ann.to_payload()}, sender="charlie")
        check = user_verify_announcement(user, ann, params.tolerance)
        log("aqkd.check", tx.LOCAL, {"serial": serial, "decisive": check.decisive,
                                     "errors": check.errors, "accepted": check.accepted}, sender=user_role)
        if not check.accepted:
            raise SessionAborted("eavesdropping-detected", rate=check.rate)
        user_confirm(user, ann)
        conf = user_reconcile(user, params.target_len, params.ecc, rng)
    except SessionAborted as exc:
        if user.phase != UserPhase.ABORTED:
            user.phase = UserPhase.ABORTED
        who = "charlie" if exc.reason == "insufficient-delivery" else user_role
        log("aqkd.abort", tx.PUBLIC, {"serial": serial, "reason": exc.reason}, sender=who)
        out.reason = exc.reason
        return out
    log("aqkd.confirm", tx.ANON_CLASSICAL, {"serial": serial, **conf.to_payload()}, recipient="charlie")
    try:
        target = counter.lookup(conf.x_token)
        charlie_accept_confirmation(target, conf)
        key = charlie_reconcile(target, conf.z_block, params.ecc)
    except Rejected as exc:
        log("aqkd.reject", tx.LOCAL, {"serial": serial, "reason": exc.reason}, sender="charlie")
        out.status, out.reason = "rejected", exc.reason
        return out
    log("aqkd.accept", tx.LOCAL, {"serial": serial, "key_bits": len(key)}, sender="charlie")
    out.status = "completed"
    out.user_key, out.charlie_key = user.final_key, key
    return out


def standalone_session(m: int, target_len: int, rng: np.random.Generator, *,
                       channel: QuantumChannelConfig | None = None, tolerance: float = 0.05,
                       ecc: EccConfig | None = None, transcript: tx.Transcript | None = None) -> SessionOutcome:
    """One complete user/administrator/counter run with a freshly issued credential."""
    registry = CredentialRegistry()
    cred = AqkdCredential.generate(m, rng)
    registry.issue(cred)
    user = AqkdUserState(cred)
    p = user_request(user)
    if transcript is not None:
        transcript.record("aqkd.request", tx.AUTHENTICATED, {"p": p}, sender="user", recipient="bob")
    auth = bob_authorize(p, registry, rng)
    params = SessionParams(m=m, target_len=target_len, ecc=ecc or EccConfig(), tolerance=tolerance,
                           channel=channel or QuantumChannelConfig())
    return run_session(user, auth, AqkdCounter(), params, rng, transcript)
