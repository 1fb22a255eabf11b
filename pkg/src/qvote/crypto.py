"""One-time pad, repetition-code ECC and the pre-shared credential bundles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bits import BitString, random_bits
from .errors import InvalidArgument, ProtocolViolation


class PadRegistry:
    """Tracks pads already used within one scenario; reuse raises in strict mode."""

    def __init__(self, strict: bool = True):
        self.strict = strict
        self._used: set[BitString] = set()

    def use(self, key: BitString) -> None:
        if key in self._used and self.strict:
            raise ProtocolViolation("one-time pad reused")
        self._used.add(key)

    def __len__(self):
        return len(self._used)


def otp_encrypt(key: BitString, msg: BitString, registry: PadRegistry | None = None) -> BitString:
    if len(key) != len(msg):
        raise InvalidArgument(f"pad length {len(key)} != message length {len(msg)}")
    if registry is not None:
        registry.use(key)
    return key ^ msg


def otp_decrypt(key: BitString, ct: BitString) -> BitString:
    # decryption never consumes a fresh pad, so it is not registered
    return otp_encrypt(key, ct)


@dataclass(frozen=True)
class EccConfig:
    """Repetition code with odd block length ``r``."""

    r: int = 5

    def __post_init__(self):
        if self.r < 3 or self.r % 2 == 0:
            raise InvalidArgument(f"repetition length must be odd and >= 3, got {self.r}")

    @property
    def correctable(self) -> int:
        return (self.r - 1) // 2


def ecc_encode(payload: BitString, cfg: EccConfig) -> BitString:
    if len(payload) == 0:
        raise InvalidArgument("cannot encode an empty payload")
    return BitString._wrap(np.repeat(payload.array, cfg.r))


def ecc_decode(codeword: BitString, cfg: EccConfig) -> BitString:
    """Majority vote over consecutive blocks of ``cfg.r`` bits."""
    if len(codeword) % cfg.r:
        raise InvalidArgument(f"codeword length {len(codeword)} not a multiple of {cfg.r}")
    votes = codeword.array.reshape(-1, cfg.r).sum(axis=1, dtype=np.int64)
    return BitString._wrap((votes > cfg.r // 2).astype(np.uint8))


@dataclass(frozen=True)
class AqkdCredential:
    """Pre-shared bundle ``p || x || y || z`` held by a user and the administrator.

    Lengths for security parameter m: p = m, x = 3m, y = 3m, z = 5m. The pad
    ``z`` must cover ``y || r3`` (3m + 2m bits).
    """

    p: BitString
    x: BitString
    y: BitString
    z: BitString

    @property
    def m(self) -> int:
        return len(self.p)

    @classmethod
    def generate(cls, m: int, rng: np.random.Generator) -> "AqkdCredential":
        if m <= 0:
            raise InvalidArgument("security parameter m must be positive")
        return cls(random_bits(m, rng), random_bits(3 * m, rng),
                   random_bits(3 * m, rng), random_bits(5 * m, rng))

    def check_lengths(self) -> None:
        m = self.m
        if (len(self.x), len(self.y), len(self.z)) != (3 * m, 3 * m, 5 * m):
            raise InvalidArgument("credential component lengths must be m, 3m, 3m, 5m")


@dataclass(frozen=True)
class VoterCredential:
    """Voter key ``k || a || b || c``; ``a, b, c`` play the roles of ``x, y, z``."""

    k: BitString
    a: BitString
    b: BitString
    c: BitString

    def components(self) -> tuple[BitString, ...]:
        return (self.k, self.a, self.b, self.c)

    def as_aqkd(self) -> AqkdCredential:
        return AqkdCredential(p=self.k, x=self.a, y=self.b, z=self.c)


def issue_voter_credentials(n: int, m: int, rng: np.random.Generator,
                            taken: set[BitString] | None = None) -> list[VoterCredential]:
    """Issue ``n`` voter credentials whose components are pairwise distinct.

    ``taken`` holds components already in circulation; it is updated in place.
    """
    seen = taken if taken is not None else set()
    out = []
    for _ in range(n):
        while True:
            cand = AqkdCredential.generate(m, rng)
            parts = (cand.p, cand.x, cand.y, cand.z)
            if len(set(parts)) == 4 and not any(p in seen for p in parts):
                break
        seen.update(parts)
        out.append(VoterCredential(k=cand.p, a=cand.x, b=cand.y, c=cand.z))
    return out


@dataclass
class CredentialRegistry:
    """Administrator-side table of issued AQKD credentials, keyed by request token."""

    issued: dict[BitString, AqkdCredential] = field(default_factory=dict)
    consumed: set[BitString] = field(default_factory=set)

    def issue(self, cred: AqkdCredential) -> None:
        self.issued[cred.p] = cred
