import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from qvote.bits import BitString, concat, random_bits
from qvote.crypto import (AqkdCredential, EccConfig, PadRegistry, ecc_decode, ecc_encode,
                          issue_voter_credentials, otp_decrypt, otp_encrypt)
from qvote.errors import InvalidArgument, ProtocolViolation

B = BitString.from_str

bitlists = st.lists(st.integers(0, 1), max_size=200)


def test_str_roundtrip_and_indexing():
    b = B("1011")
    assert str(b) == "1011"
    assert b[0] == 1 and b[1] == 0
    assert b[1:3] == B("01")
    assert len(BitString()) == 0


def test_rejects_non_bits():
    with pytest.raises(InvalidArgument):
        BitString([0, 2])
    with pytest.raises(InvalidArgument):
        B("10a1")


def test_hex_is_msb_first():
    assert B("1000").to_hex() == "80"
    assert B("000000011").to_json() == {"hex": "0180", "bits": 9}


def test_from_hex_rejects_wrong_width():
    with pytest.raises(InvalidArgument):
        BitString.from_hex("0180", 20)


@given(bitlists)
def test_json_roundtrip(bits):
    b = BitString(bits)
    assert BitString.from_json(b.to_json()) == b


@given(bitlists, bitlists, bitlists)
def test_concat_associative(x, y, z):
    a, b, c = BitString(x), BitString(y), BitString(z)
    assert (a + b) + c == a + (b + c) == concat(a, b, c)


def test_xor_needs_equal_lengths():
    with pytest.raises(InvalidArgument):
        B("10") ^ B("101")


def test_immutable():
    b = B("1010")
    with pytest.raises(ValueError):
        b.array[0] = 0


def test_otp_examples():
    assert otp_encrypt(B("0000"), B("1011")) == B("1011")
    assert otp_encrypt(B("1100"), B("1010")) == B("0110")
    with pytest.raises(InvalidArgument):
        otp_encrypt(B("11"), B("101"))


@given(st.data())
def test_otp_involution(data):
    n = data.draw(st.integers(0, 256))
    k = BitString(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    m = BitString(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    assert otp_decrypt(k, otp_encrypt(k, m)) == m


def test_pad_reuse_strict():
    reg = PadRegistry()
    k = B("1100")
    otp_encrypt(k, B("1010"), reg)
    with pytest.raises(ProtocolViolation):
        otp_encrypt(k, B("0001"), reg)
    lax = PadRegistry(strict=False)
    otp_encrypt(k, B("1010"), lax)
    otp_encrypt(k, B("1010"), lax)


def test_ecc_examples():
    r3 = EccConfig(3)
    assert ecc_encode(B("1"), r3) == B("111")
    assert ecc_encode(B("10"), r3) == B("111000")
    assert ecc_decode(B("101110000"), r3) == B("110")
    assert ecc_decode(B("011"), r3) == B("1")
    with pytest.raises(InvalidArgument):
        ecc_decode(B("1111"), r3)


def test_ecc_config_validation():
    for bad in (1, 2, 4):
        with pytest.raises(InvalidArgument):
            EccConfig(bad)
    assert EccConfig().r == 5 and EccConfig().correctable == 2


def test_ecc_majority_failure_mode():
    cfg = EccConfig(5)
    word = ecc_encode(B("0"), cfg)
    assert ecc_decode(word ^ B("11100"), cfg) == B("1")


def test_ecc_exhaustive_r3():
    # every payload up to 8 bits, every pattern of at most one flip per block
    cfg = EccConfig(3)
    patterns = [B(p) for p in ("000", "100", "010", "001")]
    for n in range(1, 9):
        for payload in itertools.product((0, 1), repeat=n):
            msg = BitString(payload)
            word = ecc_encode(msg, cfg)
            assert ecc_decode(word, cfg) == msg
            if n <= 4:
                for flips in itertools.product(patterns, repeat=n):
                    assert ecc_decode(word ^ concat(*flips), cfg) == msg


@given(st.lists(st.integers(0, 1), min_size=1, max_size=16), st.data())
@settings(max_examples=200)
def test_ecc_corrects_up_to_two_per_block_r5(payload, data):
    cfg = EccConfig(5)
    msg = BitString(payload)
    noise = np.zeros(5 * len(payload), dtype=np.uint8)
    for block in range(len(payload)):
        pos = data.draw(st.sets(st.integers(0, 4), max_size=2))
        noise[[5 * block + p for p in pos]] = 1
    assert ecc_decode(ecc_encode(msg, cfg) ^ BitString(noise), cfg) == msg


def test_random_bits():
    assert len(random_bits(0, np.random.default_rng(1))) == 0
    # frozen from the reference generator
    assert random_bits(8, np.random.default_rng(42)) == B("10101101")
    ones = random_bits(100_000, np.random.default_rng(3)).count()
    assert abs(ones / 100_000 - 0.5) <= 0.01


def test_random_bits_binomial_oracle():
    ones = random_bits(10_000, np.random.default_rng(11)).count()
    lo, hi = binom.interval(0.999, 10_000, 0.5)
    assert lo <= ones <= hi


def test_aqkd_credential_lengths():
    cred = AqkdCredential.generate(16, np.random.default_rng(0))
    assert (len(cred.p), len(cred.x), len(cred.y), len(cred.z)) == (16, 48, 48, 80)
    assert cred.m == 16


def test_voter_credentials_pairwise_distinct():
    creds = issue_voter_credentials(30, 64, np.random.default_rng(5))
    parts = [p for c in creds for p in c.components()]
    assert len(parts) == 120 and len(set(parts)) == 120


def test_voter_credentials_respect_taken():
    taken = set()
    first = issue_voter_credentials(3, 8, np.random.default_rng(1), taken)
    more = issue_voter_credentials(20, 8, np.random.default_rng(1), taken)
    seen = [p for c in first + more for p in c.components()]
    assert len(seen) == len(set(seen))
