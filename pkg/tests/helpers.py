"""Shared oracles and drivers for the test suite."""
from itertools import product

import numpy as np

from qvote.adversaries import InterceptResend, guess_sifted_bits
from qvote.aqkd import (AqkdUserState, charlie_measure_and_announce, charlie_open_session, seal_bundle,
                        user_confirm, user_request, user_send_qubits, user_verify_announcement)
from qvote.crypto import AqkdCredential
from qvote.errors import SessionAborted
from qvote.qubits import QuantumChannelConfig


def enumerate_intercept_resend():
    """Exact (error rate at matched check positions, Eve's per-bit sift guess success).

    Enumerates the user's basis and value, Eve's basis and coin, and the
    counter's coin, conditioned on the counter's basis equal to the user's.
    """
    err = hit = total = 0
    for ub, uv, eb, ecoin, ccoin in product((0, 1), repeat=5):
        eve_out = uv if eb == ub else ecoin
        charlie_out = eve_out if eb == ub else ccoin  # counter measures in ub
        err += charlie_out != uv
        hit += eve_out == uv
        total += 1
    return err / total, hit / total


def sifted_guess_trial(m, rng):
    """Eve's guesses and the true bits over one session's sifted key (noiseless, fraction 1)."""
    eve = InterceptResend(1.0)
    cred = AqkdCredential.generate(m, rng)
    user = AqkdUserState(cred)
    user_request(user)
    auth = seal_bundle(cred.x, cred.y, cred.z, rng)
    session = charlie_open_session(auth.X, auth.link)
    report = user_send_qubits(user, QuantumChannelConfig(interceptor=eve.channel_hook()), rng)
    ann = charlie_measure_and_announce(session, report, m, rng)
    try:
        user_verify_announcement(user, ann, 1.0)
    except SessionAborted:
        return np.zeros(0, np.uint8), np.zeros(0, np.uint8)
    user_confirm(user, ann)
    rest = np.setdiff1d(np.arange(3 * m), ann.sigma)
    positions = rest[user.r3.array == 1]
    # no loss: delivered register index equals the original position
    return guess_sifted_bits(eve.notes[0], positions, rng), user.r2.array[positions]
