"""Conjugate-coded qubits as classical (basis, value) records.

Only the preparation basis/value and single-shot measurement matter for the
protocols simulated here, so a qubit is stored exactly rather than as an
amplitude vector. Basis 0 is rectilinear, basis 1 diagonal (Hadamard).

Registers are opaque: their contents are private attributes and the only way
to learn anything from them is :func:`measure`, which consumes the qubits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bits import BitString
from .errors import InvalidArgument, ProtocolViolation


class QubitRegister:
    """An ordered batch of qubits in transit or awaiting measurement."""

    __slots__ = ("_basis", "_value", "_consumed")

    def __init__(self, basis: np.ndarray, value: np.ndarray):
        self._basis = np.asarray(basis, dtype=np.uint8)
        self._value = np.asarray(value, dtype=np.uint8)
        self._consumed = np.zeros(self._basis.size, dtype=bool)

    def __len__(self) -> int:
        return self._basis.size

    def __getitem__(self, j: int) -> "Qubit":
        if not -len(self) <= j < len(self):
            raise IndexError(j)
        return Qubit._view(self, j % len(self))

    def __iter__(self):
        return (Qubit._view(self, j) for j in range(len(self)))

    @property
    def consumed(self) -> np.ndarray:
        return self._consumed.copy()

    def _take(self, idx: np.ndarray) -> "QubitRegister":
        # physically moves the selected qubits into a new register
        if self._consumed.any():
            raise ProtocolViolation("cannot transmit qubits that were already measured")
        out = QubitRegister(self._basis[idx].copy(), self._value[idx].copy())
        self._consumed[:] = True
        return out


class Qubit:
    """A single qubit, possibly a view into a register slot."""

    __slots__ = ("_reg", "_idx")

    def __init__(self, basis: int, value: int):
        if basis not in (0, 1) or value not in (0, 1):
            raise InvalidArgument("basis and value must be 0 or 1")
        self._reg = QubitRegister(np.array([basis]), np.array([value]))
        self._idx = 0

    @classmethod
    def _view(cls, reg: QubitRegister, idx: int) -> "Qubit":
        q = cls.__new__(cls)
        q._reg = reg
        q._idx = idx
        return q

    @property
    def consumed(self) -> bool:
        return bool(self._reg._consumed[self._idx])

    def __repr__(self):
        return f"Qubit(<opaque>{', consumed' if self.consumed else ''})"


def encode(basis_bits: BitString, value_bits: BitString) -> QubitRegister:
    """Prepare ``H^basis |value>`` for every position."""
    if len(basis_bits) != len(value_bits):
        raise InvalidArgument(f"basis/value length mismatch: {len(basis_bits)} vs {len(value_bits)}")
    if len(basis_bits) == 0:
        raise InvalidArgument("cannot encode zero qubits")
    return QubitRegister(basis_bits.array.copy(), value_bits.array.copy())


def measure(q, chosen_basis, rng: np.random.Generator):
    """Measure a :class:`Qubit` (returns int) or a whole register (returns BitString).

    Matching basis yields the stored value; otherwise an unbiased coin from
    ``rng``. Measuring a qubit twice raises :class:`ProtocolViolation`.
    """
    if isinstance(q, Qubit):
        reg, j = q._reg, q._idx
        if reg._consumed[j]:
            raise ProtocolViolation("qubit already measured (no-cloning)")
        if chosen_basis not in (0, 1):
            raise InvalidArgument("measurement basis must be 0 or 1")
        coin = int(rng.integers(0, 2))
        reg._consumed[j] = True
        return int(reg._value[j]) if reg._basis[j] == chosen_basis else coin

    reg = q
    bases = chosen_basis.array if isinstance(chosen_basis, BitString) else np.asarray(chosen_basis, dtype=np.uint8)
    if bases.size != len(reg):
        raise InvalidArgument(f"{bases.size} bases for {len(reg)} qubits")
    if reg._consumed.any():
        raise ProtocolViolation("register contains already-measured qubits (no-cloning)")
    coins = rng.integers(0, 2, size=len(reg), dtype=np.uint8)
    out = np.where(reg._basis == bases, reg._value, coins).astype(np.uint8)
    reg._consumed[:] = True
    return BitString._wrap(out)


Interceptor = Callable[[QubitRegister, np.random.Generator], QubitRegister]


@dataclass
class QuantumChannelConfig:
    loss_prob: float = 0.0
    flip_prob: float = 0.0
    interceptor: Optional[Interceptor] = None

    def __post_init__(self):
        for name in ("loss_prob", "flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1], got {v}")


@dataclass
class TransmissionReport:
    delivered_indices: np.ndarray
    qubits: QubitRegister

    def __post_init__(self):
        assert len(self.delivered_indices) == len(self.qubits)


def transmit(qubits: QubitRegister, cfg: QuantumChannelConfig, rng: np.random.Generator) -> TransmissionReport:
    """Send a register through a lossy, noisy channel.

    Order of effects: loss, then the interceptor (which only sees survivors),
    then bit-flip noise on the leg into the receiver.
    """
    n = len(qubits)
    kept = np.flatnonzero(rng.random(n) >= cfg.loss_prob) if cfg.loss_prob > 0 else np.arange(n)
    out = qubits._take(kept)
    if cfg.interceptor is not None and len(out):
        out = cfg.interceptor(out, rng)
    if cfg.flip_prob > 0 and len(out):
        flips = (rng.random(len(out)) < cfg.flip_prob).astype(np.uint8)
        out._value ^= flips
    return TransmissionReport(delivered_indices=kept, qubits=out)


def split(reg: QubitRegister, mask: np.ndarray) -> tuple[QubitRegister, QubitRegister]:
    """Route qubits at ``mask`` positions to the first register, the rest to the second."""
    mask = np.asarray(mask, dtype=bool)
    if reg._consumed.any():
        raise ProtocolViolation("cannot route qubits that were already measured")
    sel = QubitRegister(reg._basis[mask].copy(), reg._value[mask].copy())
    rest = QubitRegister(reg._basis[~mask].copy(), reg._value[~mask].copy())
    reg._consumed[:] = True
    return sel, rest


def merge(selected: QubitRegister, rest: QubitRegister, mask: np.ndarray) -> QubitRegister:
    """Inverse of :func:`split`."""
    mask = np.asarray(mask, dtype=bool)
    basis = np.empty(mask.size, dtype=np.uint8)
    value = np.empty(mask.size, dtype=np.uint8)
    basis[mask], value[mask] = selected._basis, selected._value
    basis[~mask], value[~mask] = rest._basis, rest._value
    return QubitRegister(basis, value)
