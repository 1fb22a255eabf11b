"""Immutable bit strings.

Bits are stored one per byte in a read-only ``uint8`` array. Position 0 is the
leftmost, first-transmitted bit; hex serialization packs bits MSB-first and
pads the final nibble with zeros, so the bit length travels alongside the hex.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import InvalidArgument


class BitString:
    __slots__ = ("_bits", "_hash")

    def __init__(self, bits: Iterable[int] | np.ndarray = ()):
        arr = np.array(bits, dtype=np.uint8).reshape(-1)
        if arr.size and arr.max() > 1:
            raise InvalidArgument("bit values must be 0 or 1")
        arr.flags.writeable = False
        self._bits = arr
        self._hash = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "BitString":
        # trusted constructor: arr already holds 0/1 uint8 values
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.flags.writeable = False
        obj._bits = arr
        obj._hash = None
        return obj

    @classmethod
    def from_str(cls, text: str) -> "BitString":
        text = text.replace(" ", "").replace("_", "")
        if any(ch not in "01" for ch in text):
            raise InvalidArgument(f"not a bit string: {text!r}")
        return cls._wrap(np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"))

    @classmethod
    def zeros(cls, n: int) -> "BitString":
        return cls._wrap(np.zeros(n, dtype=np.uint8))

    @classmethod
    def ones(cls, n: int) -> "BitString":
        return cls._wrap(np.ones(n, dtype=np.uint8))

    @classmethod
    def from_hex(cls, hexstr: str, nbits: int) -> "BitString":
        raw = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
        if nbits < 0 or raw.size != (nbits + 7) // 8:
            raise InvalidArgument(f"{raw.size} hex bytes do not encode {nbits} bits")
        return cls._wrap(np.unpackbits(raw)[:nbits])

    @classmethod
    def from_json(cls, obj: dict) -> "BitString":
        return cls.from_hex(obj["hex"], obj["bits"])

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying 0/1 array."""
        return self._bits

    def to_hex(self) -> str:
        return np.packbits(self._bits).tobytes().hex()

    def to_json(self) -> dict:
        return {"hex": self.to_hex(), "bits": len(self)}

    def __len__(self) -> int:
        return self._bits.size

    def __iter__(self):
        return iter(self._bits.tolist())

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return int(self._bits[idx])
        return BitString._wrap(self._bits[idx])

    def __xor__(self, other: "BitString") -> "BitString":
        if len(self) != len(other):
            raise InvalidArgument(f"XOR of unequal lengths {len(self)} and {len(other)}")
        return BitString._wrap(self._bits ^ other._bits)

    def __add__(self, other: "BitString") -> "BitString":
        return BitString._wrap(np.concatenate([self._bits, other._bits]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self._bits.size == other._bits.size and bool(np.array_equal(self._bits, other._bits))

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._bits.size, self._bits.tobytes()))
        return self._hash

    def __str__(self) -> str:
        return (self._bits + ord("0")).tobytes().decode("ascii")

    def __repr__(self) -> str:
        if len(self) <= 32:
            return f"BitString('{self}')"
        return f"BitString(<{len(self)} bits, hex={self.to_hex()[:8]}...>)"

    def count(self) -> int:
        """Number of set bits."""
        return int(self._bits.sum())


def concat(*parts: BitString) -> BitString:
    if not parts:
        return BitString()
    return BitString._wrap(np.concatenate([p.array for p in parts]))


def random_bits(n: int, rng: np.random.Generator) -> BitString:
    if n < 0:
        raise InvalidArgument("n must be non-negative")
    return BitString._wrap(rng.integers(0, 2, size=n, dtype=np.uint8))
