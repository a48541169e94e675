"""Keyed deterministic randomness.

Both servers expand the shared PRF key into masks and permutations; the
derivations here are counter-mode HMAC-SHA256 so two parties running the
same calls obtain identical values without communicating.
"""

from __future__ import annotations

import hashlib
import hmac
import math


class PrfStream:
    """Byte stream PRF_k(label || counter), consumed left to right."""

    def __init__(self, key: bytes, label: bytes):
        self._key = key
        self._label = label
        self._counter = 0
        self._buf = bytearray()

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hmac.new(
                self._key,
                self._label + self._counter.to_bytes(8, "big"),
                hashlib.sha256,
            ).digest()
            self._buf.extend(block)
            self._counter += 1
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        nbits = bound.bit_length()
        nbytes = (nbits + 7) // 8
        shift = nbytes * 8 - nbits
        while True:
            v = int.from_bytes(self.take(nbytes), "big") >> shift
            if v < bound:
                return v

    def unit(self, modulus: int) -> int:
        """Uniform element of the multiplicative group mod ``modulus``."""
        while True:
            v = self.below(modulus)
            if v != 0 and math.gcd(v, modulus) == 1:
                return v

    def permutation(self, k: int) -> tuple[int, ...]:
        """Fisher-Yates shuffle of range(k) driven by the stream."""
        perm = list(range(k))
        for i in range(k - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return tuple(perm)


def stream(key: bytes, *label_parts: bytes | int | str) -> PrfStream:
    """Open a stream for a composite label; parts are length-separated."""
    pieces = []
    for part in label_parts:
        if isinstance(part, int):
            part = part.to_bytes(8, "big", signed=True)
        elif isinstance(part, str):
            part = part.encode()
        pieces.append(len(part).to_bytes(2, "big") + part)
    return PrfStream(key, b"".join(pieces))
