"""Cleartext oracle backend for differential testing.

Mirrors the group-based engine instruction for instruction: ciphertexts
carry their plaintexts, memory values carry the plaintext next to
pseudorandom subtractive shares of (x, d*x). Multiplicative instructions
compute in the clear and re-share deterministically from the construction
seed, so two evaluators built with the same seed produce byte-identical
shares without coordinating. Gate accounting matches the real backend.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

import gmpy2

from .errors import DomainError, ProtocolMisuseError, UnsupportedModulusError
from .hss import PRF_KEY_BYTES, EvalKey, MetricsLedger, Share
from .params import HssParams
from .prf import PrfStream

_TAG_ONE = b"mem:one"
_TAG_ZERO = b"mem:zero"


@dataclass(frozen=True)
class OraclePublicKey:
    """Carries the modulus plus everything needed to fabricate shares."""

    n: int
    d: int
    share_key: bytes
    modulus_bits: int
    d_bits: int

    @property
    def payload_bound(self) -> int:
        # Same bound discipline as the group backend, for differential parity.
        return min(self.n // 4, self.n >> (self.d_bits + 40))


@dataclass(frozen=True)
class OracleCiphertext:
    value: int
    seed: bytes


@dataclass(frozen=True)
class OracleMemoryValue:
    sigma: int
    x_share: int
    dx_share: int
    value: int
    tag: bytes


class OracleEscrow:
    """Decryption is free on this backend; kept for interface parity."""

    def __init__(self, pk: OraclePublicKey):
        self._pk = pk

    def decrypt(self, ct: OracleCiphertext) -> int:
        return ct.value

    def decrypt_companion(self, ct: OracleCiphertext) -> int:
        return ct.value * self._pk.d % self._pk.n


@dataclass
class OracleKeyMaterial:
    pk: OraclePublicKey
    ek0: EvalKey
    ek1: EvalKey
    escrow: OracleEscrow

    @property
    def eval_keys(self) -> tuple[EvalKey, EvalKey]:
        return (self.ek0, self.ek1)


def setup_oracle(params: HssParams, seed: int = 0) -> OracleKeyMaterial:
    """Deterministic key material from ``seed`` at the requested size."""
    rng = random.Random(("oracle-setup", seed, params.modulus_bits).__repr__())
    half = params.modulus_bits // 2
    # Any odd modulus works here; two random primes keep Z_N^* large.
    p = int(gmpy2.next_prime(rng.getrandbits(half) | (1 << (half - 1))))
    q = int(gmpy2.next_prime(rng.getrandbits(half) | (1 << (half - 1))))
    while q == p:
        q = int(gmpy2.next_prime(rng.getrandbits(half) | (1 << (half - 1))))
    n = p * q
    d_bits = 2 * params.security_bits
    d = rng.randrange(1, 1 << d_bits)
    share_key = rng.getrandbits(128).to_bytes(16, "big")
    pk = OraclePublicKey(
        n=n, d=d, share_key=share_key, modulus_bits=params.modulus_bits,
        d_bits=d_bits,
    )
    d0 = rng.randrange(n - d)
    k_prf = rng.getrandbits(8 * PRF_KEY_BYTES).to_bytes(PRF_KEY_BYTES, "big")
    ek0 = EvalKey(sigma=0, d_share=d0, k_prf=k_prf, n=n)
    ek1 = EvalKey(sigma=1, d_share=d0 + d, k_prf=k_prf, n=n)
    return OracleKeyMaterial(pk=pk, ek0=ek0, ek1=ek1, escrow=OracleEscrow(pk))


class OracleHss:
    """Same instruction surface as the group backend, evaluated in the clear."""

    backend_name = "oracle"

    def __init__(
        self,
        pk: OraclePublicKey,
        ledger: MetricsLedger | None = None,
        seed: int = 0,
    ):
        self.pk = pk
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self._rng = random.Random(("oracle-enc", seed).__repr__())

    @property
    def n(self) -> int:
        return self.pk.n

    def _base_share(self, tag: bytes, label: str) -> int:
        return PrfStream(self.pk.share_key, tag + label.encode()).below(self.pk.n)

    def _reshare(self, sigma: int, value: int, tag: bytes) -> OracleMemoryValue:
        n = self.pk.n
        x0 = self._base_share(tag, "x")
        dx0 = self._base_share(tag, "dx")
        if sigma == 0:
            return OracleMemoryValue(sigma, x0, dx0, value, tag)
        return OracleMemoryValue(
            sigma, (x0 + value) % n, (dx0 + value * self.pk.d) % n, value, tag
        )

    @staticmethod
    def _derive_tag(op: str, *parts: bytes) -> bytes:
        digest = hashlib.sha256()
        digest.update(op.encode())
        for part in parts:
            digest.update(len(part).to_bytes(2, "big"))
            digest.update(part)
        return digest.digest()

    # -- encryption-side instructions -------------------------------------

    def input(self, x: int) -> OracleCiphertext:
        if not 0 <= x < self.pk.n:
            raise DomainError(f"plaintext {x} outside [0, N)")
        return OracleCiphertext(value=x, seed=self._rng.randbytes(16))

    def input_signed(self, x: int) -> OracleCiphertext:
        if abs(x) >= self.pk.payload_bound:
            raise DomainError(f"magnitude {x} exceeds N/4 bound")
        return self.input(x % self.pk.n)

    def add_ct(self, a: OracleCiphertext, b: OracleCiphertext) -> OracleCiphertext:
        return OracleCiphertext(
            value=(a.value + b.value) % self.pk.n,
            seed=self._derive_tag("addct", a.seed, b.seed)[:16],
        )

    # -- server-side instructions ------------------------------------------

    def trivial_one(self, ek: EvalKey) -> OracleMemoryValue:
        return OracleMemoryValue(
            sigma=ek.sigma, x_share=ek.sigma, dx_share=ek.d_share, value=1,
            tag=_TAG_ONE,
        )

    def zero_mem(self, ek: EvalKey) -> OracleMemoryValue:
        return OracleMemoryValue(
            sigma=ek.sigma, x_share=0, dx_share=0, value=0, tag=_TAG_ZERO
        )

    def mul(self, c: OracleCiphertext, m: OracleMemoryValue) -> OracleMemoryValue:
        value = c.value * m.value % self.pk.n
        tag = self._derive_tag("mul", c.seed, m.tag)
        self.ledger.count_mul()
        return self._reshare(m.sigma, value, tag)

    def convert_input(self, ek: EvalKey, c: OracleCiphertext) -> OracleMemoryValue:
        return self.mul(c, self.trivial_one(ek))

    def add_mem(self, a: OracleMemoryValue, b: OracleMemoryValue) -> OracleMemoryValue:
        self._check_pair(a, b)
        n = self.pk.n
        return OracleMemoryValue(
            sigma=a.sigma,
            x_share=(a.x_share + b.x_share) % n,
            dx_share=(a.dx_share + b.dx_share) % n,
            value=(a.value + b.value) % n,
            tag=self._derive_tag("add", a.tag, b.tag),
        )

    def sub_mem(self, a: OracleMemoryValue, b: OracleMemoryValue) -> OracleMemoryValue:
        self._check_pair(a, b)
        n = self.pk.n
        return OracleMemoryValue(
            sigma=a.sigma,
            x_share=(a.x_share - b.x_share) % n,
            dx_share=(a.dx_share - b.dx_share) % n,
            value=(a.value - b.value) % n,
            tag=self._derive_tag("sub", a.tag, b.tag),
        )

    def cmul(self, c: int, m: OracleMemoryValue) -> OracleMemoryValue:
        n = self.pk.n
        return OracleMemoryValue(
            sigma=m.sigma,
            x_share=c * m.x_share % n,
            dx_share=c * m.dx_share % n,
            value=c * m.value % n,
            tag=self._derive_tag("cmul", c.to_bytes(
                (abs(c).bit_length() + 15) // 8, "big", signed=True), m.tag),
        )

    def output(self, m: OracleMemoryValue, n_out: int) -> Share:
        if n_out != self.pk.n:
            raise UnsupportedModulusError(
                "output modulus is fixed to N in this instantiation"
            )
        return Share(sigma=m.sigma, value=m.x_share % n_out)

    @staticmethod
    def _check_pair(a: OracleMemoryValue, b: OracleMemoryValue) -> None:
        if a.sigma != b.sigma:
            raise ProtocolMisuseError("memory values belong to different servers")
