"""Two-server homomorphic secret sharing over a Paillier-ElGamal group.

A ciphertext packs two linearly homomorphic ElGamal-style pairs mod N**2:
one encoding the plaintext x and a companion encoding d*x, where d is the
scheme secret. Each server holds a subtractive share of d and evaluates
restricted-multiplication straight-line programs locally; multiplications
land back in share form through an exact discrete-log conversion on the
(1+N) subgroup, so the two servers never need to talk to each other.

The conversion is exact only while the share pair entering a
multiplication splits its value over the integers, which holds except
with probability about value * 2**d_bits / N per instruction. d is
therefore a short exponent (2 * security_bits, the usual generic-attack
margin) and evaluated plaintexts must stay below ``pk.payload_bound``;
values may be as large as N (a masked share, a MAC product) only where
they are output directly rather than multiplied again.

All values are kept as Python ints / gmpy2 mpz; gmpy2 supplies the modular
exponentiation, inversion and primality testing.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass

import gmpy2

from .errors import (
    ConversionError,
    DomainError,
    ProtocolMisuseError,
    SetupError,
    UnsupportedModulusError,
)
from .params import HssParams

PRF_KEY_BYTES = 16

# Small primes used to presieve safe-prime candidates before Miller-Rabin.
_SIEVE_LIMIT = 20_000


def _small_primes(limit: int) -> tuple[int, ...]:
    sieve = bytearray([1]) * limit
    sieve[0:2] = b"\x00\x00"
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = bytearray(len(sieve[i * i :: i]))
    return tuple(i for i in range(3, limit) if sieve[i])


_SMALL_PRIMES = _small_primes(_SIEVE_LIMIT)


def centered(value: int, modulus: int) -> int:
    """Map a residue in [0, modulus) to the centered range (-modulus/2, modulus/2]."""
    value %= modulus
    return value if value <= modulus // 2 else value - modulus


# Statistical slack: per-instruction failure odds stay below 2**-_STAT_BITS.
_STAT_BITS = 40


@dataclass(frozen=True)
class PublicKey:
    """Group description plus an encryption of the scheme secret d.

    ``enc_of_d`` lets anyone build the d*x companion of a fresh ciphertext
    by exponentiation and rerandomization, without ever seeing d.
    """

    n: int
    g: int
    h: int
    enc_of_d: tuple[int, int]
    modulus_bits: int
    d_bits: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def payload_bound(self) -> int:
        """Largest plaintext magnitude the instruction set evaluates safely.

        Keeps d * value well under N so share conversions stay exact, and
        under N/4 so centered reconstruction is unambiguous.
        """
        return min(self.n // 4, self.n >> (self.d_bits + _STAT_BITS))


@dataclass(frozen=True)
class EvalKey:
    """Per-server evaluation key: server index, share of d, shared PRF key."""

    sigma: int
    d_share: int
    k_prf: bytes
    n: int


@dataclass(frozen=True)
class Ciphertext:
    """Pair of group-element pairs mod N**2 encoding (x, d*x)."""

    main: tuple[int, int]
    companion: tuple[int, int]


@dataclass(frozen=True)
class MemoryValue:
    """One server's intermediate state: subtractive shares of (x, d*x) mod N."""

    sigma: int
    x_share: int
    dx_share: int


@dataclass(frozen=True)
class Share:
    """Output share; across the two servers value_1 - value_0 = x (mod n_out)."""

    sigma: int
    value: int


class KeyEscrow:
    """Factorizaton and secret kept around in test profiles for decryption."""

    def __init__(self, p: int, q: int, d: int, pk: PublicKey):
        self.p = p
        self.q = q
        self.d = d
        self._pk = pk

    def decrypt_pair(self, pair: tuple[int, int]) -> int:
        c0, c1 = pair
        n, n_sq = self._pk.n, self._pk.n_sq
        m = c1 * gmpy2.powmod(c0, -self.d, n_sq) % n_sq
        if (m - 1) % n != 0:
            raise ConversionError("pair does not decode under this key")
        return int((m - 1) // n % n)

    def decrypt(self, ct: Ciphertext) -> int:
        return self.decrypt_pair(ct.main)

    def decrypt_companion(self, ct: Ciphertext) -> int:
        return self.decrypt_pair(ct.companion)


@dataclass
class KeyMaterial:
    pk: PublicKey
    ek0: EvalKey
    ek1: EvalKey
    escrow: KeyEscrow | None = None

    @property
    def eval_keys(self) -> tuple[EvalKey, EvalKey]:
        return (self.ek0, self.ek1)


class MetricsLedger:
    """Thread-safe multiplication-gate counter.

    Mul and ConvertInput each count one gate; the linear instructions and
    Output count nothing.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._muls = 0

    def count_mul(self, n: int = 1) -> None:
        with self._lock:
            self._muls += n

    @property
    def muls(self) -> int:
        with self._lock:
            return self._muls

    def reset(self) -> None:
        with self._lock:
            self._muls = 0


def _safe_prime(bits: int, rng: random.Random, budget: list[int]) -> int:
    """Random safe prime p = 2q+1 with exactly ``bits`` bits."""
    while True:
        q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        budget[0] -= 1
        if budget[0] <= 0:
            raise SetupError(f"no safe prime of {bits} bits within retry budget")
        ok = True
        for sp in _SMALL_PRIMES:
            r = q % sp
            if r == 0 or (2 * r + 1) % sp == 0:
                if q != sp and 2 * q + 1 != sp:
                    ok = False
                    break
        if not ok:
            continue
        if gmpy2.is_prime(q, 25) and gmpy2.is_prime(2 * q + 1, 25):
            return 2 * q + 1


def setup(
    params: HssParams,
    rng: random.Random | None = None,
    primes: tuple[int, int] | None = None,
) -> KeyMaterial:
    """Generate a public key and the two server evaluation keys.

    ``rng`` defaults to the system RNG; pass a seeded ``random.Random``
    only for deterministic test vectors. ``primes`` pins (p, q) the same
    way, skipping the safe-prime search.
    """
    rng = rng or random.SystemRandom()
    half = params.modulus_bits // 2
    d_bits = 2 * params.security_bits
    if d_bits + _STAT_BITS + 8 >= params.modulus_bits:
        raise SetupError("modulus leaves no payload headroom above the secret size")
    if primes is not None:
        p, q = primes
        if p == q or p.bit_length() != half or q.bit_length() != half:
            raise SetupError("pinned primes do not fit the profile")
    else:
        budget = [max(200_000, 6_000 * params.modulus_bits)]
        p = _safe_prime(half, rng, budget)
        while True:
            q = _safe_prime(half, rng, budget)
            if q != p:
                break
    n = p * q
    n_sq = n * n

    while True:
        a = rng.randrange(2, n_sq)
        if math.gcd(a, n) != 1:
            continue
        g = int(gmpy2.powmod(a, 2 * n, n_sq))
        if g != 1:
            break

    # Short exponent: generic discrete-log attacks cost 2**(d_bits/2), and
    # d * payload must stay far below N for exact share conversion.
    d = rng.randrange(1, 1 << d_bits)
    h = int(gmpy2.powmod(g, d, n_sq))
    pk = PublicKey(
        n=n, g=g, h=h, enc_of_d=(0, 0), modulus_bits=params.modulus_bits,
        d_bits=d_bits,
    )
    enc_of_d = _raw_encrypt(pk, d, rng)
    pk = PublicKey(
        n=n, g=g, h=h, enc_of_d=enc_of_d, modulus_bits=params.modulus_bits,
        d_bits=d_bits,
    )

    # d_share1 = d_share0 + d over the integers, so the trivial memory
    # value of 1 is an exact split.
    d0 = rng.randrange(n - d)
    d1 = d0 + d
    k_prf = rng.getrandbits(8 * PRF_KEY_BYTES).to_bytes(PRF_KEY_BYTES, "big")
    ek0 = EvalKey(sigma=0, d_share=d0, k_prf=k_prf, n=n)
    ek1 = EvalKey(sigma=1, d_share=d1, k_prf=k_prf, n=n)
    escrow = KeyEscrow(p, q, d, pk) if params.escrow else None
    return KeyMaterial(pk=pk, ek0=ek0, ek1=ek1, escrow=escrow)


def _raw_encrypt(pk: PublicKey, x: int, rng: random.Random) -> tuple[int, int]:
    """ElGamal-in-the-exponent pair (g^r, h^r * (1+N)^x) mod N**2."""
    n, n_sq = pk.n, pk.n_sq
    r = rng.randrange(n)
    c0 = gmpy2.powmod(pk.g, r, n_sq)
    # (1+N)^x mod N**2 collapses to 1 + x*N.
    c1 = gmpy2.powmod(pk.h, r, n_sq) * ((1 + x * n) % n_sq) % n_sq
    return (int(c0), int(c1))


def ddlog(h_elem: int, n: int) -> int:
    """Exact share conversion on the (1+N) subgroup.

    Writing h_elem = h0 + h1*N with h0 in [0, N), returns h1 * h0^-1 mod N.
    Satisfies ddlog((1+N)^x * u) - ddlog(u) = x (mod N) for every unit u.
    """
    h_elem %= n * n
    h0 = h_elem % n
    h1 = h_elem // n
    try:
        inv = gmpy2.invert(h0, n)
    except ZeroDivisionError:
        raise ConversionError("element not invertible mod N") from None
    return int(h1 * inv % n)


class PaillierHss:
    """Instruction set of the scheme, bound to one public key.

    Each server (and the client) constructs its own evaluator; the only
    mutable state is the gate ledger, safe for concurrent increments.
    """

    backend_name = "paillier"

    def __init__(
        self,
        pk: PublicKey,
        ledger: MetricsLedger | None = None,
        rng: random.Random | None = None,
    ):
        self.pk = pk
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self._rng = rng or random.SystemRandom()

    @property
    def n(self) -> int:
        return self.pk.n

    # -- encryption-side instructions -------------------------------------

    def input(self, x: int) -> Ciphertext:
        """Encrypt x in [0, N); the companion pair encodes d*x."""
        n, n_sq = self.pk.n, self.pk.n_sq
        if not 0 <= x < n:
            raise DomainError(f"plaintext {x} outside [0, N)")
        main = _raw_encrypt(self.pk, x, self._rng)
        e0, e1 = self.pk.enc_of_d
        r = self._rng.randrange(n)
        comp0 = gmpy2.powmod(e0, x, n_sq) * gmpy2.powmod(self.pk.g, r, n_sq) % n_sq
        comp1 = gmpy2.powmod(e1, x, n_sq) * gmpy2.powmod(self.pk.h, r, n_sq) % n_sq
        return Ciphertext(main=main, companion=(int(comp0), int(comp1)))

    def input_signed(self, x: int) -> Ciphertext:
        """Encrypt a signed value of magnitude below N/4 via centered encoding."""
        if abs(x) >= self.pk.payload_bound:
            raise DomainError(f"magnitude {x} exceeds N/4 bound")
        return self.input(x % self.pk.n)

    def add_ct(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        n_sq = self.pk.n_sq
        return Ciphertext(
            main=(a.main[0] * b.main[0] % n_sq, a.main[1] * b.main[1] % n_sq),
            companion=(
                a.companion[0] * b.companion[0] % n_sq,
                a.companion[1] * b.companion[1] % n_sq,
            ),
        )

    # -- server-side instructions ------------------------------------------

    def trivial_one(self, ek: EvalKey) -> MemoryValue:
        return MemoryValue(sigma=ek.sigma, x_share=ek.sigma, dx_share=ek.d_share)

    def zero_mem(self, ek: EvalKey) -> MemoryValue:
        return MemoryValue(sigma=ek.sigma, x_share=0, dx_share=0)

    def mul(self, c: Ciphertext, m: MemoryValue) -> MemoryValue:
        n, n_sq = self.pk.n, self.pk.n_sq
        x_sh, dx_sh = m.x_share, m.dx_share
        g_main = (
            gmpy2.powmod(c.main[1], x_sh, n_sq)
            * gmpy2.powmod(c.main[0], -dx_sh, n_sq)
            % n_sq
        )
        g_comp = (
            gmpy2.powmod(c.companion[1], x_sh, n_sq)
            * gmpy2.powmod(c.companion[0], -dx_sh, n_sq)
            % n_sq
        )
        self.ledger.count_mul()
        return MemoryValue(
            sigma=m.sigma, x_share=ddlog(g_main, n), dx_share=ddlog(g_comp, n)
        )

    def convert_input(self, ek: EvalKey, c: Ciphertext) -> MemoryValue:
        return self.mul(c, self.trivial_one(ek))

    def add_mem(self, a: MemoryValue, b: MemoryValue) -> MemoryValue:
        self._check_pair(a, b)
        n = self.pk.n
        return MemoryValue(
            sigma=a.sigma,
            x_share=(a.x_share + b.x_share) % n,
            dx_share=(a.dx_share + b.dx_share) % n,
        )

    def sub_mem(self, a: MemoryValue, b: MemoryValue) -> MemoryValue:
        self._check_pair(a, b)
        n = self.pk.n
        return MemoryValue(
            sigma=a.sigma,
            x_share=(a.x_share - b.x_share) % n,
            dx_share=(a.dx_share - b.dx_share) % n,
        )

    def cmul(self, c: int, m: MemoryValue) -> MemoryValue:
        n = self.pk.n
        return MemoryValue(
            sigma=m.sigma,
            x_share=c * m.x_share % n,
            dx_share=c * m.dx_share % n,
        )

    def output(self, m: MemoryValue, n_out: int) -> Share:
        if n_out != self.pk.n:
            raise UnsupportedModulusError(
                "output modulus is fixed to N in this instantiation"
            )
        return Share(sigma=m.sigma, value=m.x_share % n_out)

    @staticmethod
    def _check_pair(a: MemoryValue, b: MemoryValue) -> None:
        if a.sigma != b.sigma:
            raise ProtocolMisuseError("memory values belong to different servers")
