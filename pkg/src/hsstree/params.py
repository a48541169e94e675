"""Scheme parameters and the named size profiles."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError

# Upper bound on tree heights accepted by padding and ingestion.
MAX_TREE_HEIGHT = 20


@dataclass(frozen=True)
class HssParams:
    """Sizing knobs for one scheme instance.

    ``modulus_bits`` is the bit length of the composite modulus N,
    ``t_bits`` the plaintext width used by bitwise comparisons, and
    ``escrow`` keeps the factorization around so tests can decrypt.
    The reconstruction modulus is always N itself; smaller output moduli
    are not difference-preserving under this exact share conversion.
    """

    security_bits: int = 128
    modulus_bits: int = 3072
    t_bits: int = 10
    escrow: bool = False

    def __post_init__(self):
        if self.t_bits < 1:
            raise DomainError("t_bits must be at least 1")
        if self.modulus_bits < 16:
            raise DomainError("modulus_bits too small for two distinct primes")
        if self.modulus_bits % 2 != 0:
            raise DomainError("modulus_bits must be even")

    @classmethod
    def default(cls, t_bits: int = 10) -> "HssParams":
        """3072-bit modulus, no escrow."""
        return cls(security_bits=128, modulus_bits=3072, t_bits=t_bits)

    @classmethod
    def test_profile(cls, t_bits: int = 10) -> "HssParams":
        """512-bit modulus with key escrow for decryption checks."""
        return cls(security_bits=80, modulus_bits=512, t_bits=t_bits, escrow=True)

    @classmethod
    def toy(cls, t_bits: int = 10) -> "HssParams":
        """128-bit modulus for heavy randomized suites. Offers no security."""
        return cls(security_bits=24, modulus_bits=128, t_bits=t_bits, escrow=True)


PROFILES = {
    "default": HssParams.default,
    "test": HssParams.test_profile,
    "toy": HssParams.toy,
}
