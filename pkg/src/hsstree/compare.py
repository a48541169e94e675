"""Zero-round comparison and equality over bitwise-encrypted integers.

Both tests walk the operands from the least significant bit upward,
carrying a single encrypted state bit. A greater-than over t-bit inputs
costs exactly 4t-2 multiplication gates; an equality test costs 3t. The
plaintext recursions are provided alongside as independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError


@dataclass(frozen=True)
class FixedPointSpec:
    """Signed fixed-point layout: ``total_bits`` wide, ``frac_bits`` fractional.

    Values are scaled by 2**frac_bits, rounded half to even, then offset by
    2**(total_bits-1) so the comparison circuit only ever sees non-negative
    bit strings. The offset preserves order.
    """

    total_bits: int
    frac_bits: int = 0

    def __post_init__(self):
        if self.total_bits < 1:
            raise DomainError("total_bits must be positive")
        if not 0 <= self.frac_bits < self.total_bits:
            raise DomainError("frac_bits must satisfy 0 <= f < t")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def offset(self) -> int:
        return 1 << (self.total_bits - 1)


def scale_fixed(value, spec: FixedPointSpec) -> int:
    """Encode a numeric value as an offset t-bit integer."""
    scaled = round(Fraction(value) * spec.scale)
    encoded = scaled + spec.offset
    if not 0 <= encoded < (1 << spec.total_bits):
        raise DomainError(
            f"value {value} does not fit {spec.total_bits}-bit fixed point "
            f"with {spec.frac_bits} fractional bits"
        )
    return encoded


def unscale_fixed(encoded: int, spec: FixedPointSpec) -> Fraction:
    return Fraction(encoded - spec.offset, spec.scale)


def to_bits(value: int, width: int) -> list[int]:
    """LSB-first bit decomposition; rejects values wider than ``width``."""
    if not 0 <= value < (1 << width):
        raise DomainError(f"{value} does not fit in {width} bits")
    return [(value >> i) & 1 for i in range(width)]


@dataclass(frozen=True)
class EncryptedBits:
    """Bitwise ciphertexts of one integer, index 0 = least significant."""

    bits: tuple

    @property
    def width(self) -> int:
        return len(self.bits)


def encrypt_bits(hss, value: int, width: int) -> EncryptedBits:
    return EncryptedBits(bits=tuple(hss.input(b) for b in to_bits(value, width)))


def _check_widths(alpha: EncryptedBits, beta: EncryptedBits) -> int:
    if alpha.width != beta.width:
        raise DomainError(
            f"mixed widths {alpha.width} vs {beta.width} are rejected"
        )
    if alpha.width < 1:
        raise DomainError("empty bit vectors")
    return alpha.width


def sic(hss, ek, alpha: EncryptedBits, beta: EncryptedBits):
    """Memory value of (alpha > beta), using 4t-2 multiplication gates.

    State recursion per bit pair (a, b):
        c' = c - c*(a+b) + (2c-1)*a*b + a
    with base case c_1 = a_1*(1 - b_1).
    """
    t = _check_widths(alpha, beta)
    one = hss.trivial_one(ek)
    m_a = hss.convert_input(ek, alpha.bits[0])
    m_c = hss.mul(beta.bits[0], m_a)
    m_c = hss.sub_mem(m_a, m_c)
    for i in range(1, t):
        m_a = hss.convert_input(ek, alpha.bits[i])
        ct_sum = hss.add_ct(alpha.bits[i], beta.bits[i])
        m_next = hss.mul(ct_sum, m_c)
        m_next = hss.sub_mem(m_c, m_next)
        m_2c = hss.add_mem(m_c, m_c)
        m_2c1 = hss.sub_mem(m_2c, one)
        m_tmp = hss.mul(alpha.bits[i], m_2c1)
        m_tmp = hss.mul(beta.bits[i], m_tmp)
        m_next = hss.add_mem(m_next, m_tmp)
        m_c = hss.add_mem(m_next, m_a)
    return m_c


def seq(hss, ek, alpha: EncryptedBits, beta: EncryptedBits):
    """Memory value of (alpha == beta), using 3t multiplication gates.

    State recursion per bit pair (a, b):
        c' = c - c*(a+b) + 2c*a*b
    with base case c_1 = 1 - a_1 - b_1 + 2*a_1*b_1.
    """
    t = _check_widths(alpha, beta)
    one = hss.trivial_one(ek)
    m_a = hss.convert_input(ek, alpha.bits[0])
    m_b = hss.convert_input(ek, beta.bits[0])
    m_c = hss.mul(beta.bits[0], m_a)
    m_c = hss.add_mem(m_c, m_c)
    m_c = hss.sub_mem(m_c, m_a)
    m_c = hss.sub_mem(m_c, m_b)
    m_c = hss.add_mem(m_c, one)
    for i in range(1, t):
        ct_sum = hss.add_ct(alpha.bits[i], beta.bits[i])
        m_next = hss.mul(ct_sum, m_c)
        m_next = hss.sub_mem(m_c, m_next)
        m_2c = hss.add_mem(m_c, m_c)
        m_tmp = hss.mul(alpha.bits[i], m_2c)
        m_tmp = hss.mul(beta.bits[i], m_tmp)
        m_c = hss.add_mem(m_next, m_tmp)
    return m_c


def set_membership(hss, ek, x_bits: EncryptedBits, elements) -> object:
    """Memory value of (x in S), as the sum of pairwise equality tests.

    Assumes the provider guarantees pairwise-distinct elements, so at most
    one term is 1. An empty set yields a memory value of 0.
    """
    acc = hss.zero_mem(ek)
    for elem in elements:
        acc = hss.add_mem(acc, seq(hss, ek, x_bits, elem))
    return acc


# -- plaintext oracles ------------------------------------------------------


def plain_compare_trace(alpha: int, beta: int, width: int) -> tuple[int, tuple[int, ...]]:
    """Exact plaintext recursion of the comparison circuit, with its c-trace."""
    a_bits = to_bits(alpha, width)
    b_bits = to_bits(beta, width)
    c = 0
    trace = []
    for a, b in zip(a_bits, b_bits):
        c = a * (1 - b) + c * (1 - a - b + 2 * a * b)
        trace.append(c)
    return c, tuple(trace)


def plain_compare(alpha: int, beta: int, width: int) -> int:
    return plain_compare_trace(alpha, beta, width)[0]


def plain_equal(alpha: int, beta: int, width: int) -> int:
    """Exact plaintext recursion of the equality circuit."""
    a_bits = to_bits(alpha, width)
    b_bits = to_bits(beta, width)
    c = 1
    for a, b in zip(a_bits, b_bits):
        c = c - c * (a + b) + 2 * c * a * b
    return c


def sic_gate_count(width: int) -> int:
    return 4 * width - 2


def seq_gate_count(width: int) -> int:
    return 3 * width
