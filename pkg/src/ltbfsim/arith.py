"""Finite-precision arithmetic emulation.

Three families of number formats are modelled:

* ``fp64``   - IEEE double, the identity format.
* ``fp32``   - IEEE single; values are rounded to the nearest float32.
* ``qM.F``   - signed fixed point with ``M`` integer bits, ``F`` fractional
  bits and one sign bit.  Rounding is round-to-nearest-even onto the
  ``2**-F`` grid and out-of-range results saturate.

Fixed-point numbers are carried as float64 values constrained to the grid,
which lets a single set of numpy kernels serve every format.  Complex values
are quantized component-wise.

Two accumulator policies are supported for inner products and matrix
products.  ``WIDE`` forms products and sums in float64 and quantizes once,
``NARROW`` quantizes after every multiply and every add.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

__all__ = [
    "Kind", "AccumulatorPolicy", "ArithmeticProfile", "FP64", "FP32",
    "Q15_16", "Q7_16", "profile", "quantize", "qadd", "qsub", "qmul",
    "qdiv", "qdot", "qmul_array", "ArithmeticDomainError",
]


class ArithmeticDomainError(ArithmeticError):
    """Raised when a non-finite value reaches the quantizer."""


class Kind(enum.Enum):
    FP64 = "fp64"
    FP32 = "fp32"
    FIXED = "fixed"


class AccumulatorPolicy(enum.Enum):
    WIDE = "wide"
    NARROW = "narrow"


@dataclass(frozen=True)
class ArithmeticProfile:
    """A numeric precision regime.

    Parameters
    ----------
    kind : Kind
    int_bits, frac_bits : int
        Only meaningful for ``Kind.FIXED``.
    """
    kind: Kind
    int_bits: int = 0
    frac_bits: int = 0

    def __post_init__(self):
        if self.kind is Kind.FIXED:
            if self.int_bits < 1 or self.frac_bits < 1:
                raise ValueError("fixed-point profile needs int_bits >= 1 "
                                 "and frac_bits >= 1")
            if self.int_bits + self.frac_bits > 62:
                raise ValueError("fixed-point word too wide for emulation")

    @property
    def name(self) -> str:
        if self.kind is Kind.FIXED:
            return f"q{self.int_bits}.{self.frac_bits}"
        return self.kind.value

    @property
    def word_bits(self) -> int:
        return {Kind.FP64: 64, Kind.FP32: 32}.get(
            self.kind, 1 + self.int_bits + self.frac_bits)

    @property
    def lsb(self) -> float:
        """Grid spacing of a fixed-point format."""
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return 2.0 ** self.int_bits - self.lsb

    @property
    def min_value(self) -> float:
        return -(2.0 ** self.int_bits)

    @property
    def is_finite_precision(self) -> bool:
        return self.kind is not Kind.FP64

    def __str__(self):
        return self.name


FP64 = ArithmeticProfile(Kind.FP64)
FP32 = ArithmeticProfile(Kind.FP32)
Q15_16 = ArithmeticProfile(Kind.FIXED, 15, 16)
Q7_16 = ArithmeticProfile(Kind.FIXED, 7, 16)

_Q_RE = re.compile(r"^q(\d+)\.(\d+)$")


def profile(spec: Union[str, ArithmeticProfile]) -> ArithmeticProfile:
    """Parse ``"fp64"``, ``"fp32"`` or ``"qM.F"`` into a profile."""
    if isinstance(spec, ArithmeticProfile):
        return spec
    s = spec.strip().lower()
    if s == "fp64":
        return FP64
    if s == "fp32":
        return FP32
    m = _Q_RE.match(s)
    if m is None:
        raise ValueError(f"unknown precision profile {spec!r}")
    return ArithmeticProfile(Kind.FIXED, int(m.group(1)), int(m.group(2)))


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def _quantize_real(x, p: ArithmeticProfile):
    if p.kind is Kind.FP64:
        return x
    if p.kind is Kind.FP32:
        return np.asarray(x, dtype=np.float64).astype(np.float32).astype(
            np.float64)
    scale = 2.0 ** p.frac_bits
    # power-of-two scaling is exact; np.round is half-to-even
    n = np.round(np.asarray(x, dtype=np.float64) * scale)
    top = 2.0 ** (p.int_bits + p.frac_bits)
    return np.clip(n, -top, top - 1.0) / scale


def quantize(x, p: ArithmeticProfile):
    """Round ``x`` (real or complex, scalar or array) onto the grid of ``p``.

    Raises
    ------
    ArithmeticDomainError
        If ``x`` contains inf or nan.
    """
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise ArithmeticDomainError(f"non-finite value under {p.name}")
    if p.kind is Kind.FP64:
        return x
    if np.iscomplexobj(arr):
        out = _quantize_real(arr.real, p) + 1j * _quantize_real(arr.imag, p)
    else:
        out = _quantize_real(arr, p)
    if np.ndim(out) == 0:
        return complex(out) if np.iscomplexobj(out) else float(out)
    return out


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def _saturate_int(n: int, p: ArithmeticProfile) -> int:
    top = 1 << (p.int_bits + p.frac_bits)
    return max(-top, min(top - 1, n))


def _fixed_from_fraction(v: Fraction, p: ArithmeticProfile) -> float:
    # round() on a Fraction is round-half-even
    n = _saturate_int(round(v * (1 << p.frac_bits)), p)
    return n / (1 << p.frac_bits)


def qadd(a: complex, b: complex, p: ArithmeticProfile) -> complex:
    return complex(quantize(complex(a) + complex(b), p))


def qsub(a: complex, b: complex, p: ArithmeticProfile) -> complex:
    return complex(quantize(complex(a) - complex(b), p))


def qmul(a: complex, b: complex, p: ArithmeticProfile) -> complex:
    """Complex product with a single rounding of each component.

    Under fixed point the product is formed exactly in rational arithmetic
    before rounding, so the result is independent of float64 round-off.
    """
    a, b = complex(a), complex(b)
    if p.kind is not Kind.FIXED:
        return complex(quantize(a * b, p))
    ar, ai = Fraction(a.real), Fraction(a.imag)
    br, bi = Fraction(b.real), Fraction(b.imag)
    re_ = _fixed_from_fraction(ar * br - ai * bi, p)
    im_ = _fixed_from_fraction(ar * bi + ai * br, p)
    return complex(re_, im_)


def qdiv(a: complex, b: complex, p: ArithmeticProfile) -> complex:
    """Complex division, formed in float64 and quantized once."""
    b = complex(b)
    if b == 0:
        raise ZeroDivisionError(f"division by exact zero under {p.name}")
    return complex(quantize(complex(a) / b, p))


def qdot(a, b, p: ArithmeticProfile,
         acc: AccumulatorPolicy = AccumulatorPolicy.WIDE) -> complex:
    """Bilinear inner product ``sum(a * b)`` (no conjugation)."""
    a = np.asarray(a, dtype=np.complex128).ravel()
    b = np.asarray(b, dtype=np.complex128).ravel()
    if a.shape != b.shape:
        raise ValueError("qdot operands differ in length")
    if acc is AccumulatorPolicy.WIDE or p.kind is Kind.FP64:
        return complex(quantize(complex(np.dot(a, b)), p))
    total = 0j
    for x, y in zip(a, b):
        total = qadd(total, qmul(x, y, p), p)
    return total


# ---------------------------------------------------------------------------
# vectorized element-wise product
# ---------------------------------------------------------------------------

def _round_shift(hi, lo, f):
    """Round ``(hi * 2**f + lo) / 2**f`` half-to-even, with 0 <= lo < 2**(f+1)."""
    one = np.int64(1) << f
    carry = lo >= one
    hi = hi + carry
    lo = lo - carry * one
    half = np.int64(1) << (f - 1)
    up = (lo > half) | ((lo == half) & ((hi & 1) == 1))
    return hi + up


def _split(prod, f):
    return prod >> f, prod & ((np.int64(1) << f) - 1)


def _fixed_cmul_int64(a, b, p):
    f = p.frac_bits
    scale = 2.0 ** f
    ar = np.round(a.real * scale).astype(np.int64)
    ai = np.round(a.imag * scale).astype(np.int64)
    br = np.round(b.real * scale).astype(np.int64)
    bi = np.round(b.imag * scale).astype(np.int64)
    # split each product into (quotient, remainder) so the sums cannot wrap
    q1, r1 = _split(ar * br, f)
    q2, r2 = _split(ai * bi, f)
    q3, r3 = _split(ar * bi, f)
    q4, r4 = _split(ai * br, f)
    one = np.int64(1) << f
    re_hi = q1 - q2 - 1
    re_lo = r1 - r2 + one  # now in (0, 2**(f+1))
    im_hi = q3 + q4
    im_lo = r3 + r4
    top = np.int64(1) << (p.int_bits + p.frac_bits)
    re_n = np.clip(_round_shift(re_hi, re_lo, f), -top, top - 1)
    im_n = np.clip(_round_shift(im_hi, im_lo, f), -top, top - 1)
    return re_n / scale + 1j * (im_n / scale)


def qmul_array(a, b, p: ArithmeticProfile):
    """Element-wise complex product of broadcastable arrays under ``p``.

    Operands must already lie on the grid of ``p``.  For fixed-point words
    of up to 32 bits the product is computed exactly in int64 and rounded
    once; wider words fall back to Python integers.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if p.kind is not Kind.FIXED:
        return quantize(a * b, p)
    a, b = np.broadcast_arrays(a, b)
    if p.int_bits + p.frac_bits <= 31:
        return _fixed_cmul_int64(a, b, p)
    out = np.empty(a.shape, dtype=np.complex128)
    for idx in np.ndindex(a.shape):
        out[idx] = qmul(a[idx], b[idx], p)
    return out
