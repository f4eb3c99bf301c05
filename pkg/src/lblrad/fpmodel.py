"""Bit-level models of shader floating-point units.

A :class:`UnitProfile` describes one arithmetic unit: its storage format and
how its adder and multiplier deviate from IEEE-754 round-to-nearest.  All
operators work on encoded bit patterns, either one :class:`ModeledValue` at a
time or on ``numpy.uint64`` arrays of bit patterns (the fast path used by the
probes and the transfer kernel).

Model summary
-------------
adder
    The smaller operand is aligned to the larger one.  With
    ``exact_alignment`` the exact sum is formed (a sticky bit keeps the
    shifted-out information), otherwise the shifted-out bits are discarded
    below ``extra_mantissa_bit + sub_guard_bit`` positions under the larger
    operand's last place.  The sum is then rounded (truncated when
    ``add_truncates``) to the storage format.
multiplier
    Sign-magnitude.  Partial-product bits in the ``fraction_bits -
    mul_extra_rows`` lowest columns of the double-width product are dropped,
    ``mul_compensation`` is added and the result is truncated.
    ``mul_compensation`` is relative to the product register, whose top bit has
    weight 2 for 1.f x 1.f operands (the register holds the product / 2).
special functions
    ``ex2`` and ``rcp`` are evaluated in binary64, perturbed by a
    deterministic relative error of at most ``special_rel_error`` when the
    result is inexact, then stored.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Union

import numba
import numpy as np

__all__ = [
    "FloatFormat",
    "UnitProfile",
    "ModeledValue",
    "quantize",
    "fadd",
    "fsub",
    "fmul",
    "fmad",
    "fneg",
    "ex2",
    "rcp",
    "ulp_error",
    "to_float",
    "PRESETS",
    "get_profile",
    "load_profile",
    "parse_profile",
    "dump_profile",
]

RNE = "rne"
RZ = "rz"

_MAX_ARITH_FRACTION_BITS = 29


@dataclass(frozen=True)
class FloatFormat:
    total_bits: int
    sign_bits: int
    exponent_bits: int
    fraction_bits: int
    supports_nan_inf: bool = True

    def __post_init__(self):
        if self.sign_bits != 1:
            raise ValueError("sign_bits must be 1")
        if self.total_bits != self.sign_bits + self.exponent_bits + self.fraction_bits:
            raise ValueError(
                f"total_bits {self.total_bits} != 1 + {self.exponent_bits} + {self.fraction_bits}"
            )
        if self.exponent_bits < 2 or self.fraction_bits < 2 or self.total_bits > 64:
            raise ValueError("unsupported format layout")

    @property
    def bias(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        # without NaN/Inf the all-ones exponent is an ordinary binade
        return self.bias + (0 if self.supports_nan_inf else 1)

    @property
    def exp_mask(self) -> int:
        return (1 << self.exponent_bits) - 1

    @property
    def sign_mask(self) -> int:
        return 1 << (self.exponent_bits + self.fraction_bits)

    @property
    def max_finite_bits(self) -> int:
        be = self.exp_mask - 1 if self.supports_nan_inf else self.exp_mask
        return (be << self.fraction_bits) | ((1 << self.fraction_bits) - 1)

    @property
    def inf_bits(self) -> int:
        return self.exp_mask << self.fraction_bits

    @property
    def qnan_bits(self) -> int:
        return self.inf_bits | (1 << (self.fraction_bits - 1))

    @property
    def snan_bits(self) -> int:
        return self.inf_bits | (1 << (self.fraction_bits - 2))

    def spec(self) -> str:
        return f"{self.total_bits},{self.sign_bits},{self.exponent_bits},{self.fraction_bits}"


# Representation formats of GPUs and CPUs.
NVIDIA_FP16 = FloatFormat(16, 1, 5, 10, True)
NVIDIA_FP32 = FloatFormat(32, 1, 8, 23, True)
ATI_FP16 = FloatFormat(16, 1, 5, 10, False)
ATI_FP24 = FloatFormat(24, 1, 7, 16, False)
ATI_FP32 = FloatFormat(32, 1, 8, 23, True)
IEEE_BINARY32 = FloatFormat(32, 1, 8, 23, True)
IEEE_BINARY64 = FloatFormat(64, 1, 11, 52, True)

FORMATS = {
    "nvidia16": NVIDIA_FP16,
    "nvidia32": NVIDIA_FP32,
    "ati16": ATI_FP16,
    "ati24": ATI_FP24,
    "ati32": ATI_FP32,
    "binary32": IEEE_BINARY32,
    "binary64": IEEE_BINARY64,
}


@dataclass(frozen=True)
class UnitProfile:
    """Behavioural description of one floating-point unit.

    ``dependent_unit`` is the downstream ALU of a two-ALU pixel pipeline: an
    instruction that consumes the result of the instruction issued just
    before it on this unit runs there instead.  ``None`` means a single unit
    (or two identical ones).
    """

    name: str
    format: FloatFormat = IEEE_BINARY32
    add_truncates: bool = False
    sub_guard_bit: bool = False
    extra_mantissa_bit: bool = False
    exact_alignment: bool = True
    mul_compensation: Fraction = Fraction(0)
    mul_extra_rows: int = 23
    flush_subnormals_to_zero: bool = False
    snan_to_qnan: bool = True
    special_rel_error: float = 0.0
    guard_all_adds: bool = False
    dependent_unit: "UnitProfile | None" = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "mul_compensation", Fraction(self.mul_compensation))
        if self.mul_compensation < 0:
            raise ValueError("mul_compensation must be >= 0")
        if self.mul_extra_rows < 0:
            raise ValueError("mul_extra_rows must be >= 0")
        if self.special_rel_error < 0:
            raise ValueError("special_rel_error must be >= 0")

    @property
    def rounding(self) -> str:
        return RZ if self.add_truncates else RNE

    @property
    def mul_constant(self) -> int:
        """Compensation in units of the last place of the integer mantissa product."""
        F = self.format.fraction_bits
        return math.floor(self.mul_compensation * (1 << (2 * F + 1)))

    def unit(self, slot: int) -> "UnitProfile":
        if slot and self.dependent_unit is not None:
            return self.dependent_unit
        return self

    def replace(self, **changes) -> "UnitProfile":
        return dataclasses.replace(self, **changes)


def _check_arith(fmt: FloatFormat):
    if fmt.fraction_bits > _MAX_ARITH_FRACTION_BITS:
        raise ValueError(
            f"arithmetic is modeled for formats with at most {_MAX_ARITH_FRACTION_BITS} "
            f"fraction bits; {fmt.spec()} supports quantization only"
        )


# --------------------------------------------------------------------------
# decoding and rounding


def _decode(bits: np.ndarray, fmt: FloatFormat, daz: bool):
    F = fmt.fraction_bits
    b = bits.astype(np.int64) if fmt.total_bits < 64 else bits.view(np.int64)
    sign = (bits >> np.uint64(F + fmt.exponent_bits)).astype(np.int64) & 1
    be = (b >> F) & fmt.exp_mask
    frac = b & ((1 << F) - 1)
    if fmt.supports_nan_inf:
        special = be == fmt.exp_mask
    else:
        special = np.zeros(b.shape, dtype=bool)
    isnan = special & (frac != 0)
    isinf = special & (frac == 0)
    sub = be == 0
    sig = np.where(sub, frac, frac | (1 << F))
    exp = np.where(sub, fmt.emin - F, be - fmt.bias - F)
    if daz:
        sig = np.where(sub, 0, sig)
    sig = np.where(special, 0, sig)
    iszero = (sig == 0) & ~special
    return sign, sig, exp, isnan, isinf, iszero


def _pack(sign, be, frac, fmt: FloatFormat) -> np.ndarray:
    F = fmt.fraction_bits
    out = (np.asarray(sign, dtype=np.uint64) << np.uint64(F + fmt.exponent_bits))
    out |= np.asarray(be, dtype=np.uint64) << np.uint64(F)
    out |= np.asarray(frac, dtype=np.uint64)
    return out


@numba.njit(cache=True, nogil=True)
def _round_pack_kernel(sign, sig, exp, sticky, F, bias, emin, emax, sign_shift, big, rne, ftz, out):
    hidden = np.int64(1) << F
    for k in range(sig.shape[0]):
        sbit = np.uint64(sign[k]) << np.uint64(sign_shift)
        m = sig[k]
        if m == 0:
            out[k] = sbit
            continue
        nbits = 0
        t = m
        while t:
            t >>= 1
            nbits += 1
        e = exp[k]
        lsb = max(e + nbits - 1 - F, emin - F)
        shift = lsb - e
        if shift <= 0:
            q = m << (-shift)
        elif shift >= 63:
            q = np.int64(0)
        else:
            q = m >> shift
            if rne:
                lost = m & ((np.int64(1) << shift) - 1)
                half = np.int64(1) << (shift - 1)
                if lost > half or (lost == half and (sticky[k] or (q & 1) == 1)):
                    q += 1
        if q >> (F + 1):
            q >>= 1
            lsb += 1
        if q >= hidden:
            if lsb + F > emax:
                out[k] = sbit | np.uint64(big)
            else:
                out[k] = sbit | (np.uint64(lsb + F + bias) << np.uint64(F)) | np.uint64(q - hidden)
        elif ftz or q == 0:
            out[k] = sbit
        else:
            out[k] = sbit | np.uint64(q)


def _round_pack(sign, sig, exp, fmt: FloatFormat, mode: str, ftz: bool, sticky=None):
    """Round sign * (sig + sticky) * 2**exp into ``fmt``.

    ``sig`` must be a non-negative int64 below 2**62; ``sticky`` flags
    nonzero value below the last place of ``sig``.  Results that are zero
    (or flushed) keep the sign.
    """
    sig, exp, sign = np.broadcast_arrays(
        np.asarray(sig, dtype=np.int64), np.asarray(exp, dtype=np.int64),
        np.asarray(sign, dtype=np.int64),
    )
    shape = sig.shape
    sig = np.ascontiguousarray(sig).reshape(-1)
    exp = np.ascontiguousarray(exp).reshape(-1)
    sign = np.ascontiguousarray(sign).reshape(-1)
    if sticky is None:
        sticky = np.zeros(sig.shape, dtype=np.bool_)
    else:
        sticky = np.ascontiguousarray(np.broadcast_to(sticky, shape)).reshape(-1)
    big = fmt.inf_bits if fmt.supports_nan_inf else fmt.max_finite_bits
    out = np.empty(sig.shape, dtype=np.uint64)
    _round_pack_kernel(
        sign, sig, exp, sticky, fmt.fraction_bits, fmt.bias, fmt.emin, fmt.emax,
        fmt.total_bits - 1, big, mode == RNE, ftz, out,
    )
    return out.reshape(shape)


# --------------------------------------------------------------------------
# values


@dataclass(frozen=True)
class ModeledValue:
    """One encoded value together with its format."""

    bits: int
    format: FloatFormat

    @property
    def sign(self) -> int:
        return (self.bits >> (self.format.total_bits - 1)) & 1

    @property
    def biased_exponent(self) -> int:
        return (self.bits >> self.format.fraction_bits) & self.format.exp_mask

    @property
    def fraction(self) -> int:
        return self.bits & ((1 << self.format.fraction_bits) - 1)

    @property
    def is_nan(self) -> bool:
        fmt = self.format
        return fmt.supports_nan_inf and self.biased_exponent == fmt.exp_mask and self.fraction != 0

    @property
    def is_snan(self) -> bool:
        return self.is_nan and not (self.fraction >> (self.format.fraction_bits - 1)) & 1

    @property
    def is_inf(self) -> bool:
        fmt = self.format
        return fmt.supports_nan_inf and self.biased_exponent == fmt.exp_mask and self.fraction == 0

    @property
    def is_subnormal(self) -> bool:
        return self.biased_exponent == 0 and self.fraction != 0

    @property
    def exponent(self) -> int:
        """Unbiased exponent of the leading significand bit position."""
        fmt = self.format
        return fmt.emin if self.biased_exponent == 0 else self.biased_exponent - fmt.bias

    @property
    def mantissa(self) -> int:
        """Integer significand including the hidden bit."""
        if self.biased_exponent == 0:
            return self.fraction
        return self.fraction | (1 << self.format.fraction_bits)

    @property
    def value(self) -> float:
        return float(to_float(np.array([self.bits], dtype=np.uint64), self.format)[0])

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        width = (self.format.total_bits + 3) // 4
        return f"ModeledValue(0x{self.bits:0{width}x}, {self.value!r})"


Operand = Union[ModeledValue, np.ndarray]


def _unwrap(*vals):
    scalar = isinstance(vals[0], ModeledValue)
    arrs = []
    for v in vals:
        if isinstance(v, ModeledValue):
            arrs.append(np.array([v.bits], dtype=np.uint64))
        else:
            arrs.append(np.atleast_1d(np.asarray(v, dtype=np.uint64)))
    if len(arrs) > 1:
        arrs = [np.ascontiguousarray(a) for a in np.broadcast_arrays(*arrs)]
    return scalar, arrs


def _wrap(scalar: bool, bits: np.ndarray, fmt: FloatFormat):
    if scalar:
        return ModeledValue(int(bits.reshape(-1)[0]), fmt)
    return bits


def to_float(bits, fmt: FloatFormat) -> np.ndarray:
    """Decode bit patterns to binary64 (exact for formats up to binary64)."""
    bits = np.asarray(bits, dtype=np.uint64)
    if fmt == IEEE_BINARY64:
        return bits.view(np.float64).copy()
    sign, sig, exp, isnan, isinf, _ = _decode(bits, fmt, False)
    v = np.ldexp(sig.astype(np.float64), exp.astype(np.int32))
    v = np.where(isinf, np.inf, v)
    v = np.where(isnan, np.nan, v)
    return np.where(sign == 1, -v, v)


def quantize(x, profile: UnitProfile):
    """Convert binary64 input(s) into the profile's format.

    Returns a :class:`ModeledValue` for scalar input and a ``uint64`` bit
    array otherwise.
    """
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    fmt = profile.format
    raw = xa.view(np.uint64)
    if fmt == IEEE_BINARY64:
        out = raw.copy()
        return _wrap(scalar, out, fmt)
    sign = (raw >> np.uint64(63)).astype(np.int64)
    be = ((raw >> np.uint64(52)) & np.uint64(0x7FF)).astype(np.int64)
    frac = (raw & np.uint64((1 << 52) - 1)).astype(np.int64)
    sig = np.where(be == 0, frac, frac | (1 << 52))
    exp = np.where(be == 0, -1074, be - 1075)
    special = be == 0x7FF
    sig = np.where(special, 0, sig)
    out = _round_pack(sign, sig, exp, fmt, profile.rounding, profile.flush_subnormals_to_zero)
    if special.any():
        isnan = special & (frac != 0)
        isinf = special & (frac == 0)
        quiet = (frac >> 51) & 1
        if fmt.supports_nan_inf:
            nan_bits = np.where(
                (quiet == 0) & (not profile.snan_to_qnan), fmt.snan_bits, fmt.qnan_bits
            ).astype(np.uint64)
            inf_bits = _pack(sign, 0, 0, fmt) | np.uint64(fmt.inf_bits)
        else:
            nan_bits = np.zeros_like(out)
            inf_bits = _pack(sign, 0, 0, fmt) | np.uint64(fmt.max_finite_bits)
        out = np.where(isnan, nan_bits, out)
        out = np.where(isinf, inf_bits, out)
    return _wrap(scalar, out, fmt)


# --------------------------------------------------------------------------
# operators


@numba.njit(cache=True, nogil=True, inline="always")
def _round1(sign, m, e, F, bias, emin, emax, sign_shift, big, rne, ftz):
    """Scalar rounding of sign * m * 2**e; see :func:`_round_pack`."""
    sbit = sign << sign_shift
    if m == 0:
        return sbit
    nbits = 0
    t = m
    while t:
        t >>= 1
        nbits += 1
    lsb = max(e + nbits - 1 - F, emin - F)
    shift = lsb - e
    if shift <= 0:
        q = m << (-shift)
    elif shift >= 63:
        q = np.int64(0)
    else:
        q = m >> shift
        if rne:
            lost = m & ((np.int64(1) << shift) - 1)
            half = np.int64(1) << (shift - 1)
            if lost > half or (lost == half and (q & 1) == 1):
                q += 1
    if q >> (F + 1):
        q >>= 1
        lsb += 1
    hidden = np.int64(1) << F
    if q >= hidden:
        if lsb + F > emax:
            return sbit | big
        return sbit | ((lsb + F + bias) << F) | (q - hidden)
    if ftz or q == 0:
        return sbit
    return sbit | q


@numba.njit(cache=True, nogil=True)
def _add_kernel(a, b, F, bias, emin, emax, sign_shift, big, rne, ftz, nan_inf,
                exact, k_sub, k_add, qnan, out):
    emask = (np.int64(1) << (sign_shift - F)) - 1
    fmask = (np.int64(1) << F) - 1
    mag = (np.int64(1) << sign_shift) - 1
    hidden = np.int64(1) << F
    X = F + 4
    for i in range(a.shape[0]):
        x = a[i]
        y = b[i]
        sx = (x >> sign_shift) & 1
        sy = (y >> sign_shift) & 1
        bx = (x >> F) & emask
        by = (y >> F) & emask
        if nan_inf and (bx == emask or by == emask):
            nan_x = bx == emask and (x & fmask) != 0
            nan_y = by == emask and (y & fmask) != 0
            inf_x = bx == emask and (x & fmask) == 0
            inf_y = by == emask and (y & fmask) == 0
            if nan_x or nan_y or (inf_x and inf_y and sx != sy):
                out[i] = qnan
            elif inf_x:
                out[i] = x
            else:
                out[i] = y
            continue
        mx = (x & fmask) | hidden if bx else (np.int64(0) if ftz else x & fmask)
        my = (y & fmask) | hidden if by else (np.int64(0) if ftz else y & fmask)
        if mx == 0 and my == 0:
            out[i] = (sx & sy) << sign_shift
            continue
        if my == 0:
            out[i] = x
            continue
        if mx == 0:
            out[i] = y
            continue
        ex = (bx if bx else 1) - bias - F
        ey = (by if by else 1) - bias - F
        if (y & mag) > (x & mag):
            sg, G, eg, S, es = sy, my, ey, mx, ex
        else:
            sg, G, eg, S, es = sx, mx, ex, my, ey
        dd = eg - es
        sub = sx != sy
        if exact:
            Gx = G << X
            if dd <= X:
                Sx = S << (X - dd)
            else:
                r = dd - X
                if r >= 63:
                    Sx = np.int64(1)
                else:
                    Sx = (S >> r) | (np.int64(1) if (S & ((np.int64(1) << r) - 1)) != 0 else np.int64(0))
            er = eg - X
        else:
            kk = k_sub if sub else k_add
            Gx = G << kk
            if dd <= kk:
                Sx = S << (kk - dd)
            elif dd - kk >= 63:
                Sx = np.int64(0)
            else:
                Sx = S >> (dd - kk)
            er = eg - kk
        R = Gx - Sx if sub else Gx + Sx
        rs = sg if R != 0 else np.int64(0)
        out[i] = _round1(rs, R, er, F, bias, emin, emax, sign_shift, big, rne, ftz)


def _arith_params(p: UnitProfile):
    fmt = p.format
    _check_arith(fmt)
    big = fmt.inf_bits if fmt.supports_nan_inf else fmt.max_finite_bits
    return (fmt.fraction_bits, fmt.bias, fmt.emin, fmt.emax, fmt.total_bits - 1, big,
            p.rounding == RNE, p.flush_subnormals_to_zero)


def _as_i64(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.uint64).view(np.int64).reshape(-1)


def _add_bits(a: np.ndarray, b: np.ndarray, p: UnitProfile) -> np.ndarray:
    base = _arith_params(p)
    guard = int(p.sub_guard_bit)
    extra = int(p.extra_mantissa_bit)
    k_sub = extra + guard
    k_add = extra + (guard if p.guard_all_adds else 0)
    out = np.empty(a.size, dtype=np.int64)
    _add_kernel(_as_i64(a), _as_i64(b), *base, p.format.supports_nan_inf,
                p.exact_alignment, k_sub, k_add, p.format.qnan_bits, out)
    return out.view(np.uint64).reshape(a.shape)


def _negate_bits(a: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    return a ^ np.uint64(fmt.sign_mask)


@numba.njit(cache=True, nogil=True)
def _mul_kernel(a, b, F, bias, emin, emax, sign_shift, big, rne, ftz, nan_inf,
                cut, K, qnan, inf_bits, out):
    emask = (np.int64(1) << (sign_shift - F)) - 1
    fmask = (np.int64(1) << F) - 1
    hidden = np.int64(1) << F
    for i in range(a.shape[0]):
        x = a[i]
        y = b[i]
        sign = ((x >> sign_shift) ^ (y >> sign_shift)) & 1
        bx = (x >> F) & emask
        by = (y >> F) & emask
        mx = (x & fmask) | hidden if bx else (np.int64(0) if ftz else x & fmask)
        my = (y & fmask) | hidden if by else (np.int64(0) if ftz else y & fmask)
        if nan_inf and (bx == emask or by == emask):
            nan_x = bx == emask and (x & fmask) != 0
            nan_y = by == emask and (y & fmask) != 0
            zero_x = bx != emask and mx == 0
            zero_y = by != emask and my == 0
            if nan_x or nan_y or zero_x or zero_y:
                out[i] = qnan
            else:
                out[i] = (sign << sign_shift) | inf_bits
            continue
        if mx == 0 or my == 0:
            out[i] = sign << sign_shift
            continue
        P = mx * my
        if cut > 0:
            dropped = np.int64(0)
            for q in range(cut):
                if (mx >> q) & 1:
                    dropped += (my & ((np.int64(1) << (cut - q)) - 1)) << q
            P -= dropped
        if P > 0:
            P += K
        ex = (bx if bx else 1) - bias - F
        ey = (by if by else 1) - bias - F
        out[i] = _round1(sign, P, ex + ey, F, bias, emin, emax, sign_shift, big, rne, ftz)


def _mul_bits(a: np.ndarray, b: np.ndarray, p: UnitProfile) -> np.ndarray:
    fmt = p.format
    base = _arith_params(p)
    cut = max(0, fmt.fraction_bits - p.mul_extra_rows)
    out = np.empty(a.size, dtype=np.int64)
    _mul_kernel(_as_i64(a), _as_i64(b), *base, fmt.supports_nan_inf, cut, p.mul_constant,
                fmt.qnan_bits, fmt.inf_bits, out)
    return out.view(np.uint64).reshape(a.shape)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _special_bits(a: np.ndarray, p: UnitProfile, fn, salt: int) -> np.ndarray:
    fmt = p.format
    _check_arith(fmt)
    x = to_float(a, fmt)
    if p.flush_subnormals_to_zero:
        _, _, _, _, _, zero = _decode(a, fmt, True)
        x = np.where(zero, np.copysign(0.0, x), x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        y = fn(x)
    if p.special_rel_error > 0:
        nearest = to_float(quantize(y, UnitProfile("_rne", fmt)), fmt)
        inexact = np.isfinite(y) & (nearest != y)
        h = _splitmix64(a ^ np.uint64(salt)) >> np.uint64(11)
        u = h.astype(np.float64) * 2.0**-52 - 1.0
        y = np.where(inexact, y * (1.0 + p.special_rel_error * u), y)
    return quantize(np.asarray(y, dtype=np.float64), p.replace(snan_to_qnan=True))


def fadd(a: Operand, b: Operand, profile: UnitProfile):
    scalar, (x, y) = _unwrap(a, b)
    return _wrap(scalar, _add_bits(x, y, profile), profile.format)


def fsub(a: Operand, b: Operand, profile: UnitProfile):
    scalar, (x, y) = _unwrap(a, b)
    return _wrap(scalar, _add_bits(x, _negate_bits(y, profile.format), profile), profile.format)


def fneg(a: Operand, profile: UnitProfile):
    scalar, (x,) = _unwrap(a)
    return _wrap(scalar, _negate_bits(x, profile.format), profile.format)


def fmul(a: Operand, b: Operand, profile: UnitProfile):
    scalar, (x, y) = _unwrap(a, b)
    return _wrap(scalar, _mul_bits(x, y, profile), profile.format)


def fmad(a: Operand, b: Operand, c: Operand, profile: UnitProfile):
    """a * b + c with the product rounded before the addition."""
    scalar, (x, y, z) = _unwrap(a, b, c)
    return _wrap(scalar, _add_bits(_mul_bits(x, y, profile), z, profile), profile.format)


def ex2(a: Operand, profile: UnitProfile):
    scalar, (x,) = _unwrap(a)
    return _wrap(scalar, _special_bits(x, profile, np.exp2, 0x45583200), profile.format)


def rcp(a: Operand, profile: UnitProfile):
    scalar, (x,) = _unwrap(a)
    return _wrap(scalar, _special_bits(x, profile, lambda v: 1.0 / v, 0x52435000), profile.format)


def ulp_error(approx: Operand, exact, fmt: FloatFormat | None = None):
    """Signed error of ``approx`` in units of the last place of ``exact``.

    The ulp is that of ``exact``'s binade in the approximation's format.
    Non-numeric cases (NaN/Inf on either side, zero exact) give NaN.
    """
    if isinstance(approx, ModeledValue):
        fmt = approx.format
        v = np.array([approx.value])
        scalar = True
    else:
        if fmt is None:
            raise TypeError("fmt is required for bit arrays")
        v = to_float(approx, fmt)
        scalar = False
    e = np.asarray(exact, dtype=np.float64)
    _, k = np.frexp(e)
    binade = np.maximum(k.astype(np.int64) - 1, fmt.emin)
    ulp = np.ldexp(1.0, (binade - fmt.fraction_bits).astype(np.int32))
    with np.errstate(invalid="ignore"):
        err = (v - e) / ulp
    bad = ~np.isfinite(v) | ~np.isfinite(e) | (e == 0)
    err = np.where(bad, np.nan, err)
    return float(err.reshape(-1)[0]) if scalar else err


# --------------------------------------------------------------------------
# presets and config files


def _build_presets() -> dict[str, UnitProfile]:
    ieee = UnitProfile(name="IEEE-RN")
    ati_vertex = UnitProfile(
        name="ATI-Vertex",
        format=ATI_FP32,
        add_truncates=True,
        exact_alignment=True,
        mul_extra_rows=23,
        flush_subnormals_to_zero=True,
        snan_to_qnan=True,
        special_rel_error=2.0**-21,
    )
    ati_pixel_first = UnitProfile(
        name="ATI-Pixel",
        format=ATI_FP32,
        add_truncates=True,
        sub_guard_bit=True,
        exact_alignment=False,
        mul_compensation=Fraction(1, 2**35),
        mul_extra_rows=11,
        flush_subnormals_to_zero=True,
        snan_to_qnan=True,
        special_rel_error=2.0**-21,
    )
    ati_pixel = ati_pixel_first.replace(
        dependent_unit=ati_pixel_first.replace(name="ATI-Pixel/2", extra_mantissa_bit=True)
    )
    nv_pixel = UnitProfile(
        name="Nvidia-Pixel",
        format=NVIDIA_FP32,
        add_truncates=True,
        sub_guard_bit=True,
        extra_mantissa_bit=True,
        exact_alignment=False,
        mul_compensation=Fraction(41, 2**30),
        mul_extra_rows=6,
        flush_subnormals_to_zero=True,
        snan_to_qnan=False,
        special_rel_error=2.0**-21,
    )
    nv_vertex = UnitProfile(
        name="Nvidia-Vertex",
        format=NVIDIA_FP32,
        add_truncates=True,
        sub_guard_bit=True,
        exact_alignment=False,
        mul_compensation=Fraction(15, 2**28),
        mul_extra_rows=4,
        flush_subnormals_to_zero=True,
        snan_to_qnan=False,
        special_rel_error=2.0**-21,
    )
    return {p.name: p for p in (ati_pixel, ati_vertex, nv_pixel, nv_vertex, ieee)}


PRESETS: dict[str, UnitProfile] = _build_presets()
GPU_PRESETS = ("ATI-Pixel", "ATI-Vertex", "Nvidia-Pixel", "Nvidia-Vertex")


def get_profile(name_or_path: str | Path) -> UnitProfile:
    """Look up a preset by (case-insensitive) name, or load a config file."""
    key = str(name_or_path)
    for name, prof in PRESETS.items():
        if name.lower() == key.lower():
            return prof
    path = Path(key)
    if path.exists():
        return load_profile(path)
    raise KeyError(f"unknown profile {key!r}; presets: {', '.join(PRESETS)}")


_BOOL_FIELDS = (
    "add_truncates",
    "sub_guard_bit",
    "extra_mantissa_bit",
    "exact_alignment",
    "flush_subnormals_to_zero",
    "snan_to_qnan",
    "guard_all_adds",
)
_RATIONAL_RE = re.compile(r"^\s*(\d+)\s*(?:\*\s*2\s*\^\s*(-?\d+))?\s*$")


def _parse_rational(text: str) -> Fraction:
    m = _RATIONAL_RE.match(text)
    if not m:
        raise ValueError(f"expected 'k*2^-n', got {text!r}")
    k = int(m.group(1))
    n = int(m.group(2) or 0)
    return Fraction(k) * Fraction(2) ** n


def _format_rational(q: Fraction) -> str:
    if q == 0:
        return "0"
    num, den = q.numerator, q.denominator
    if den & (den - 1):
        raise ValueError(f"{q} is not a dyadic rational")
    return f"{num}*2^-{den.bit_length() - 1}"


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_format(text: str) -> FloatFormat:
    t = text.strip()
    if t.lower() in FORMATS:
        return FORMATS[t.lower()]
    parts = [int(x) for x in t.split(",")]
    if len(parts) == 4:
        return FloatFormat(*parts)
    if len(parts) == 5:
        return FloatFormat(*parts[:4], bool(parts[4]))
    raise ValueError(f"bad format {text!r}")


def _apply(fields_: dict, key: str, value: str, where: str):
    if key == "name":
        fields_["name"] = value.strip()
    elif key == "format":
        fields_["format"] = _parse_format(value)
    elif key == "supports_nan_inf":
        fields_["_nan_inf"] = _parse_bool(value)
    elif key in _BOOL_FIELDS:
        fields_[key] = _parse_bool(value)
    elif key == "mul_compensation":
        fields_[key] = _parse_rational(value)
    elif key == "mul_extra_rows":
        fields_[key] = int(value)
    elif key == "special_rel_error":
        v = value.strip()
        fields_[key] = float(_parse_rational(v)) if "^" in v else float(v)
    else:
        raise ValueError(f"{where}: unknown key {key!r}")


def _finish(fields_: dict) -> dict:
    nan_inf = fields_.pop("_nan_inf", None)
    if nan_inf is not None:
        fmt = fields_.get("format", IEEE_BINARY32)
        fields_["format"] = dataclasses.replace(fmt, supports_nan_inf=nan_inf)
    return fields_


def parse_profile(text: str, source: str = "<string>") -> UnitProfile:
    """Parse a key/value profile description.

    One ``key = value`` per line, ``#`` starts a comment.  Keys are the
    :class:`UnitProfile` field names; ``dependent.<key>`` overrides a field
    for the downstream unit.  Rationals are written ``k*2^-n``.
    """
    main: dict = {}
    dep: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        where = f"{source}:{lineno}"
        if key.startswith("dependent."):
            _apply(dep, key[len("dependent."):], value, where)
        else:
            _apply(main, key, value, where)
    if "name" not in main:
        raise ValueError(f"{source}: missing 'name'")
    prof = UnitProfile(**_finish(main))
    if dep:
        dep_fields = _finish(dep)
        dep_fields.setdefault("name", prof.name + "/2")
        prof = prof.replace(dependent_unit=prof.replace(**dep_fields))
    return prof


def load_profile(path: str | Path) -> UnitProfile:
    path = Path(path)
    return parse_profile(path.read_text(encoding="utf-8"), str(path))


def _profile_lines(p: UnitProfile, prefix: str = "") -> list[str]:
    lines = [
        f"{prefix}name = {p.name}",
        f"{prefix}format = {p.format.spec()}",
        f"{prefix}supports_nan_inf = {str(p.format.supports_nan_inf).lower()}",
    ]
    for key in _BOOL_FIELDS:
        lines.append(f"{prefix}{key} = {str(getattr(p, key)).lower()}")
    lines.append(f"{prefix}mul_compensation = {_format_rational(p.mul_compensation)}")
    lines.append(f"{prefix}mul_extra_rows = {p.mul_extra_rows}")
    lines.append(f"{prefix}special_rel_error = {p.special_rel_error!r}")
    return lines


def dump_profile(p: UnitProfile) -> str:
    lines = _profile_lines(p)
    if p.dependent_unit is not None:
        lines += _profile_lines(p.dependent_unit, "dependent.")
    return "\n".join(lines) + "\n"
