"""Slow reference implementations used as test oracles.

Everything here works on Python integers and ``Fraction`` values, one
operand pair at a time, and is written from the behavioural description
of each unit rather than from the vectorized kernels.
"""

from __future__ import annotations

from fractions import Fraction

import mpmath

from lblrad.fpmodel import RNE, FloatFormat, UnitProfile

C2 = mpmath.mpf("1.438776877")
H = mpmath.mpf("6.62607015e-34")
C = mpmath.mpf("2.99792458e10")


def decode(bits: int, fmt: FloatFormat, daz: bool = False):
    """Return (sign, kind, value) with kind in {"num", "inf", "nan"}; value is |x|."""
    F, E = fmt.fraction_bits, fmt.exponent_bits
    sign = (bits >> (F + E)) & 1
    be = (bits >> F) & ((1 << E) - 1)
    frac = bits & ((1 << F) - 1)
    if fmt.supports_nan_inf and be == (1 << E) - 1:
        return sign, ("nan" if frac else "inf"), None
    if be == 0:
        if daz:
            return sign, "num", Fraction(0)
        return sign, "num", Fraction(frac) * Fraction(2) ** (fmt.emin - F)
    return sign, "num", Fraction(frac | (1 << F)) * Fraction(2) ** (be - fmt.bias - F)


def lsb_exponent(bits: int, fmt: FloatFormat) -> int:
    be = (bits >> fmt.fraction_bits) & fmt.exp_mask
    return (be if be else 1) - fmt.bias - fmt.fraction_bits


def _floor_log2(v: Fraction) -> int:
    e = v.numerator.bit_length() - v.denominator.bit_length()
    if Fraction(2) ** e > v:
        e -= 1
    elif Fraction(2) ** (e + 1) <= v:
        e += 1
    return e


def round_to(v: Fraction, sign: int, fmt: FloatFormat, mode: str, ftz: bool) -> int:
    """Encode sign * v (v >= 0) with round-to-zero or to-nearest-even.

    Overflow goes to Inf (or the largest finite value for formats without
    Inf) in both modes; this is how the modeled units behave.
    """
    F = fmt.fraction_bits
    sbit = sign << (fmt.total_bits - 1)
    if v == 0:
        return sbit
    lsb = max(_floor_log2(v) - F, fmt.emin - F)
    q = v / Fraction(2) ** lsb
    n = q.numerator // q.denominator
    rem = q - n
    if mode == RNE and (rem > Fraction(1, 2) or (rem == Fraction(1, 2) and n % 2 == 1)):
        n += 1
    if n >> (F + 1):
        n >>= 1
        lsb += 1
    if n >= 1 << F:
        if lsb + F > fmt.emax:
            return sbit | (fmt.inf_bits if fmt.supports_nan_inf else fmt.max_finite_bits)
        return sbit | ((lsb + F + fmt.bias) << F) | (n - (1 << F))
    if ftz or n == 0:
        return sbit
    return sbit | n


def add(x: int, y: int, p: UnitProfile) -> int:
    fmt = p.format
    ftz = p.flush_subnormals_to_zero
    sx, kx, vx = decode(x, fmt, ftz)
    sy, ky, vy = decode(y, fmt, ftz)
    if kx == "nan" or ky == "nan" or (kx == ky == "inf" and sx != sy):
        return fmt.qnan_bits
    if kx == "inf":
        return x
    if ky == "inf":
        return y
    if vx == 0 and vy == 0:
        return (sx & sy) << (fmt.total_bits - 1)
    if vy == 0:
        return x
    if vx == 0:
        return y
    # the operand of larger magnitude keeps its position, the other is shifted
    if vy > vx:
        (sg, vg, g), (ss, vs) = (sy, vy, y), (sx, vx)
    else:
        (sg, vg, g), (ss, vs) = (sx, vx, x), (sy, vy)
    sub = sx != sy
    if not p.exact_alignment:
        k = int(p.extra_mantissa_bit) + (int(p.sub_guard_bit) if (sub or p.guard_all_adds) else 0)
        step = Fraction(2) ** (lsb_exponent(g, fmt) - k)
        vs = (vs / step).__floor__() * step
    r = vg - vs if sub else vg + vs
    return round_to(r, sg if r != 0 else 0, fmt, p.rounding, ftz)


def mul(x: int, y: int, p: UnitProfile) -> int:
    fmt = p.format
    F = fmt.fraction_bits
    ftz = p.flush_subnormals_to_zero
    sx, kx, vx = decode(x, fmt, ftz)
    sy, ky, vy = decode(y, fmt, ftz)
    sign = sx ^ sy
    if kx == "nan" or ky == "nan":
        return fmt.qnan_bits
    if kx == "inf" or ky == "inf":
        if (kx == "num" and vx == 0) or (ky == "num" and vy == 0):
            return fmt.qnan_bits
        return (sign << (fmt.total_bits - 1)) | fmt.inf_bits
    if vx == 0 or vy == 0:
        return sign << (fmt.total_bits - 1)
    ex, ey = lsb_exponent(x, fmt), lsb_exponent(y, fmt)
    mx = int(vx / Fraction(2) ** ex)
    my = int(vy / Fraction(2) ** ey)
    # partial-product array: row q is mx's bit q times my, columns below cut are absent
    cut = max(0, F - p.mul_extra_rows)
    prod = 0
    for q in range(F + 1):
        if (mx >> q) & 1:
            for r in range(F + 1):
                if (my >> r) & 1 and q + r >= cut:
                    prod += 1 << (q + r)
    if prod:
        prod += int(p.mul_compensation * (1 << (2 * F + 1)))
    return round_to(Fraction(prod) * Fraction(2) ** (ex + ey), sign, fmt, p.rounding, ftz)


# ---------------------------------------------------------------------------
# physics at high precision


def intensity_ratio(nu0, e_lower, m, T, t_ref, dps=40):
    with mpmath.workdps(dps):
        nu0, e, m, T, t_ref = (mpmath.mpf(v) for v in (nu0, e_lower, m, T, t_ref))
        q = (t_ref / T) ** m
        boltz = mpmath.exp(C2 * e * (1 / t_ref - 1 / T))
        stim = (1 - mpmath.exp(-C2 * nu0 / T)) / (1 - mpmath.exp(-C2 * nu0 / t_ref))
        return q * boltz * stim


def planck(nu, T, dps=40):
    with mpmath.workdps(dps):
        nu, T = mpmath.mpf(nu), mpmath.mpf(T)
        return 2 * H * C**2 * nu**3 / mpmath.expm1(C2 * nu / T)


def transfer(i_in, tau, nu, l, T, dps=40):
    with mpmath.workdps(dps):
        b = planck(nu, T, dps)
        x = mpmath.mpf(tau) * mpmath.mpf(l)
        out = mpmath.mpf(i_in) * mpmath.exp(-x) + b * -mpmath.expm1(-x)
        lo, hi = min(mpmath.mpf(i_in), b), max(mpmath.mpf(i_in), b)
        return min(max(out, lo), hi)
