"""Compiled one-element-at-a-time kernels (the ``scalar`` backend).

These mirror the vectorized code in :mod:`lblrad.spectra` and
:mod:`lblrad.transfer` as plain loops, the way a sequential CPU program
would evaluate them.  They are deterministic but not bit-identical to the
vectorized path (different ``exp`` implementations).
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .spectra import POINTS_PER_LINE, LineDatabase, SpectralField, _per_line_u

__all__ = ["build_tau_scalar", "transfer_scalar", "planck_array"]


@numba.njit(cache=True, nogil=True, inline="always")
def _planck1(nu, T, c2, hc2):
    return hc2 * (nu * nu * nu) / math.expm1(c2 * nu / T)


@numba.njit(cache=True, nogil=True)
def _planck_loop(nu, T, c2, hc2, out):
    for j in range(nu.shape[0]):
        out[j] = _planck1(nu[j], T[j], c2, hc2)


def planck_array(nu: np.ndarray, T: np.ndarray, c2: float, hc2: float) -> np.ndarray:
    """Planck radiance for equal-length 1-D arrays, evaluated like the scalar loop."""
    out = np.empty(nu.shape[0], dtype=np.float64)
    _planck_loop(nu, T, float(c2), float(hc2), out)
    return out


@numba.njit(cache=True, nogil=True)
def _tau_loop(nu0, s_ref, e_lower, gamma, m, u, T, t_ref, c2, start, step, n, out):
    half = POINTS_PER_LINE // 2
    last = start + step * (n - 1)
    skipped = 0
    inv = 1.0 / t_ref - 1.0 / T
    for k in range(nu0.shape[0]):
        c = nu0[k]
        if c < start or c > last:
            skipped += 1
            continue
        if u[k] == 0.0:
            continue
        ratio = (t_ref / T) ** m[k]
        ratio *= math.exp(c2 * e_lower[k] * inv)
        ratio *= math.expm1(-c2 * c / T) / math.expm1(-c2 * c / t_ref)
        amp = u[k] * (s_ref[k] * ratio)
        g = gamma[k]
        j0 = int(math.floor((c - start) / step))
        for j in range(j0 - half + 1, j0 + half + 1):
            if j < 0 or j >= n:
                continue
            d = (start + step * j) - c
            out[j] += amp * ((g / math.pi) / (d * d + g * g))
    return skipped


def build_tau_scalar(grid: SpectralField, db: LineDatabase, T: float, u, c2: float) -> SpectralField:
    if not T > 0:
        raise ValueError("temperature must be > 0")
    out = np.zeros(grid.n, dtype=np.float64)
    u_line = _per_line_u(db, u)
    skipped = _tau_loop(db.nu, db.s_ref, db.e_lower, db.halfwidth, db.exponent_per_line(),
                        u_line, float(T), float(db.t_ref), float(c2), float(grid.start),
                        float(grid.step), grid.n, out)
    return SpectralField(grid.start, grid.step, out, int(skipped))


@numba.njit(cache=True, nogil=True)
def _transfer_loop(i_in, tau, start, step, l, T, c2, hc2, out):
    for j in range(i_in.shape[0]):
        nu = start + step * j
        x = tau[j] * l
        b = _planck1(nu, T, c2, hc2)
        t = math.exp(-x)
        v = i_in[j] * t + b * (-math.expm1(-x))
        lo = min(i_in[j], b)
        hi = max(i_in[j], b)
        out[j] = min(max(v, lo), hi)


def transfer_scalar(i_in: SpectralField, tau: SpectralField, l: float, T: float,
                    c2: float, hc2: float) -> SpectralField:
    out = np.empty(i_in.n, dtype=np.float64)
    _transfer_loop(np.asarray(i_in.values, dtype=np.float64), np.asarray(tau.values, dtype=np.float64),
                   float(i_in.start), float(i_in.step), float(l), float(T), float(c2), float(hc2), out)
    return i_in.with_values(out)
