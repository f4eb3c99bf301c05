"""Radiative update along one homogeneous segment and power reduction.

``transfer_step`` is the binary64 reference.  ``run_kernel`` executes the
fragment program below, which evaluates the same update with base-2
exponentials, under the arithmetic of a :class:`~lblrad.fpmodel.UnitProfile`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import fpmodel as fp
from .scalar import planck_array
from .shader import ModelArith, NativeArith, Program, ProgramError, assemble, execute
from .spectra import CONSTANTS, PhysicalConstants, SpectralField

__all__ = [
    "TRANSFER_PROGRAM",
    "KernelProgram",
    "TransferInputs",
    "planck",
    "transfer_step",
    "run_kernel",
    "tree_sum",
    "reduce_power",
    "default_program",
]

TRANSFER_SOURCE = """\
!!ARBfp1.0
# per-element inputs
TEX nu, nu;
TEX i_in, i_in;
# intensity ratios S(T)/S(Tref) of the two gases
TEX sratio_g1, sratio_g1;
TEX sratio_g2, sratio_g2;
# reference deposits u_g S(Tref) f(nu - nu0)
TEX tref_g1, tref_g1;
TEX tref_g2, tref_g2;

MUL tau, sratio_g1, tref_g1;
MAD tau, sratio_g2, tref_g2, tau;

# ll = -l / ln 2
MUL tau, tau, ll;

EX2 exp_tau_l.x, tau.x;
EX2 exp_tau_l.y, tau.y;
EX2 exp_tau_l.z, tau.z;
EX2 exp_tau_l.w, tau.w;

# c2T = c2 / (T ln 2)
MUL exponent, c2T, nu;

EX2 den.x, exponent.x;
EX2 den.y, exponent.y;
EX2 den.z, exponent.z;
EX2 den.w, exponent.w;

SUB den, den, {1, 1, 1, 1};

RCP inv.x, den.x;
RCP inv.y, den.y;
RCP inv.z, den.z;
RCP inv.w, den.w;

MUL nu3, nu, nu;
MUL nu3, nu3, nu;
# hc2 is the Planck prefactor
MUL nu3, nu3, hc2;

MUL factor1, inv, nu3;
SUB factor2, one, exp_tau_l;
MUL term, i_in, exp_tau_l;

MAD result, factor1, factor2, term;
OUT result;
END
"""

KernelProgram = Program
TRANSFER_PROGRAM: Program = assemble(TRANSFER_SOURCE)


def default_program() -> Program:
    return TRANSFER_PROGRAM


@dataclass(frozen=True, eq=False)
class TransferInputs:
    i_in: SpectralField
    tau: SpectralField
    l: float
    T: float

    def __post_init__(self):
        if not self.i_in.same_grid(self.tau):
            raise ValueError("I_in and tau live on different grids")
        if not self.l >= 0:
            raise ValueError("path length must be >= 0")
        if not self.T > 0:
            raise ValueError("temperature must be > 0")
        if np.any(np.asarray(self.i_in.values) < 0):
            raise ValueError("I_in must be >= 0")


def planck(nu, T, k: PhysicalConstants = CONSTANTS):
    """Blackbody radiance per wavenumber, 2hc^2 nu^3 / (exp(c2 nu / T) - 1)."""
    nu = np.asarray(nu, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if np.any(nu <= 0) or np.any(T <= 0):
        raise ValueError("planck needs nu > 0 and T > 0")
    # one compiled routine for every caller, so an isothermal boundary equals
    # the source term of either backend bit for bit
    nu_b, T_b = np.broadcast_arrays(nu, T)
    flat = planck_array(np.ascontiguousarray(nu_b).reshape(-1), np.ascontiguousarray(T_b).reshape(-1),
                        k.c2, k.hc2)
    out = flat.reshape(nu_b.shape)
    return out if out.ndim else float(out)


def transfer_step_values(i_in, tau, nu, l: float, T: float, k: PhysicalConstants = CONSTANTS):
    i_in = np.asarray(i_in, dtype=np.float64)
    x = np.asarray(tau, dtype=np.float64) * l
    b = planck(nu, T, k)
    a = -np.expm1(-x)  # absorbed fraction 1 - exp(-tau l)
    t = np.exp(-x)
    out = i_in * t + b * a
    # rounding must not push the result outside [min, max] of the two ends
    return np.clip(out, np.minimum(i_in, b), np.maximum(i_in, b))


def transfer_step(inp: TransferInputs, k: PhysicalConstants = CONSTANTS,
                  threads: int = 1) -> SpectralField:
    """Binary64 update of one segment; elementwise, so ``threads`` only splits the work."""
    nu = inp.i_in.nu
    threads = max(1, int(threads))
    if threads == 1 or nu.size < 4096:
        vals = transfer_step_values(inp.i_in.values, inp.tau.values, nu, inp.l, inp.T, k)
        return inp.i_in.with_values(vals)
    a = np.asarray(inp.i_in.values, dtype=np.float64)
    t = np.asarray(inp.tau.values, dtype=np.float64)
    vals = np.empty(nu.size)
    edges = np.linspace(0, nu.size, threads + 1).astype(np.int64)

    def block(b):
        lo, hi = b
        vals[lo:hi] = transfer_step_values(a[lo:hi], t[lo:hi], nu[lo:hi], inp.l, inp.T, k)

    with ThreadPoolExecutor(threads) as ex:
        list(ex.map(block, zip(edges[:-1], edges[1:])))
    return inp.i_in.with_values(vals)


def kernel_uniforms(l: float, T: float, k: PhysicalConstants = CONSTANTS) -> dict:
    return {"ll": -l / math.log(2.0), "c2T": k.c2 / (T * math.log(2.0)), "hc2": k.hc2, "one": 1.0}


def run_kernel(
    prog: Program,
    inp: TransferInputs,
    profile: fp.UnitProfile | None,
    k: PhysicalConstants = CONSTANTS,
    gas_terms: Sequence[tuple] | None = None,
    threads: int = 1,
    return_bits: bool = False,
):
    """Evaluate the transfer program over the grid of ``inp``.

    ``gas_terms`` supplies the (ratio, reference deposit) pairs of the two
    gases; by default the whole optical depth is fed as gas 1 with ratio 1
    and gas 2 is zero.  ``profile=None`` runs native binary32.  Work is split
    into contiguous pixel-aligned blocks; the result does not depend on
    ``threads``.
    """
    missing = {"nu", "i_in", "sratio_g1", "sratio_g2", "tref_g1", "tref_g2"} - set(prog.bindings)
    if missing:
        raise ProgramError(f"transfer program lacks bindings {sorted(missing)}")
    n = inp.i_in.n
    if gas_terms is None:
        gas_terms = ((1.0, inp.tau.values), (0.0, 0.0))
    if len(gas_terms) != 2:
        raise ValueError("gas_terms needs exactly two (ratio, deposit) pairs")
    nu = inp.i_in.nu
    cols = {
        "nu": nu,
        "i_in": inp.i_in.values,
        "sratio_g1": gas_terms[0][0],
        "tref_g1": gas_terms[0][1],
        "sratio_g2": gas_terms[1][0],
        "tref_g2": gas_terms[1][1],
    }
    npad = -(-n // 4) * 4
    fill = {"nu": 1.0}

    def padded(name, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 0 or v.size == 1:
            return v.reshape(1)
        if v.size != n:
            raise ValueError(f"binding {name!r} has {v.size} values, grid has {n}")
        if npad == n:
            return v
        return np.concatenate([v, np.full(npad - n, fill.get(name, 0.0))])

    full = {name: padded(name, v) for name, v in cols.items()}
    uniforms = kernel_uniforms(inp.l, inp.T, k)
    arith = NativeArith() if profile is None else ModelArith(profile)

    def block(lo_hi):
        lo, hi = lo_hi
        b = {name: (v if v.size == 1 else v[lo:hi]) for name, v in full.items()}
        res = execute(prog, b, uniforms, arith, hi - lo)
        return arith.bits(res.outputs[prog.outputs[0]])

    nblocks = max(1, int(threads))
    edges = np.linspace(0, npad // 4, nblocks + 1).astype(np.int64) * 4
    spans = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if not spans:
        bits = np.zeros(0, dtype=np.uint64)
    elif len(spans) == 1:
        bits = block(spans[0])
    else:
        with ThreadPoolExecutor(len(spans)) as ex:
            bits = np.concatenate(list(ex.map(block, spans)))
    bits = bits[:n]
    if return_bits:
        return bits
    fmt = fp.IEEE_BINARY32 if profile is None else profile.format
    return inp.i_in.with_values(fp.to_float(bits, fmt))


# --------------------------------------------------------------------------
# reduction


def tree_sum(values, arity: int = 4, add: Callable | None = None, zero=None):
    """Balanced ``arity``-ary tree sum with zero padding at every level.

    Each node adds its children left to right.  ``add`` replaces ``+``
    (for modeled arithmetic on bit arrays, pass e.g.
    ``lambda a, b: fpmodel.fadd(a, b, profile)`` and ``zero=np.uint64(0)``).
    """
    if arity < 2:
        raise ValueError("arity must be >= 2")
    v = np.asarray(values)
    if v.ndim != 1:
        v = v.reshape(-1)
    if add is None:
        add = np.add
    if zero is None:
        zero = v.dtype.type(0) if v.size else 0.0
    if v.size == 0:
        return zero
    while v.size > 1:
        pad = (-v.size) % arity
        if pad:
            v = np.concatenate([v, np.full(pad, zero, dtype=v.dtype)])
        m = v.reshape(-1, arity)
        acc = m[:, 0]
        for c in range(1, arity):
            acc = add(acc, m[:, c])
        v = np.asarray(acc)
    return v[0]


def reduce_power(i_in: SpectralField, i_out: SpectralField, arity: int = 4,
                 profile: fp.UnitProfile | None = None):
    """Sum over the grid of I_in - I_out by fixed tree reduction.

    Plain arithmetic in the dtype of the inputs when ``profile`` is None;
    otherwise the inputs are quantized and every subtraction and addition
    uses the profile's operators.  Returns a float.
    """
    if not i_in.same_grid(i_out):
        raise ValueError("I_in and I_out live on different grids")
    a = np.asarray(i_in.values)
    b = np.asarray(i_out.values)
    if profile is None:
        dt = np.result_type(a, b)
        with np.errstate(over="ignore", invalid="ignore"):
            d = a.astype(dt) - b.astype(dt)
        return float(tree_sum(d, arity))
    qa = fp.quantize(a.astype(np.float64), profile)
    qb = fp.quantize(b.astype(np.float64), profile)
    d = fp.fsub(qa, qb, profile)
    s = tree_sum(d, arity, add=lambda x, y: fp.fadd(x, y, profile), zero=np.uint64(0))
    return float(fp.to_float(np.array([s], dtype=np.uint64), profile.format)[0])


def sum_power(values) -> float:
    """Tree sum of an array of per-point contributions."""
    return float(tree_sum(np.asarray(values)))
