"""The eight acceptance criteria, each at its stated tolerance.

Every test records one summary line (shown after the run) and then asserts.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracle
from lblrad import fpmodel as fp
from lblrad import probes
from lblrad import spectra as sp
from lblrad.bench import sweep
from lblrad.cli import main
from lblrad.mcrt import CellState, Ray, VoxelGrid, monte_carlo, trace_ray
from lblrad.scenario import load_scenario
from lblrad.transfer import (TRANSFER_PROGRAM, TransferInputs, planck, reduce_power, run_kernel,
                             transfer_step, transfer_step_values, tree_sum)

SCEN = Path(__file__).resolve().parent.parent / "scenarios"
IEEE = fp.PRESETS["IEEE-RN"]


def ok(flag: bool) -> str:
    return "PASS" if flag else "FAIL"


# ---------------------------------------------------------------- 1


def test_probe_suite_reproduces_gpu_table(criterion):
    profiles = [fp.PRESETS[n] for n in fp.GPU_PRESETS]
    t0 = time.perf_counter()
    reports = probes.run_suite(profiles, seed=0, samples=1 << 23, threads=os.cpu_count() or 1)
    wall = time.perf_counter() - t0
    applicable = [r for r in reports if r.match is not None]
    bad = [f"{r.probe_id}/{r.profile}" for r in applicable if not r.match]
    passed = not bad and wall <= 300.0
    criterion(1, ok(passed), f"{len(applicable) - len(bad)}/{len(applicable)} probe rows match, "
                             f"2^23 samples, {wall:.0f} s (limit 300 s) {' '.join(bad)}")
    assert not bad
    assert wall <= 300.0


# ---------------------------------------------------------------- 2


def _operands(rng, n):
    """Half uniform bit patterns, half with exponents a few binades apart."""
    x = rng.integers(0, 2**32, n, dtype=np.uint64)
    y = rng.integers(0, 2**32, n, dtype=np.uint64)
    half = n // 2
    be = ((x[:half] >> np.uint64(23)) & np.uint64(0xFF)).astype(np.int64)
    be2 = np.clip(be + rng.integers(-26, 27, half), 0, 254).astype(np.uint64)
    y[:half] = (y[:half] & np.uint64(0x807FFFFF)) | (be2 << np.uint64(23))
    return x, y


def test_ieee_profile_matches_native_binary32(criterion):
    rng = np.random.default_rng(2024)
    n = 1_000_000
    x, y = _operands(rng, n)
    z = rng.permutation(x)
    fx, fy, fz = (v.astype(np.uint32).view(np.float32) for v in (x, y, z))
    with np.errstate(all="ignore"):
        native = {"add": fx + fy, "sub": fx - fy, "mul": fx * fy, "mad": (fx * fy) + fz}
    model = {"add": fp.fadd(x, y, IEEE), "sub": fp.fsub(x, y, IEEE), "mul": fp.fmul(x, y, IEEE),
             "mad": fp.fmad(x, y, z, IEEE)}
    mismatches = {}
    for op, want in native.items():
        got = model[op]
        w = want.view(np.uint32).astype(np.uint64)
        gnan = fp.to_float(got, fp.IEEE_BINARY32)
        both_nan = np.isnan(gnan) & np.isnan(want)
        mismatches[op] = int(np.count_nonzero((got != w) & ~both_nan))
    total = sum(mismatches.values())
    criterion(2, ok(total == 0), f"{4 * n} add/sub/mul/mad cases, mismatches {mismatches}")
    assert total == 0


# ---------------------------------------------------------------- 3


def naive_tau(grid, db, T, u):
    """Per-point loop: every grid point sums the lines whose 16-point support covers it."""
    ratio = sp.intensity_ratios(db.nu, db.e_lower, db.exponent_per_line(), T, db.t_ref)
    dens = np.array([u.get(g, 0.0) for g in sp.GASES])[db.gas]
    amp = dens * (db.s_ref * ratio)
    last = grid.start + grid.step * (grid.n - 1)
    keep = (db.nu >= grid.start) & (db.nu <= last)
    nu0, amp, gam = db.nu[keep], amp[keep], db.halfwidth[keep]
    j0 = np.floor((nu0 - grid.start) / grid.step).astype(np.int64)
    order = np.argsort(j0, kind="stable")
    nu0, amp, gam, j0 = nu0[order], amp[order], gam[order], j0[order]
    out = np.zeros(grid.n)
    for j in range(grid.n):
        # point j is covered by lines with j0 - 7 <= j <= j0 + 8
        lo, hi = np.searchsorted(j0, j - 8, "left"), np.searchsorted(j0, j + 7, "right")
        if hi > lo:
            d = (grid.start + grid.step * j) - nu0[lo:hi]
            g = gam[lo:hi]
            out[j] = math.fsum(amp[lo:hi] * ((g / math.pi) / (d * d + g * g)))
    return out


def test_physics_matches_high_precision(criterion):
    rng = np.random.default_rng(3)
    n = 10_000
    nu = rng.uniform(200.0, 10200.0, n)
    T = rng.uniform(200.0, 3000.0, n)
    e = rng.uniform(0.0, 8000.0, n)
    m = rng.choice([1.0, 1.5], n)
    got1 = np.array([sp.intensity_ratios(nu[i], e[i], m[i], T[i]) for i in range(n)])
    want1 = np.array([float(oracle.intensity_ratio(nu[i], e[i], m[i], T[i], sp.T_REF)) for i in range(n)])
    err1 = np.max(np.abs(got1 - want1) / want1)

    got4 = planck(nu, T)
    want4 = np.array([float(oracle.planck(nu[i], T[i])) for i in range(n)])
    err4 = np.max(np.abs(got4 - want4) / want4)

    i_in = planck(nu, rng.uniform(200.0, 3000.0, n)) * rng.uniform(0.0, 2.0, n)
    tau = 10.0 ** rng.uniform(-6, 2, n)
    l = rng.uniform(0.01, 20.0, n)
    got3 = np.array([transfer_step_values(i_in[i], tau[i], nu[i], l[i], T[i]) for i in range(n)])
    want3 = np.array([float(oracle.transfer(i_in[i], tau[i], nu[i], l[i], T[i])) for i in range(n)])
    err3 = np.max(np.abs(got3 - want3) / want3)

    db = sp.generate_lines(100_000, seed=5, band=(2000.0, 2600.0))
    grid = sp.SpectralField.zeros(2000.0, 0.01, 60_000)
    u = {"CO2": 2e17, "H2O": 7e16}
    got2 = sp.build_tau(grid, db, 1300.0, u).values
    want2 = naive_tau(grid, db, 1300.0, u)
    nz = want2 != 0
    err2 = np.max(np.abs(got2[nz] - want2[nz]) / want2[nz])
    assert np.array_equal(got2 == 0, ~nz)

    worst = max(err1, err2, err3, err4)
    criterion(3, ok(worst <= 1e-12),
              f"max rel error: line intensity {err1:.1e}, tau {err2:.1e}, transfer {err3:.1e}, "
              f"planck {err4:.1e} (limit 1e-12)")
    assert worst <= 1e-12


# ---------------------------------------------------------------- 4


def kernel_cases(seed, blocks=64, per_block=1024):
    """Random segments: each block shares (l, T) uniforms and spans part of the band."""
    rng = np.random.default_rng(seed)
    for _ in range(blocks):
        start = rng.uniform(200.0, 9100.0)
        grid = sp.SpectralField.zeros(start, 1000.0 / per_block, per_block)
        T = rng.uniform(250.0, 2500.0)
        i_in = planck(grid.nu, rng.uniform(250.0, 2500.0)) * rng.uniform(0.0, 2.0, per_block)
        tau = 10.0 ** rng.uniform(-4, 1, per_block)
        yield TransferInputs(grid.with_values(i_in), grid.with_values(tau),
                             float(rng.uniform(0.1, 10.0)), float(T))


def test_kernel_fidelity(criterion):
    worst = 0.0
    errs = []
    zero_exact = True
    for inp in kernel_cases(4):
        q = lambda v: fp.to_float(fp.quantize(v, IEEE), fp.IEEE_BINARY32)
        nu_q = q(inp.i_in.nu)
        # reference from the binary32 inputs the kernel actually sees
        ref = transfer_step_values(q(inp.i_in.values), q(inp.tau.values), nu_q, inp.l, inp.T)
        bits = run_kernel(TRANSFER_PROGRAM, inp, IEEE, return_bits=True)
        e = np.abs(fp.ulp_error(bits, ref, fp.IEEE_BINARY32))
        errs.append(e[np.isfinite(e)])
        zero = TransferInputs(inp.i_in.with_values(q(inp.i_in.values)),
                              inp.tau.with_values(np.zeros(inp.tau.n)), inp.l, inp.T)
        out = run_kernel(TRANSFER_PROGRAM, zero, IEEE).values
        zero_exact &= bool(np.array_equal(out, q(inp.i_in.values)))
    e = np.concatenate(errs)
    worst = float(e.max())
    passed = worst <= 4 and zero_exact
    criterion(4, ok(passed), f"{e.size} points, max {worst:.1f} ulp, p99 {np.percentile(e, 99):.1f}"
                             f" ulp, median {np.median(e):.2f} ulp (limit 4); tau=0 exact: {zero_exact}")
    assert zero_exact
    assert worst <= 4


# ---------------------------------------------------------------- 5


def test_reductions(criterion):
    n = 1 << 24
    grid = sp.SpectralField.zeros(200.0, 1e-3, n, dtype=np.float32)
    ones = grid.with_values(np.ones(n, dtype=np.float32))
    s_ones = reduce_power(ones, grid)
    rng = np.random.default_rng(5)
    ints = rng.integers(-(1 << 12), 1 << 12, 1 << 12).astype(np.float32)
    s_int = float(tree_sum(ints))
    exact_int = float(int(ints.astype(np.int64).sum()))
    r = rng.random(1 << 20).astype(np.float32)
    s_r = float(tree_sum(r))
    seq = math.fsum(r.astype(np.float64))
    rel = abs(s_r - seq) / seq
    passed = s_ones == float(n) and s_int == exact_int and rel <= 2.0**-18
    criterion(5, ok(passed), f"2^24 ones -> {s_ones:.0f}; integers exact: {s_int == exact_int}; "
                             f"random rel error {rel:.1e} (limit {2.0**-18:.1e})")
    assert s_ones == float(n)
    assert s_int == exact_int
    assert rel <= 2.0**-18


# ---------------------------------------------------------------- 6


def test_equilibrium_and_semigroup(criterion):
    sc = load_scenario(SCEN / "cavity.ini")
    assert sc.n_rays == 1000
    res = monte_carlo(sc.n_rays, sc.sampler, sc.grid, sc.db, sc.nu_grid, sc.boundary,
                      seed=sc.seed, backend=sc.backend)
    within = bool(np.all(np.abs(res.mean) <= 3 * res.stderr))

    db = sp.generate_lines(5000, seed=6, band=(2000.0, 2100.0))
    nu = sp.SpectralField.zeros(2000.0, 0.01, 10_000)
    st = CellState(1300.0, 1.0, {"CO2": 3e17, "H2O": 1e17})
    ray = Ray((0.0, 0.5, 0.5), (1.0, 0.0, 0.0))
    worst = 0.0
    for backend in ("scalar", "data-parallel"):
        for tb in (300.0, 2500.0):
            b = nu.with_values(planck(nu.nu, tb))
            halves = VoxelGrid.uniform((2, 1, 1), (2.0, 1.0, 1.0), st)
            whole = VoxelGrid.uniform((1, 1, 1), (4.0, 1.0, 1.0), st)
            two = trace_ray(ray, halves, db, nu, b, backend=backend).exit.values
            one = trace_ray(ray, whole, db, nu, b, backend=backend).exit.values
            # ulps of the binary32 spectrum format
            ulps = np.abs(two - one) / np.spacing(np.abs(one).astype(np.float32))
            worst = max(worst, float(ulps.max()))
    passed = within and worst <= 2
    criterion(6, ok(passed), f"cavity {sc.n_rays} rays: max |mean| {np.abs(res.mean).max():.2e}, "
                             f"max 3*stderr {3 * res.stderr.max():.2e}; semigroup max {worst:.3g} ulp "
                             f"(limit 2)")
    assert within
    assert worst <= 2


# ---------------------------------------------------------------- 7


def test_throughput(criterion):
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    sizes = [1 << e for e in range(10, 21, 2)]
    pts = sweep(sizes, ("data-parallel",), rays=10, seed=0, threads=cores, reps=3, warmup=1,
                grid_points=1 << 16)
    rates = [p.lines_per_second for p in pts if p.ok]
    # each rate must reach at least 80% of the best rate so far (timing noise)
    rising = len(rates) == len(sizes) and all(r >= 0.8 * max(rates[: i + 1]) for i, r in enumerate(rates))
    shape = ", ".join(f"2^{int(math.log2(p.lines_per_ray))}:{p.lines_per_second:.2e}" for p in pts)
    if cores >= 4:
        big = sweep([1 << 20], ("scalar", "data-parallel"), rays=10, threads=cores, reps=3,
                    grid_points=1 << 16)
        speedup = big[1].lines_per_second / big[0].lines_per_second
        passed = rising and speedup >= 4
        criterion(7, ok(passed), f"{cores} cores, speed-up at 2^20 {speedup:.2f}x (limit 4x); "
                                 f"rising: {rising} [{shape}]")
        assert speedup >= 4
    else:
        criterion(7, "SKIP" if rising else "FAIL",
                  f"speed-up check needs >= 4 cores, host has {cores}; rising: {rising} [{shape}]")
    assert rising


# ---------------------------------------------------------------- 8


def test_determinism(criterion, tmp_path):
    outs = {}
    for tag, extra in (("a", []), ("b", []), ("t2", ["--threads", "2"]), ("t4", ["--threads", "4"])):
        d = tmp_path / tag
        assert main(["run", str(SCEN / "slab.ini"), "--out", str(d), "--backend", "scalar", *extra]) == 0
        outs[tag] = {f.name: f.read_bytes() for f in sorted(d.iterdir())}
    same = all(outs[t] == outs["a"] for t in outs)
    criterion(8, ok(same), f"slab scenario, scalar backend: {len(outs)} runs (threads 1, 1, 2, 4) "
                           f"byte-identical: {same}")
    assert same
