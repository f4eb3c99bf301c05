"""Characterization probes for shader arithmetic.

Each :class:`Probe` is a short shader program plus an input domain and an
observation rule.  Running it against a :class:`~lblrad.fpmodel.UnitProfile`
yields a :class:`ProbeReport` that is compared with the hardware
observations recorded for the four GPU presets.  The ``IEEE-RN`` preset is
compared against the same program executed in native numpy ``float32``.
"""

from __future__ import annotations

import csv
import io
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fpmodel as fp
from .shader import ModelArith, NativeArith, assemble, execute

__all__ = [
    "Probe",
    "ProbeReport",
    "PROBES",
    "get_probe",
    "run_probe",
    "run_suite",
    "render_report",
    "RANDOM_SAMPLES",
    "RANGE_TOLERANCE",
]

RANDOM_SAMPLES = 1 << 23
CHUNK = 1 << 20
LADDER = np.arange(1, 127)
RANGE_TOLERANCE = 0.15
THRESHOLD_MAX = 1 << 23
ONE_F32 = 0x3F800000


@dataclass(frozen=True)
class Observation:
    text: str
    value: object = None
    ranges: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class Expectation:
    text: str
    value: object = None
    ranges: tuple[tuple[float, float], ...] = ()
    containment: bool = False

    def matches(self, obs: Observation, tol: float = RANGE_TOLERANCE) -> bool:
        if self.ranges:
            if len(obs.ranges) != len(self.ranges):
                return False
            for (elo, ehi), (olo, ohi) in zip(self.ranges, obs.ranges):
                if self.containment:
                    if not (elo <= olo <= ohi <= ehi):
                        return False
                elif abs(olo - elo) > tol or abs(ohi - ehi) > tol:
                    return False
            return True
        if self.value is not None:
            return self.value == obs.value
        return self.text == obs.text


@dataclass(frozen=True)
class Probe:
    id: str
    expression: str
    domain: str
    program: str
    run: Callable = field(repr=False, compare=False)
    expected: dict = field(default_factory=dict, repr=False, compare=False)
    # text of the hardware observation this probe encodes
    observation: str = ""


@dataclass(frozen=True)
class ProbeReport:
    probe_id: str
    profile: str
    expected: str
    observed: str
    match: bool | None
    ulp_ranges: tuple[tuple[float, float], ...] = ()

    @property
    def ulp_min(self) -> float | None:
        return min(lo for lo, _ in self.ulp_ranges) if self.ulp_ranges else None

    @property
    def ulp_max(self) -> float | None:
        return max(hi for _, hi in self.ulp_ranges) if self.ulp_ranges else None


# --------------------------------------------------------------------------
# labels


def _pow2_exponent(x: float) -> int | None:
    if x <= 0 or not math.isfinite(x):
        return None
    m, e = math.frexp(x)
    return e - 1 if m == 0.5 else None


def dyadic_label(n: int) -> str:
    """Integer written as ``k*2^e`` with odd k; (2^m-1) spelled out."""
    if n == 0:
        return "0"
    e = (n & -n).bit_length() - 1
    k = n >> e
    if k == 1:
        return f"2^{e}"
    if (k + 1) & k == 0:
        ks = f"(2^{(k + 1).bit_length() - 1}-1)"
    else:
        ks = str(k)
    return ks if e == 0 else f"{ks}*2^{e}"


def value_label(bits: int, fmt: fp.FloatFormat) -> str:
    v = fp.ModeledValue(int(bits), fmt)
    if v.is_nan:
        return "sNaN" if v.is_snan else "qNaN"
    x = v.value
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "-0" if v.sign else "0"
    e = _pow2_exponent(abs(x))
    if e is not None:
        return ("-" if x < 0 else "") + ("1" if e == 0 else f"2^{e}")
    return repr(x)


def _ladder_label(x: float, i: int, base: float) -> str:
    b = "" if base == 0 else repr(base)
    if math.isnan(x):
        return "NaN"
    d = x - base
    if d == 0:
        return b or "0"
    if d == -(2.0**-i):
        return f"{b}-2^-i"
    e = _pow2_exponent(-d)
    if e is not None:
        return f"{b}-2^{e}"
    return repr(x)


def segments_text(segs: Sequence[tuple[int, int, str]]) -> str:
    return ";".join((f"{lo}" if lo == hi else f"{lo}..{hi}") + f":{lab}" for lo, hi, lab in segs)


def run_length(idx: Sequence[int], labels: Sequence[str]) -> list[tuple[int, int, str]]:
    segs: list[list] = []
    for i, lab in zip(idx, labels):
        if segs and segs[-1][2] == lab and segs[-1][1] == i - 1:
            segs[-1][1] = i
        else:
            segs.append([i, i, lab])
    return [tuple(s) for s in segs]


def _ladder_expect(*segs) -> Expectation:
    last = LADDER[-1]
    fixed = [(lo, last if hi is None else hi, lab) for lo, hi, lab in segs]
    return Expectation(segments_text(fixed))


# --------------------------------------------------------------------------
# runners


def _arith(profile: fp.UnitProfile | None):
    return NativeArith() if profile is None else ModelArith(profile)


def _stream(seed: int, probe_id: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(probe_id.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


def uniform_12(rng: np.random.Generator, n: int) -> np.ndarray:
    """Binary32 values uniform on [1, 2): exponent fixed, fraction random."""
    frac = rng.integers(0, 1 << 23, size=n, dtype=np.uint64)
    return (np.uint64(ONE_F32) | frac).astype(np.uint32).view(np.float32).astype(np.float64)


def _random_pairs(seed: int, probe_id: str, samples: int):
    rng = _stream(seed, probe_id)
    done = 0
    while done < samples:
        n = min(CHUNK, samples - done)
        yield uniform_12(rng, n), uniform_12(rng, n)
        done += n


def _single(program: str):
    prog = assemble(program)

    def run(arith, bindings, seed, samples, pid):
        res = execute(prog, bindings, {}, arith, 1)
        bits = int(arith.bits(res.outputs["r"])[0])
        lab = value_label(bits, arith.format)
        return Observation(lab, lab)

    return prog, run


def _ladder(program: str, base: float):
    prog = assemble(program)

    def run(arith, consts, seed, samples, pid):
        n = LADDER.size
        b = dict(consts)
        b["p"] = np.ldexp(1.0, -LADDER)
        res = execute(prog, b, {}, arith, n)
        vals = arith.to_float(res.outputs["r"])
        labels = [_ladder_label(float(v), int(i), base) for v, i in zip(vals, LADDER)]
        text = segments_text(run_length(LADDER.tolist(), labels))
        return Observation(text, text)

    return prog, run


def _random_zero(program: str):
    prog = assemble(program)

    def run(arith, consts, seed, samples, pid):
        bad = 0
        total = 0
        for x, y in _random_pairs(seed, pid, samples):
            b = dict(consts)
            b["x"], b["y"] = x, y
            res = execute(prog, b, {}, arith, x.size)
            r = arith.to_float(res.outputs["r"])
            bad += int(np.count_nonzero(r != 0))
            total += x.size
        text = "0" if bad == 0 else f"nonzero in {bad} of {total}"
        return Observation(text, text)

    return prog, run


def _threshold(program: str):
    prog = assemble(program)

    def run(arith, consts, seed, samples, pid):
        mode = fp.RNE
        if isinstance(arith, ModelArith):
            mode = arith.profile.rounding
        first = None
        for start in range(0, THRESHOLD_MAX + 1, CHUNK):
            i = np.arange(start, min(start + CHUNK, THRESHOLD_MAX + 1), dtype=np.int64)
            a = 1.0 + 2.0**-23
            bvals = 1.0 + i * 2.0**-23
            res = execute(prog, {"a": a, "b": bvals}, {}, arith, i.size)
            got = arith.bits(res.outputs["r"])
            ref = _reference_product(i, mode)
            bad = np.flatnonzero(got != ref)
            if bad.size:
                first = int(i[bad[0]])
                break
        x = THRESHOLD_MAX if first is None else first
        return Observation(dyadic_label(x), x)

    return prog, run


def _reference_product(i: np.ndarray, mode: str) -> np.ndarray:
    """Bits of (1 + 2^-23)(1 + 2^-23 i) rounded to binary32 in ``mode``."""
    P = (np.int64(1 << 23) + 1) * ((np.int64(1) << 23) + i)
    exp = np.full(i.shape, -46, dtype=np.int64)
    sign = np.zeros(i.shape, dtype=np.int64)
    return fp._round_pack(sign, P, exp, fp.IEEE_BINARY32, mode, False)


def _range(program: str):
    prog = assemble(program)

    def run(arith, consts, seed, samples, pid):
        lo = [math.inf, math.inf]
        hi = [-math.inf, -math.inf]
        fmt = arith.format
        for x, y in _random_pairs(seed, pid, samples):
            res = execute(prog, {"x": x, "y": y}, {}, arith, x.size)
            exact = x * y
            err = fp.ulp_error(arith.bits(res.outputs["r"]), exact, fmt)
            for k, sel in enumerate((exact < 2.0, exact >= 2.0)):
                e = err[sel]
                if e.size:
                    lo[k] = min(lo[k], float(np.nanmin(e)))
                    hi[k] = max(hi[k], float(np.nanmax(e)))
        ranges = tuple((round(a, 5), round(b, 5)) for a, b in zip(lo, hi))
        text = ";".join(f"[{a:.5f},{b:.5f}]" for a, b in ranges)
        return Observation(text, None, ranges)

    return prog, run


# --------------------------------------------------------------------------
# registry

_M = math.ldexp(2 - 2.0**-23, 127)
_SNAN64 = np.array([0x7FF4000000000000], dtype=np.uint64).view(np.float64)

_AP, _AV, _NP, _NV = fp.GPU_PRESETS


def _all(exp: Expectation) -> dict:
    return {name: exp for name in fp.GPU_PRESETS}


def _build() -> dict[str, Probe]:
    probes = []

    def add(pid, expr, domain, maker, src, expected, observation, consts=None):
        prog, runner = maker
        consts = consts or {}

        def run(arith, seed, samples):
            return runner(arith, consts, seed, samples, pid)

        probes.append(Probe(pid, expr, domain, src, run, expected, observation))

    src = "TEX m, m;\nADD t, m, m;\nSUB r, t, m;\nOUT r;"
    add("add-overflow", "(M (+) M) (-) M, M = 2^127(2-2^-23)", "single value",
        _single(src), src, _all(Expectation("inf", "inf")),
        "M = 2^127(2-2^-23) -> inf", {"m": _M})

    src = "TEX x, x;\nTEX y, y;\nMUL t, x, y;\nMAD r, x, y, -t;\nOUT r;"
    add("mad-cancel", "MAD(x, y, -(x (*) y))", "random U[1,2) pairs",
        _random_zero(src), src, _all(Expectation("0", "0")), "x,y ~ U[1,2) -> 0")

    src = "TEX a, a;\nTEX p, p;\nSUB r, a, p;\nOUT r;"
    sub_ladder = {
        _AP: _ladder_expect((1, 23, "1.5-2^-i"), (24, 24, "1.5-2^-23"), (25, None, "1.5")),
        _NP: _ladder_expect((1, 23, "1.5-2^-i"), (24, 25, "1.5-2^-23"), (26, None, "1.5")),
        _AV: _ladder_expect((1, 23, "1.5-2^-i"), (24, None, "1.5-2^-23")),
        _NV: _ladder_expect((1, 23, "1.5-2^-i"), (24, 24, "1.5-2^-23"), (25, None, "1.5")),
    }
    add("sub-ladder", "1.5 (-) 2^-i", "i = 1..126 exhaustive",
        _ladder(src, 1.5), src, sub_ladder,
        "per shader: breakpoints at i = 24 / 25 / 26", {"a": 1.5})

    # On vertex units 1 (+) 0.5 is exact, so the ladder equals the plain one.
    src = "TEX a, a;\nTEX h, h;\nTEX p, p;\nADD s, a, h;\nSUB r, s, p;\nOUT r;"
    pixel = _ladder_expect((1, 23, "1.5-2^-i"), (24, 25, "1.5-2^-23"), (26, None, "1.5"))
    add("add-sub-ladder", "(1 (+) 0.5) (-) 2^-i", "i = 1..126 exhaustive",
        _ladder(src, 1.5), src,
        {_AP: pixel, _NP: pixel, _AV: sub_ladder[_AV], _NV: sub_ladder[_NV]},
        "pixel units: 1..23 -> 1.5-2^-i; 24..25 -> 1.5-2^-23; 26.. -> 1.5",
        {"a": 1.0, "h": 0.5})

    src = "TEX a, a;\nTEX p, p;\nSUB t, a, p;\nSUB r, t, a;\nOUT r;"
    add("sub-then-cancel", "(1.5 (-) 2^-i) (-) 1.5", "i = 1..126 exhaustive",
        _ladder(src, 0.0), src,
        {
            _AP: _ladder_expect((1, 23, "-2^-i"), (24, 24, "-2^-23"), (25, None, "0")),
            _NP: _ladder_expect((1, 23, "-2^-i"), (24, 25, "-2^-23"), (26, None, "0")),
            _AV: _ladder_expect((1, 23, "-2^-i"), (24, None, "-2^-23")),
            _NV: _ladder_expect((1, 23, "-2^-i"), (24, 24, "-2^-23"), (25, None, "0")),
        },
        "ATI-Pixel: 25.. -> 0; Nvidia-Pixel: 26.. -> 0", {"a": 1.5})

    zero = _all(Expectation("0", "0"))
    src = "TEX x, x;\nTEX y, y;\nMUL a, x, y;\nMUL b, x, -y;\nADD r, a, b;\nOUT r;"
    add("mul-sign-pm", "x (*) y + (+x) (*) (-y)", "random U[1,2) pairs",
        _random_zero(src), src, zero, "x,y ~ U[1,2) -> 0")
    src = "TEX x, x;\nTEX y, y;\nMUL a, x, y;\nMUL b, -x, y;\nADD r, a, b;\nOUT r;"
    add("mul-sign-mp", "x (*) y + (-x) (*) (+y)", "random U[1,2) pairs",
        _random_zero(src), src, zero, "x,y ~ U[1,2) -> 0")
    src = "TEX x, x;\nTEX y, y;\nMUL a, x, y;\nMUL b, -x, -y;\nSUB r, a, b;\nOUT r;"
    add("mul-neg-neg", "x (*) y - (-x) (*) (-y)", "random U[1,2) pairs",
        _random_zero(src), src, zero, "x,y ~ U[1,2) -> 0")
    src = (
        "TEX x, x;\nTEX y, y;\nMUL a, x, y;\nMUL x2, x, {2};\nMUL b, x2, y;\n"
        "MUL b, b, {0.5};\nSUB r, a, b;\nOUT r;"
    )
    add("mul-scale", "x (*) y - ((2x) (*) y) / 2", "random U[1,2) pairs",
        _random_zero(src), src, zero, "x,y ~ U[1,2) -> 0")

    def thr(n):
        return Expectation(f"{dyadic_label(n)}", n)

    src = "TEX a, a;\nTEX b, b;\nMUL r, a, b;\nOUT r;"
    add("mul-threshold", "(1 + 2^-23) (*) (1 + 2^-23 i)", "i = 0..2^23 exhaustive",
        _threshold(src), src,
        {
            _AP: thr((2**11 - 1) * 2**12),
            _NP: thr(23 * 2**17),
            _AV: thr(2**23),
            _NV: thr(2**19),
        },
        "smallest i whose product differs from the correctly rounded one")

    def rng_exp(a, b, c, d):
        r = ((a, b), (c, d))
        return Expectation(";".join(f"[{lo:.5f},{hi:.5f}]" for lo, hi in r), None, r)

    src = "TEX x, x;\nTEX y, y;\nMUL r, x, y;\nOUT r;"
    add("mul-vs-exact", "x (*) y - x * y  [ulp; y < 2/x ; y >= 2/x]", "random U[1,2) pairs",
        _range(src), src,
        {
            _AP: rng_exp(-1.00031, 0.00215, -1.00013, 0.00085),
            _NP: rng_exp(-0.51099, 0.64063, -0.76504, 0.32031),
            _AV: rng_exp(-1.0, 0.0, -1.0, 0.0),
            _NV: rng_exp(-0.82449, 0.93750, -0.91484, 0.46875),
        },
        "ulp extrema, matched within +-0.15 ulp")

    src = "TEX a, a;\nMOV r, a;\nOUT r;"
    add("transfer-flush", "store 2^-140", "single value", _single(src), src,
        _all(Expectation("0", "0")), "a subnormal input is stored as zero",
        {"a": 2.0**-140})

    src = "TEX a, a;\nMOV r, a;\nOUT r;"
    add("snan-quiet", "store sNaN", "single value", _single(src), src,
        {
            _AP: Expectation("qNaN", "qNaN"),
            _AV: Expectation("qNaN", "qNaN"),
            _NP: Expectation("sNaN", "sNaN"),
            _NV: Expectation("sNaN", "sNaN"),
        },
        "ATI quiets a signaling NaN; Nvidia stores it unchanged", {"a": _SNAN64})

    return {p.id: p for p in probes}


PROBES: dict[str, Probe] = _build()


def get_probe(probe_id: str) -> Probe:
    try:
        return PROBES[probe_id]
    except KeyError:
        raise KeyError(f"unknown probe {probe_id!r}; known: {', '.join(PROBES)}") from None


def expectation_for(probe: Probe, profile: fp.UnitProfile, seed: int,
                    samples: int) -> Expectation | None:
    if profile.name in probe.expected and fp.PRESETS.get(profile.name) == profile:
        return probe.expected[profile.name]
    if profile == fp.PRESETS["IEEE-RN"]:
        if probe.id == "mul-vs-exact":
            half = ((-0.5, 0.5), (-0.5, 0.5))
            return Expectation("within [-0.5,0.5];[-0.5,0.5]", None, half, containment=True)
        obs = probe.run(NativeArith(), seed, samples)
        return Expectation("native " + obs.text, obs.value, obs.ranges)
    return None


def run_probe(probe: Probe | str, profile: fp.UnitProfile | None, seed: int = 0,
              samples: int = RANDOM_SAMPLES) -> ProbeReport:
    """Run one probe.  ``profile=None`` runs native binary32."""
    if isinstance(probe, str):
        probe = get_probe(probe)
    obs = probe.run(_arith(profile), seed, samples)
    if profile is None:
        return ProbeReport(probe.id, "native-binary32", "n/a", obs.text, None, obs.ranges)
    exp = expectation_for(probe, profile, seed, samples)
    if exp is None:
        return ProbeReport(probe.id, profile.name, "n/a", obs.text, None, obs.ranges)
    return ProbeReport(probe.id, profile.name, exp.text, obs.text, exp.matches(obs), obs.ranges)


def run_suite(profiles: Sequence[fp.UnitProfile], seed: int = 0,
              probe_ids: Sequence[str] | None = None, samples: int = RANDOM_SAMPLES,
              threads: int = 1) -> list[ProbeReport]:
    ids = list(PROBES) if probe_ids is None else list(probe_ids)
    for pid in ids:
        get_probe(pid)
    jobs = [(pid, prof) for prof in profiles for pid in ids]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda j: run_probe(j[0], j[1], seed, samples), jobs))
    return [run_probe(pid, prof, seed, samples) for pid, prof in jobs]


CSV_COLUMNS = ("probe_id", "profile", "expected", "observed", "match")


def render_report(reports: Sequence[ProbeReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        match = "n/a" if r.match is None else str(r.match).lower()
        w.writerow((r.probe_id, r.profile, r.expected, r.observed, match))
    return buf.getvalue()
