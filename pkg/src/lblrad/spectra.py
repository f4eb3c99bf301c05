"""Line databases and the optical-depth spectrum.

Units: wavenumber in cm^-1, temperature in K, number density u_g in
molecule/cm^3, line intensity in cm^-1/(molecule cm^-2) and path length in
cm, so that tau(nu) is in cm^-1 and tau * l is dimensionless.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numba
import numpy as np

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "GASES",
    "SpectralLine",
    "LineDatabase",
    "SpectralField",
    "ReferenceTable",
    "intensity_ratio",
    "intensity_ratios",
    "line_profile",
    "support_indices",
    "build_tau",
    "split_reference_product",
    "recombine",
    "generate_lines",
    "load_lines",
    "save_lines",
    "POINTS_PER_LINE",
    "MAX_GRID",
    "default_grid",
]

GASES = ("CO2", "H2O")
POINTS_PER_LINE = 16
MAX_GRID = 1 << 24
T_REF = 296.0
DEFAULT_PARTITION_EXPONENTS = {"CO2": 1.0, "H2O": 1.5}
# lines are deposited this many at a time, independently of the thread count
LINE_CHUNK = 1 << 16


@dataclass(frozen=True)
class PhysicalConstants:
    c2: float = 1.438776877  # second radiation constant hc/k, cm K
    h: float = 6.62607015e-34  # J s
    c: float = 2.99792458e10  # cm/s

    @property
    def hc2(self) -> float:
        """Planck prefactor 2 h c^2 in W cm^2 / sr (wavenumber form)."""
        return 2.0 * self.h * self.c**2


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class SpectralLine:
    gas_id: str
    nu_center: float
    s_ref: float
    e_lower: float
    halfwidth: float

    def __post_init__(self):
        if self.gas_id not in GASES:
            raise ValueError(f"unknown gas {self.gas_id!r}")
        if not self.nu_center > 0:
            raise ValueError("nu_center must be > 0")
        if not self.s_ref > 0:
            raise ValueError("s_ref must be > 0")
        if not self.e_lower >= 0:
            raise ValueError("e_lower must be >= 0")
        if not self.halfwidth > 0:
            raise ValueError("halfwidth must be > 0")


@dataclass(frozen=True, eq=False)
class LineDatabase:
    """Column store of lines sorted by (gas, nu_center)."""

    gas: np.ndarray  # int8 index into GASES
    nu: np.ndarray
    s_ref: np.ndarray
    e_lower: np.ndarray
    halfwidth: np.ndarray
    t_ref: float = T_REF
    partition_exponents: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_PARTITION_EXPONENTS)
    )

    @classmethod
    def from_arrays(cls, gas, nu, s_ref, e_lower, halfwidth, t_ref=T_REF,
                    partition_exponents=None) -> "LineDatabase":
        gas = np.asarray(gas)
        if gas.dtype.kind in "US":
            lookup = {g: k for k, g in enumerate(GASES)}
            try:
                gas = np.array([lookup[g] for g in gas.tolist()], dtype=np.int8)
            except KeyError as e:
                raise ValueError(f"unknown gas {e.args[0]!r}") from None
        gas = gas.astype(np.int8).reshape(-1)
        cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in (nu, s_ref, e_lower, halfwidth)]
        if any(c.shape != gas.shape for c in cols):
            raise ValueError("column lengths differ")
        nu, s, e, w = cols
        if gas.size:
            if gas.min() < 0 or gas.max() >= len(GASES):
                raise ValueError("gas index out of range")
            if not (np.all(nu > 0) and np.all(s > 0) and np.all(e >= 0) and np.all(w > 0)):
                raise ValueError("line parameters out of range")
        order = np.lexsort((nu, gas))
        exps = dict(DEFAULT_PARTITION_EXPONENTS)
        if partition_exponents:
            exps.update(partition_exponents)
        return cls(gas[order], nu[order], s[order], e[order], w[order], float(t_ref), exps)

    @classmethod
    def from_lines(cls, lines: Iterable[SpectralLine], **kw) -> "LineDatabase":
        lines = list(lines)
        return cls.from_arrays(
            [l.gas_id for l in lines] if lines else np.zeros(0, np.int8),
            [l.nu_center for l in lines], [l.s_ref for l in lines],
            [l.e_lower for l in lines], [l.halfwidth for l in lines], **kw,
        )

    def __len__(self) -> int:
        return int(self.nu.size)

    def line(self, k: int) -> SpectralLine:
        return SpectralLine(GASES[self.gas[k]], float(self.nu[k]), float(self.s_ref[k]),
                            float(self.e_lower[k]), float(self.halfwidth[k]))

    def lines(self) -> list[SpectralLine]:
        return [self.line(k) for k in range(len(self))]

    @property
    def declared_gases(self) -> tuple[str, ...]:
        return tuple(GASES[g] for g in np.unique(self.gas))

    def gas_slice(self, gas_id: str) -> slice:
        g = GASES.index(gas_id)
        lo = int(np.searchsorted(self.gas, g, "left"))
        hi = int(np.searchsorted(self.gas, g, "right"))
        return slice(lo, hi)

    def exponent_per_line(self) -> np.ndarray:
        m = np.array([self.partition_exponents[g] for g in GASES])
        return m[self.gas]

    def concat(self, other: "LineDatabase") -> "LineDatabase":
        return LineDatabase.from_arrays(
            np.concatenate([self.gas, other.gas]), np.concatenate([self.nu, other.nu]),
            np.concatenate([self.s_ref, other.s_ref]),
            np.concatenate([self.e_lower, other.e_lower]),
            np.concatenate([self.halfwidth, other.halfwidth]),
            self.t_ref, self.partition_exponents,
        )


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Values on the uniform grid ``start + step * k``, k = 0..n-1."""

    start: float
    step: float
    values: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be > 0")
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if self.values.size > MAX_GRID:
            raise ValueError(f"grid longer than {MAX_GRID} points")

    @classmethod
    def zeros(cls, start: float, step: float, n: int, dtype=np.float64) -> "SpectralField":
        return cls(float(start), float(step), np.zeros(n, dtype=dtype))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def nu(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n, dtype=np.float64)

    def same_grid(self, other: "SpectralField") -> bool:
        return self.start == other.start and self.step == other.step and self.n == other.n

    def with_values(self, values: np.ndarray) -> "SpectralField":
        return SpectralField(self.start, self.step, np.asarray(values))

    def to_bytes(self) -> bytes:
        head = np.array([self.start, self.step], dtype="<f8").tobytes()
        head += np.array([self.n], dtype="<u8").tobytes()
        return head + self.values.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SpectralField":
        start, step = np.frombuffer(data[:16], dtype="<f8")
        (n,) = np.frombuffer(data[16:24], dtype="<u8")
        vals = np.frombuffer(data[24:], dtype="<f4")
        if vals.size != n:
            raise ValueError(f"spectral file holds {vals.size} values, header says {n}")
        return cls(float(start), float(step), vals.astype(np.float32))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "SpectralField":
        return cls.from_bytes(Path(path).read_bytes())


def default_grid(n: int = MAX_GRID, lo: float = 200.0, hi: float = 10200.0) -> SpectralField:
    return SpectralField.zeros(lo, (hi - lo) / n, n)


# --------------------------------------------------------------------------
# physics


def intensity_ratios(nu, e_lower, m, T, t_ref=T_REF, k: PhysicalConstants = CONSTANTS):
    """Vectorized S(T)/S(T_ref) for arrays of line parameters."""
    T = float(T)
    if not T > 0:
        raise ValueError("temperature must be > 0")
    nu = np.asarray(nu, dtype=np.float64)
    e_lower = np.asarray(e_lower, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    q = (t_ref / T) ** m
    boltz = np.exp(k.c2 * e_lower * (1.0 / t_ref - 1.0 / T))
    stim = np.expm1(-k.c2 * nu / T) / np.expm1(-k.c2 * nu / t_ref)
    return q * boltz * stim


def intensity_ratio(line: SpectralLine, T: float, db: LineDatabase,
                    k: PhysicalConstants = CONSTANTS) -> float:
    m = db.partition_exponents[line.gas_id]
    return float(intensity_ratios(line.nu_center, line.e_lower, m, T, db.t_ref, k))


def line_profile(line: SpectralLine | float, nu, halfwidth: float | None = None):
    """Normalized Lorentzian (gamma/pi) / ((nu-nu0)^2 + gamma^2)."""
    if isinstance(line, SpectralLine):
        nu0, g = line.nu_center, line.halfwidth
    else:
        nu0, g = float(line), float(halfwidth)
    d = np.asarray(nu, dtype=np.float64) - nu0
    return (g / math.pi) / (d * d + g * g)


def support_indices(nu_center: np.ndarray, start: float, step: float, n: int):
    """Grid indices of the 16 nearest points of each line and a validity mask.

    Returns ``(idx, inside, in_range)``: ``idx`` has shape (lines, 16),
    ``inside`` flags lines whose center lies on the grid, ``in_range`` flags
    support points that exist on the grid.
    """
    nu_center = np.asarray(nu_center, dtype=np.float64)
    j0 = np.floor((nu_center - start) / step).astype(np.int64)
    last = start + step * (n - 1)
    inside = (nu_center >= start) & (nu_center <= last)
    offs = np.arange(-(POINTS_PER_LINE // 2) + 1, POINTS_PER_LINE // 2 + 1, dtype=np.int64)
    idx = j0[:, None] + offs[None, :]
    in_range = (idx >= 0) & (idx < n) & inside[:, None]
    return idx, inside, in_range


def _per_line_u(db: LineDatabase, u: Mapping[str, float]) -> np.ndarray:
    for g, v in u.items():
        if g not in GASES:
            raise ValueError(f"unknown gas {g!r}")
        if not v >= 0:
            raise ValueError("densities must be >= 0")
    table = np.array([float(u.get(g, 0.0)) for g in GASES])
    return table[db.gas]


def _deposits(db, sl: slice, grid: SpectralField, u_line, ratio):
    idx, inside, ok = support_indices(db.nu[sl], grid.start, grid.step, grid.n)
    nu = grid.start + grid.step * idx
    d = nu - db.nu[sl, None]
    g = db.halfwidth[sl, None]
    f = (g / math.pi) / (d * d + g * g)
    if ratio is None:
        vals = (u_line[sl] * db.s_ref[sl])[:, None] * f
    else:
        vals = (u_line[sl] * (db.s_ref[sl] * ratio[sl]))[:, None] * f
    return idx, ok, vals, int(np.count_nonzero(~inside))


def _accumulate(chunks, n: int, lo: int, hi: int) -> np.ndarray:
    out = np.zeros(hi - lo, dtype=np.float64)
    for idx, ok, vals in chunks:
        sel = ok & (idx >= lo) & (idx < hi)
        if sel.any():
            out += np.bincount(idx[sel] - lo, weights=vals[sel], minlength=hi - lo)
    return out


def build_tau(grid: SpectralField, db: LineDatabase, T: float, u: Mapping[str, float],
              k: PhysicalConstants = CONSTANTS, threads: int = 1) -> SpectralField:
    """Optical depth spectrum: sum over gases and lines of u_g S(T) f(nu - nu0).

    Each line contributes at its 16 nearest grid points.  Lines whose center
    falls outside the grid are skipped and counted in ``skipped``.  The
    result is bit-identical for every ``threads`` value.
    """
    u_line = _per_line_u(db, u)
    ratio = intensity_ratios(db.nu, db.e_lower, db.exponent_per_line(), T, db.t_ref, k)
    return _tau_from(grid, db, u_line, ratio, threads)


@numba.njit(cache=True, nogil=True)
def _chunk_deposit(nu0, amp, gamma, start, step, n, lo, out):
    """Add the deposits of one chunk of lines into ``out`` (grid index ``lo`` first)."""
    half = POINTS_PER_LINE // 2
    last = start + step * (n - 1)
    skipped = 0
    for k in range(nu0.shape[0]):
        c = nu0[k]
        if not (c >= start and c <= last):
            skipped += 1
            continue
        g = gamma[k]
        j0 = np.int64(math.floor((c - start) / step))
        for j in range(j0 - half + 1, j0 + half + 1):
            if j < 0 or j >= n:
                continue
            d = (start + step * j) - c
            out[j - lo] += amp[k] * ((g / math.pi) / (d * d + g * g))
    return skipped


def _chunk_span(nu0, start, step, n):
    half = POINTS_PER_LINE // 2
    with np.errstate(invalid="ignore"):
        j = np.floor((nu0 - start) / step)
    j = j[np.isfinite(j)]
    if j.size == 0:
        return 0, 0
    lo = max(0, int(j.min()) - half + 1)
    hi = min(n, int(j.max()) + half + 1)
    return lo, max(lo, hi)


def _tau_from(grid, db, u_line, ratio, threads):
    """Chunks of LINE_CHUNK lines are deposited into private spans, possibly
    concurrently, then added into tau in chunk order."""
    n = grid.n
    start, step = float(grid.start), float(grid.step)

    def run(s):
        sl = slice(s, min(s + LINE_CHUNK, len(db)))
        nu0 = db.nu[sl]
        amp = u_line[sl] * (db.s_ref[sl] * ratio[sl])
        lo, hi = _chunk_span(nu0, start, step, n)
        out = np.zeros(hi - lo)
        sk = _chunk_deposit(nu0, amp, db.halfwidth[sl], start, step, n, lo, out)
        return lo, out, sk

    tau = np.zeros(n)
    skipped = 0
    starts = list(range(0, len(db), LINE_CHUNK))
    threads = max(1, int(threads))
    ex = ThreadPoolExecutor(threads) if threads > 1 and len(starts) > 1 else None
    try:
        for w in range(0, len(starts), threads):
            wave = starts[w:w + threads]
            parts = ex.map(run, wave) if ex else map(run, wave)
            for lo, out, sk in parts:
                tau[lo:lo + out.size] += out
                skipped += sk
    finally:
        if ex:
            ex.shutdown()
    return SpectralField(grid.start, grid.step, tau, skipped)


def _assemble(grid, chunks, threads, skipped):
    n = grid.n
    threads = max(1, int(threads))
    if threads == 1:
        tau = _accumulate(chunks, n, 0, n)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(np.int64)
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: _accumulate(chunks, n, int(b[0]), int(b[1])),
                                zip(bounds[:-1], bounds[1:])))
        tau = np.concatenate(parts) if parts else np.zeros(0)
    return SpectralField(grid.start, grid.step, tau, skipped)


@dataclass(frozen=True, eq=False)
class ReferenceTable:
    """Temperature-independent deposits u_g S_ref f per line and support point."""

    grid: SpectralField
    idx: np.ndarray  # (lines, 16) grid indices
    ok: np.ndarray  # (lines, 16) valid support points
    values: np.ndarray  # (lines, 16)
    skipped: int = 0

    def __len__(self) -> int:
        return int(self.values.shape[0])


def split_reference_product(db: LineDatabase, grid: SpectralField,
                            u: Mapping[str, float]) -> ReferenceTable:
    u_line = _per_line_u(db, u)
    if len(db) == 0:
        z = np.zeros((0, POINTS_PER_LINE))
        return ReferenceTable(grid, z.astype(np.int64), z.astype(bool), z, 0)
    idx, ok, vals, skipped = _deposits(db, slice(0, len(db)), grid, u_line, None)
    return ReferenceTable(grid, idx, ok, vals, skipped)


def recombine(table: ReferenceTable, db: LineDatabase, T: float,
              k: PhysicalConstants = CONSTANTS, threads: int = 1) -> SpectralField:
    """tau(T) from a reference table: deposits scaled by each line's ratio."""
    ratio = intensity_ratios(db.nu, db.e_lower, db.exponent_per_line(), T, db.t_ref, k)
    chunks = []
    for s in range(0, len(table), LINE_CHUNK):
        sl = slice(s, min(s + LINE_CHUNK, len(table)))
        chunks.append((table.idx[sl], table.ok[sl], table.values[sl] * ratio[sl, None]))
    return _assemble(table.grid, chunks, threads, table.skipped)


# --------------------------------------------------------------------------
# line-list files


def generate_lines(n: int, seed: int = 0, band: tuple[float, float] = (200.0, 10200.0),
                   gases: tuple[str, ...] = GASES) -> LineDatabase:
    """Synthetic lines for benchmarking.

    gas uniform over ``gases``; nu_center uniform on ``band``; s_ref
    log-uniform on [1e-23, 1e-19]; e_lower exponential with mean 1000 cm^-1;
    halfwidth uniform on [0.02, 0.1] cm^-1.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    gas_idx = np.array([GASES.index(g) for g in gases], dtype=np.int8)
    gas = gas_idx[rng.integers(0, len(gases), size=n)]
    nu = rng.uniform(band[0], band[1], size=n)
    nu = np.where(nu > 0, nu, band[1])
    s = 10.0 ** rng.uniform(-23.0, -19.0, size=n)
    e = rng.exponential(1000.0, size=n)
    w = rng.uniform(0.02, 0.1, size=n)
    return LineDatabase.from_arrays(gas, nu, s, e, w)


HEADER = "# gas_id nu_center[cm-1] s_ref[cm-1/(molecule cm-2)] e_lower[cm-1] halfwidth[cm-1]"


def save_lines(db: LineDatabase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        fh.write(f"# t_ref {float(db.t_ref)!r}\n")
        cols = (db.nu.tolist(), db.s_ref.tolist(), db.e_lower.tolist(), db.halfwidth.tolist())
        for k, (nu, s, e, w) in enumerate(zip(*cols)):
            fh.write(f"{GASES[db.gas[k]]} {nu!r} {s!r} {e!r} {w!r}\n")


class LineFileError(ValueError):
    pass


def load_lines(path: str | Path) -> LineDatabase:
    gas, cols = [], [[], [], [], []]
    t_ref = T_REF
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.strip()
            if text.startswith("#"):
                parts = text[1:].split()
                if len(parts) == 2 and parts[0] == "t_ref":
                    t_ref = float(parts[1])
                continue
            text = text.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 5:
                raise LineFileError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
            if parts[0] not in GASES:
                raise LineFileError(f"{path}:{lineno}: unknown gas {parts[0]!r}")
            try:
                vals = [float(p) for p in parts[1:]]
                SpectralLine(parts[0], *vals)
            except ValueError as e:
                raise LineFileError(f"{path}:{lineno}: {e}") from None
            gas.append(GASES.index(parts[0]))
            for c, v in zip(cols, vals):
                c.append(v)
    return LineDatabase.from_arrays(np.array(gas, dtype=np.int8), *cols, t_ref=t_ref)
