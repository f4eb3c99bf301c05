"""Monte-Carlo ray tracing through a voxel grid of homogeneous cells.

A ray is cut into per-cell segments by a 3-D DDA walk.  Along the ray the
radiance spectrum is updated segment after segment; each cell is credited
with the spectrally integrated difference I_in - I_out of its segment
(absorbed minus emitted power per unit area and solid angle).
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import fpmodel as fp
from .spectra import CONSTANTS, LineDatabase, PhysicalConstants, SpectralField, build_tau
from .transfer import TRANSFER_PROGRAM, TransferInputs, reduce_power, run_kernel, transfer_step

__all__ = [
    "CellState",
    "VoxelGrid",
    "Ray",
    "RayResult",
    "SamplerConfig",
    "MonteCarloResult",
    "traverse",
    "chord_length",
    "trace_ray",
    "monte_carlo",
    "sample_ray",
    "BACKENDS",
]

BACKENDS = ("data-parallel", "scalar")


@dataclass(frozen=True)
class CellState:
    T: float
    p: float = 1.0
    u: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("cell temperature must be > 0")
        if any(not v >= 0 for v in self.u.values()):
            raise ValueError("cell densities must be >= 0")

    def key(self) -> tuple:
        return (self.T, tuple(sorted(self.u.items())))

    @property
    def empty(self) -> bool:
        return all(v == 0 for v in self.u.values())


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    dims: tuple[int, int, int]
    cell_size: tuple[float, float, float]
    cells: tuple[CellState, ...]

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must be three integers >= 1")
        if len(self.cell_size) != 3 or any(not s > 0 for s in self.cell_size):
            raise ValueError("cell sizes must be > 0")
        if len(self.cells) != self.n_cells:
            raise ValueError(f"expected {self.n_cells} cells, got {len(self.cells)}")

    @classmethod
    def uniform(cls, dims, cell_size, state: CellState) -> "VoxelGrid":
        n = int(dims[0]) * int(dims[1]) * int(dims[2])
        return cls(tuple(int(d) for d in dims), tuple(float(s) for s in cell_size), (state,) * n)

    @property
    def n_cells(self) -> int:
        return int(self.dims[0]) * int(self.dims[1]) * int(self.dims[2])

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.float64) * np.array(self.cell_size, dtype=np.float64)

    def index(self, i: int, j: int, k: int) -> int:
        nx, ny, _ = self.dims
        return int(i + nx * (j + ny * k))

    def coords(self, idx: int) -> tuple[int, int, int]:
        nx, ny, _ = self.dims
        return idx % nx, (idx // nx) % ny, idx // (nx * ny)


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or abs(float(np.linalg.norm(d)) - 1.0) > 1e-12:
            raise ValueError("ray direction must be a unit 3-vector")


def _slab(ray: Ray, ext: np.ndarray):
    """Entry and exit parameters of the ray against the box [0, ext]."""
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < 0.0 or o[a] > ext[a]:
                return math.inf, -math.inf
            continue
        ta = (0.0 - o[a]) / d[a]
        tb = (ext[a] - o[a]) / d[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    return t0, t1


def chord_length(ray: Ray, grid: VoxelGrid) -> float:
    """Length of the part of the ray (t >= 0) inside the grid."""
    t0, t1 = _slab(ray, grid.extent)
    t0 = max(t0, 0.0)
    return max(0.0, t1 - t0)


def traverse(ray: Ray, grid: VoxelGrid) -> list[tuple[int, float]]:
    """(cell index, segment length) pairs in ray order (3-D DDA walk)."""
    ext = grid.extent
    t_in, t_out = _slab(ray, ext)
    t_in = max(t_in, 0.0)
    if not t_out > t_in:
        return []
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    size = np.asarray(grid.cell_size, dtype=np.float64)
    dims = grid.dims
    # locate the entry cell from the midpoint of a tiny first step so that
    # entry points lying on a cell face pick the cell the ray moves into
    probe = o + d * (t_in + min(1e-9 * (t_out - t_in), 1e-12 * float(size.max())))
    cell = [min(max(int(math.floor(probe[a] / size[a])), 0), dims[a] - 1) for a in range(3)]
    step = [0, 0, 0]
    t_max = [math.inf] * 3
    t_delta = [math.inf] * 3
    for a in range(3):
        if d[a] > 0:
            step[a] = 1
            t_max[a] = ((cell[a] + 1) * size[a] - o[a]) / d[a]
            t_delta[a] = size[a] / d[a]
        elif d[a] < 0:
            step[a] = -1
            t_max[a] = (cell[a] * size[a] - o[a]) / d[a]
            t_delta[a] = -size[a] / d[a]
    out: list[tuple[int, float]] = []
    t = t_in
    while True:
        a = int(np.argmin(t_max))
        t_next = min(t_max[a], t_out)
        seg = t_next - t
        if seg > 0:
            out.append((grid.index(*cell), seg))
        if t_max[a] >= t_out:
            break
        t = max(t, t_next)
        cell[a] += step[a]
        t_max[a] += t_delta[a]
        if cell[a] < 0 or cell[a] >= dims[a]:
            break
    return out


@dataclass(frozen=True, eq=False)
class RayResult:
    exit: SpectralField
    deposits: np.ndarray
    total: float
    segments: tuple[tuple[int, float], ...] = ()


class _TauCache:
    def __init__(self, db, nu_grid, k, backend, threads=1):
        self.db, self.grid, self.k, self.backend = db, nu_grid, k, backend
        self.threads = threads
        self._cache: dict = {}
        self._lock = threading.Lock()

    def get(self, state: CellState) -> SpectralField:
        key = state.key()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.backend == "scalar":
            from .scalar import build_tau_scalar

            tau = build_tau_scalar(self.grid, self.db, state.T, state.u, self.k.c2)
        else:
            tau = build_tau(self.grid, self.db, state.T, state.u, self.k, self.threads)
        with self._lock:
            return self._cache.setdefault(key, tau)


def _step(i_in: SpectralField, tau: SpectralField, l: float, T: float, profile, k, backend,
          threads=1):
    if profile is not None:
        return run_kernel(TRANSFER_PROGRAM, TransferInputs(i_in, tau, l, T), profile, k,
                          threads=threads)
    if backend == "scalar":
        from .scalar import transfer_scalar

        return transfer_scalar(i_in, tau, l, T, k.c2, k.hc2)
    return transfer_step(TransferInputs(i_in, tau, l, T), k, threads)


def trace_ray(ray: Ray, grid: VoxelGrid, db: LineDatabase, nu_grid: SpectralField,
              i_boundary: SpectralField, profile: fp.UnitProfile | None = None,
              k: PhysicalConstants = CONSTANTS, backend: str = "data-parallel",
              _cache: _TauCache | None = None, threads: int = 1) -> RayResult:
    """Chain the segment updates of one ray.

    ``threads`` parallelizes the work inside each segment (data-parallel
    backend only); results do not depend on it.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if not i_boundary.same_grid(nu_grid):
        raise ValueError("boundary spectrum is not on the wavenumber grid")
    cache = _cache or _TauCache(db, nu_grid, k, backend, threads)
    segs = traverse(ray, grid)
    deposits = np.zeros(grid.n_cells, dtype=np.float64)
    cur = i_boundary.with_values(np.asarray(i_boundary.values, dtype=np.float64))
    total = 0.0
    for idx, l in segs:
        state = grid.cells[idx]
        if state.empty:
            continue
        tau = cache.get(state)
        nxt = _step(cur, tau, l, state.T, profile, k, backend, threads)
        p = reduce_power(cur, nxt)
        deposits[idx] += p
        total += p
        cur = nxt.with_values(np.asarray(nxt.values, dtype=np.float64))
    return RayResult(cur, deposits, total, tuple(segs))


@dataclass(frozen=True)
class SamplerConfig:
    """Rays start uniformly on one face of the grid and point inward.

    ``direction`` is ``"fixed"`` (along ``fixed_direction``, default the
    inward normal) or ``"cosine"`` (cosine-weighted about the inward normal).
    """

    face: str = "x-"
    direction: str = "cosine"
    fixed_direction: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.face not in ("x-", "x+", "y-", "y+", "z-", "z+"):
            raise ValueError(f"bad face {self.face!r}")
        if self.direction not in ("fixed", "cosine"):
            raise ValueError(f"bad direction law {self.direction!r}")
        if self.fixed_direction is not None:
            d = np.asarray(self.fixed_direction, dtype=np.float64)
            if d.shape != (3,) or not np.linalg.norm(d) > 0:
                raise ValueError("fixed_direction must be a nonzero 3-vector")
            a = "xyz".index(self.face[0])
            inward = 1.0 if self.face[1] == "-" else -1.0
            if d[a] * inward <= 0:
                raise ValueError("fixed_direction must point into the grid")


def ray_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def sample_ray(cfg: SamplerConfig, grid: VoxelGrid, rng: np.random.Generator) -> Ray:
    ext = grid.extent
    a = "xyz".index(cfg.face[0])
    inward = 1.0 if cfg.face[1] == "-" else -1.0
    b, c = [x for x in range(3) if x != a]
    o = np.zeros(3)
    o[a] = 0.0 if inward > 0 else ext[a]
    u = rng.random(4)
    o[b] = u[0] * ext[b]
    o[c] = u[1] * ext[c]
    if cfg.direction == "fixed":
        if cfg.fixed_direction is None:
            d = np.zeros(3)
            d[a] = inward
        else:
            d = np.asarray(cfg.fixed_direction, dtype=np.float64)
    else:
        r = math.sqrt(u[2])
        phi = 2.0 * math.pi * u[3]
        d = np.zeros(3)
        d[a] = inward * math.sqrt(max(0.0, 1.0 - u[2]))
        d[b] = r * math.cos(phi)
        d[c] = r * math.sin(phi)
        if d[a] == 0.0:
            d[a] = inward * 1e-300
    d = d / np.linalg.norm(d)
    return Ray(tuple(float(x) for x in o), tuple(float(x) for x in d))


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    mean: np.ndarray
    stderr: np.ndarray
    n_rays: int
    total_mean: float
    total_stderr: float
    exit_mean: SpectralField | None = None


def monte_carlo(n_rays: int, sampler: SamplerConfig, grid: VoxelGrid, db: LineDatabase,
                nu_grid: SpectralField, i_boundary: SpectralField, seed: int = 0,
                profile: fp.UnitProfile | None = None, k: PhysicalConstants = CONSTANTS,
                backend: str = "data-parallel", threads: int = 1) -> MonteCarloResult:
    """Average per-cell deposits over ``n_rays`` independent rays.

    Ray ``r`` draws from its own stream keyed by (seed, r), and results are
    gathered by ray index, so the output does not depend on ``threads``.
    Standard errors are NaN for a single ray.
    """
    if int(n_rays) < 1:
        raise ValueError("n_rays must be >= 1")
    if not isinstance(sampler, SamplerConfig):
        raise ValueError("sampler must be a SamplerConfig")
    n_rays = int(n_rays)
    cache = _TauCache(db, nu_grid, k, backend)

    def one(r: int) -> RayResult:
        ray = sample_ray(sampler, grid, ray_stream(seed, r))
        return trace_ray(ray, grid, db, nu_grid, i_boundary, profile, k, backend, cache)

    # batches keep memory bounded; exits are summed in ray order
    dep = np.zeros((n_rays, grid.n_cells))
    totals = np.zeros(n_rays)
    exit_sum = np.zeros(nu_grid.n)
    batch = max(1, int(threads)) * 4
    ex = ThreadPoolExecutor(int(threads)) if threads > 1 else None
    try:
        for lo in range(0, n_rays, batch):
            ids = range(lo, min(n_rays, lo + batch))
            results = list(ex.map(one, ids)) if ex else [one(r) for r in ids]
            for r, res in zip(ids, results):
                dep[r] = res.deposits
                totals[r] = res.total
                exit_sum += res.exit.values
    finally:
        if ex:
            ex.shutdown()
    mean = dep.mean(axis=0)
    exit_mean = nu_grid.with_values(exit_sum / n_rays)
    if n_rays > 1:
        se = dep.std(axis=0, ddof=1) / math.sqrt(n_rays)
        tse = float(totals.std(ddof=1) / math.sqrt(n_rays))
    else:
        se = np.full(grid.n_cells, np.nan)
        tse = math.nan
    return MonteCarloResult(mean, se, n_rays, float(totals.mean()), tse, exit_mean)


def mean_of(results: Sequence[RayResult]) -> np.ndarray:
    return np.stack([r.deposits for r in results]).mean(axis=0)
