"""Throughput benchmark: spectral lines evaluated per second against lines per ray.

Each sweep point draws a synthetic database, then traces ``rays`` rays one
after the other through a single homogeneous cell on a fixed wavenumber
grid.  Every ray rebuilds its optical depth, so a ray costs one pass over
the lines plus one transfer update and one reduction over the grid; the
grid part is a fixed per-ray cost that more lines per ray amortize.  The reported
time is the median over ``reps`` timed repetitions after ``warmup``
untimed ones; database generation and ray sampling happen outside the
timed region.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .mcrt import BACKENDS, CellState, SamplerConfig, VoxelGrid, ray_stream, sample_ray, trace_ray
from .spectra import MAX_GRID, default_grid, generate_lines
from .transfer import planck

__all__ = ["BenchmarkPoint", "BENCH_COLUMNS", "GRID_POINTS", "run_point", "sweep", "render_csv"]

BENCH_COLUMNS = ("lines_per_ray", "backend", "rays", "wall_time", "lines_per_second", "status")
BAND = (200.0, 10200.0)
GRID_POINTS = 1 << 20


@dataclass(frozen=True)
class BenchmarkPoint:
    lines_per_ray: int
    backend: str
    rays: int
    wall_time: float  # median seconds for all rays
    lines_per_second: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_point(lines: int, backend: str, rays: int = 100, seed: int = 0, threads: int = 1,
              reps: int = 5, warmup: int = 1, grid_points: int = GRID_POINTS) -> BenchmarkPoint:
    if lines < 1 or rays < 1 or reps < 1:
        raise ValueError("lines, rays and reps must be >= 1")
    if not 1 <= grid_points <= MAX_GRID:
        raise ValueError(f"grid_points must be in [1, {MAX_GRID}]")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    try:
        db = generate_lines(lines, seed=seed, band=BAND)
        nu = default_grid(int(grid_points), *BAND)
        boundary = nu.with_values(np.asarray(planck(nu.nu, 300.0)))
        cell = CellState(1000.0, 1.0, {"CO2": 1e17, "H2O": 1e17})
        grid = VoxelGrid.uniform((1, 1, 1), (1.0, 1.0, 1.0), cell)
        sampler = SamplerConfig("x-", "fixed")
        ray_list = [sample_ray(sampler, grid, ray_stream(seed, r)) for r in range(rays)]

        def once():
            t0 = time.perf_counter()
            for ray in ray_list:
                trace_ray(ray, grid, db, nu, boundary, backend=backend, threads=threads)
            return time.perf_counter() - t0

        for _ in range(warmup):
            once()
        wall = statistics.median(once() for _ in range(reps))
    except MemoryError:
        return BenchmarkPoint(lines, backend, rays, math.nan, math.nan, "failed: out of memory")
    return BenchmarkPoint(lines, backend, rays, wall, lines * rays / wall)


def sweep(lines_per_ray: Iterable[int], backends: Sequence[str] = BACKENDS, rays: int = 100,
          seed: int = 0, threads: int = 1, reps: int = 5, warmup: int = 1,
          grid_points: int = GRID_POINTS) -> list[BenchmarkPoint]:
    pts = []
    for n in lines_per_ray:
        for b in backends:
            pts.append(run_point(int(n), b, rays, seed, threads, reps, warmup, grid_points))
    return pts


def render_csv(points: Sequence[BenchmarkPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for p in points:
        row = asdict(p)
        row["wall_time"] = f"{p.wall_time:.6g}"
        row["lines_per_second"] = f"{p.lines_per_second:.6g}"
        w.writerow([row[c] for c in BENCH_COLUMNS])
    return buf.getvalue()


def parse_sweep(text: str) -> list[int]:
    """``"1024,4096"``, ``"2^10,2^14"`` or a power-of-two range ``"2^10..2^20"``."""
    text = text.strip()

    def value(t):
        t = t.strip()
        if t.startswith("2^"):
            return 1 << int(t[2:])
        return int(float(t))

    if ".." in text:
        a, b = (t.strip() for t in text.split("..", 1))
        if not (a.startswith("2^") and b.startswith("2^")):
            raise ValueError(f"range bounds must be powers of two like 2^10, got {text!r}")
        lo, hi = int(a[2:]), int(b[2:])
        if lo > hi:
            raise ValueError("empty sweep range")
        return [1 << e for e in range(lo, hi + 1)]
    vals = [value(v) for v in text.split(",") if v.strip()]
    if not vals or min(vals) < 1:
        raise ValueError("sweep values must be >= 1")
    return vals
