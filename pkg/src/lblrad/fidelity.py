"""Ulp histograms of the transfer program under one profile against another."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import fpmodel as fp
from .spectra import SpectralField
from .transfer import TRANSFER_PROGRAM, TransferInputs, planck, run_kernel


@dataclass(frozen=True)
class UlpHistogram:
    profile: str
    baseline: str
    points: int
    counts: dict  # bin -> count, see ``bin_label``; NaN cases land in bin "nan"

    def rows(self) -> list[tuple[str, int, int]]:
        """(label, bin, count) in increasing error order."""
        num = sorted(k for k in self.counts if k != "nan")
        out = [(bin_label(k), k, self.counts[k]) for k in num]
        if "nan" in self.counts:
            out.append(("nan", 0, self.counts["nan"]))
        return out


def ulp_bins(err: np.ndarray) -> np.ndarray:
    """Signed log2 bins: 0 for |e| < 0.5, else +-(1 + floor(log2(round(|e|))))."""
    r = np.rint(np.abs(err))
    k = np.zeros(err.shape, dtype=np.int64)
    nz = r >= 1
    k[nz] = np.floor(np.log2(r[nz])).astype(np.int64) + 1
    return np.where(err < 0, -k, k)


def bin_label(k: int) -> str:
    """Ulp range of a bin, e.g. 3 -> "[4,8)" and -1 -> "-[1,2)"."""
    if k == 0:
        return "0"
    lo = 1 << (abs(k) - 1)
    return f"{'-' if k < 0 else ''}[{lo},{2 * lo})"


def random_segments(n: int, seed: int = 0, block: int = 4096):
    """Blocks of random points; each block shares one (l, T) and spans 1000 cm^-1."""
    rng = np.random.default_rng(seed)
    left = n
    while left > 0:
        m = min(block, left)
        grid = SpectralField.zeros(rng.uniform(200.0, 9100.0), 1000.0 / m, m)
        i_in = planck(grid.nu, rng.uniform(250.0, 2500.0)) * rng.uniform(0.0, 2.0, m)
        tau = 10.0 ** rng.uniform(-4, 1, m)
        yield TransferInputs(grid.with_values(i_in), grid.with_values(tau),
                             float(rng.uniform(0.1, 10.0)), float(rng.uniform(250.0, 2500.0)))
        left -= m


def ulp_histogram(profile: fp.UnitProfile, baseline: fp.UnitProfile, n: int = 1 << 20,
                  seed: int = 0, threads: int = 1) -> UlpHistogram:
    """Signed error of ``profile`` outputs in ulps of the ``baseline`` outputs, binned by ``ulp_bins``."""
    counts: Counter = Counter()
    for inp in random_segments(n, seed):
        a = run_kernel(TRANSFER_PROGRAM, inp, profile, threads=threads)
        b = run_kernel(TRANSFER_PROGRAM, inp, baseline, threads=threads)
        err = fp.ulp_error(fp.quantize(a.values, baseline), b.values, baseline.format)
        finite = np.isfinite(err)
        counts["nan"] += int(np.count_nonzero(~finite))
        vals, cnt = np.unique(ulp_bins(err[finite]), return_counts=True)
        for v, c in zip(vals.tolist(), cnt.tolist()):
            counts[v] += c
    if not counts["nan"]:
        del counts["nan"]
    return UlpHistogram(profile.name, baseline.name, n, dict(counts))
