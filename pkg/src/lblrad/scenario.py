"""Scenario files: an INI description of a Monte-Carlo run.

Example::

    [grid]
    dims = 4, 1, 1
    cell_size = 10, 10, 10          # cm

    [medium]                        # state of every cell unless overridden
    T = 1000
    p = 1
    u_CO2 = 1e17
    u_H2O = 0

    [region hot]                    # half-open index boxes i0:i1, j0:j1, k0:k1
    box = 0:2, 0:1, 0:1
    T = 1500

    [cell 3,0,0]
    u_CO2 = 0

    [spectrum]
    start = 2000
    step = 0.01
    n = 65536

    [lines]
    synthetic = 20000               # or: file = lines.txt (relative to this file)
    seed = 1

    [boundary]
    planck_T = 300                  # or: file = boundary.bin

    [sampler]
    face = x-
    direction = cosine              # or fixed, with optional fixed_direction = dx, dy, dz

    [run]
    rays = 100
    seed = 0
    backend = scalar

Later sections override earlier ones: medium, then regions in file order,
then single cells.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mcrt import BACKENDS, CellState, SamplerConfig, VoxelGrid
from .spectra import GASES, LineDatabase, LineFileError, SpectralField, generate_lines, load_lines
from .transfer import planck

__all__ = ["Scenario", "ScenarioError", "load_scenario", "parse_scenario"]

STATE_KEYS = ("t", "p") + tuple(f"u_{g.lower()}" for g in GASES)


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with ``file:line:``."""


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: VoxelGrid
    db: LineDatabase
    nu_grid: SpectralField
    boundary: SpectralField
    sampler: SamplerConfig
    n_rays: int
    seed: int
    backend: str
    source: str  # path of the scenario file
    text: str  # its content, for the manifest
    lines_source: str  # "synthetic:<n>:<seed>" or the resolved line-file path


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line holding it."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]", line)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = no
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        if section is not None:
            out.setdefault((section, key), no)
    return out


class _Reader:
    def __init__(self, text: str, path: str):
        self.path = path
        self.lines = _key_lines(text)
        self.cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                            default_section="\x00none")
        try:
            self.cp.read_string(text, source=path)
        except configparser.Error as e:
            lineno = getattr(e, "lineno", None)
            raise ScenarioError(f"{path}:{lineno or 1}: {e.message.splitlines()[0]}") from None

    def fail(self, section: str, key: str, msg: str):
        no = self.lines.get((section, key)) or self.lines.get((section, ""), 1)
        raise ScenarioError(f"{self.path}:{no}: [{section}] {key}: {msg}".replace(" : ", ": "))

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_option(section, key)

    def get(self, section: str, key: str, default=None) -> str:
        if not self.cp.has_section(section):
            if default is None:
                raise ScenarioError(f"{self.path}:1: missing section [{section}]")
            return default
        if not self.cp.has_option(section, key):
            if default is None:
                self.fail(section, "", f"missing key {key!r}")
            return default
        return self.cp.get(section, key).strip()

    def num(self, section: str, key: str, kind=float, default=None):
        raw = self.get(section, key, None if default is None else str(default))
        try:
            if kind is int:
                v = float(raw)
                if v != int(v):
                    raise ValueError
                return int(raw) if raw.lstrip("+-").isdigit() else int(v)
            return float(raw)
        except (ValueError, OverflowError):
            self.fail(section, key, f"not a {'whole ' if kind is int else ''}number: {raw!r}")

    def vec(self, section: str, key: str, n: int, kind=float, default=None):
        raw = self.get(section, key, default)
        parts = [x for x in re.split(r"[,\s]+", raw) if x]
        if len(parts) != n:
            self.fail(section, key, f"expected {n} values, got {len(parts)}")
        try:
            return tuple(kind(x) for x in parts)
        except ValueError:
            self.fail(section, key, f"bad value list {raw!r}")


def _state_updates(r: _Reader, section: str) -> dict:
    upd = {}
    for key in STATE_KEYS:
        if r.has(section, key):
            upd[key] = r.num(section, key)
            if key == "t" and not upd[key] > 0:
                r.fail(section, key, "temperature must be > 0")
            if key.startswith("u_") and not upd[key] >= 0:
                r.fail(section, key, "density must be >= 0")
    unknown = set(r.cp.options(section)) - set(STATE_KEYS) - {"box"}
    if unknown:
        r.fail(section, sorted(unknown)[0], "unknown key")
    return upd


def _apply(state: CellState, upd: dict) -> CellState:
    T = upd.get("t", state.T)
    p = upd.get("p", state.p)
    u = dict(state.u)
    for g in GASES:
        if f"u_{g.lower()}" in upd:
            u[g] = upd[f"u_{g.lower()}"]
    return CellState(T, p, u)


def _box(r: _Reader, section: str, dims):
    raw = r.get(section, "box")
    parts = [x.strip() for x in raw.split(",")]
    if len(parts) != 3:
        r.fail(section, "box", "expected three ranges i0:i1, j0:j1, k0:k1")
    out = []
    for p, n in zip(parts, dims):
        m = re.fullmatch(r"(\d+)\s*:\s*(\d+)", p)
        if not m:
            r.fail(section, "box", f"bad range {p!r}")
        a, b = int(m.group(1)), int(m.group(2))
        if not 0 <= a < b <= n:
            r.fail(section, "box", f"range {p!r} outside 0:{n}")
        out.append((a, b))
    return out


def parse_scenario(text: str, path: str = "<scenario>", base: Path | None = None) -> Scenario:
    r = _Reader(text, path)
    base = Path(base) if base is not None else Path(path).resolve().parent

    dims = r.vec("grid", "dims", 3, int)
    size = r.vec("grid", "cell_size", 3, float)
    if min(dims) < 1:
        r.fail("grid", "dims", "every dimension must be >= 1")
    if min(size) <= 0:
        r.fail("grid", "cell_size", "cell sizes must be > 0")

    base_state = CellState(300.0, 1.0, {})
    if r.cp.has_section("medium"):
        try:
            base_state = _apply(base_state, _state_updates(r, "medium"))
        except ScenarioError:
            raise
        except ValueError as e:
            r.fail("medium", "", str(e))
    nx, ny, nz = dims
    cells = np.empty(nx * ny * nz, dtype=object)
    cells[:] = [base_state] * cells.size

    def idx(i, j, k):
        return (k * ny + j) * nx + i

    for section in r.cp.sections():
        kind = section.split(None, 1)[0]
        try:
            if kind == "region":
                (i0, i1), (j0, j1), (k0, k1) = _box(r, section, dims)
                upd = _state_updates(r, section)
                for k in range(k0, k1):
                    for j in range(j0, j1):
                        for i in range(i0, i1):
                            cells[idx(i, j, k)] = _apply(cells[idx(i, j, k)], upd)
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            r.fail(section, "", str(e))
    for section in r.cp.sections():
        kind, _, rest = section.partition(" ")
        if kind != "cell":
            continue
        try:
            i, j, k = (int(x) for x in rest.replace(",", " ").split())
        except ValueError:
            r.fail(section, "", "cell sections are named [cell i,j,k]")
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            r.fail(section, "", "cell index outside the grid")
        try:
            cells[idx(i, j, k)] = _apply(cells[idx(i, j, k)], _state_updates(r, section))
        except ScenarioError:
            raise
        except ValueError as e:
            r.fail(section, "", str(e))
    known = {"grid", "medium", "spectrum", "lines", "boundary", "sampler", "run"}
    for section in r.cp.sections():
        if section not in known and section.split(None, 1)[0] not in ("region", "cell"):
            r.fail(section, "", "unknown section")
    grid = VoxelGrid(tuple(dims), tuple(size), tuple(cells))

    start = r.num("spectrum", "start")
    step = r.num("spectrum", "step")
    n = r.num("spectrum", "n", int)
    if not (start > 0 and step > 0 and n >= 1):
        r.fail("spectrum", "", "need start > 0, step > 0, n >= 1")
    try:
        nu_grid = SpectralField.zeros(start, step, n)
    except ValueError as e:
        r.fail("spectrum", "n", str(e))

    if r.has("lines", "file"):
        lp = (base / r.get("lines", "file")).resolve()
        try:
            db = load_lines(lp)
        except OSError as e:
            r.fail("lines", "file", f"cannot read {lp}: {e.strerror}")
        except LineFileError as e:
            raise ScenarioError(str(e)) from None
        lines_source = str(lp)
    else:
        count = r.num("lines", "synthetic", int)
        lseed = r.num("lines", "seed", int, default=0)
        if count < 0:
            r.fail("lines", "synthetic", "line count must be >= 0")
        band = (start, start + step * (n - 1))
        db = generate_lines(count, seed=lseed, band=band)
        lines_source = f"synthetic:{count}:{lseed}"

    if r.has("boundary", "file"):
        bp = (base / r.get("boundary", "file")).resolve()
        try:
            boundary = SpectralField.load(bp)
        except (OSError, ValueError) as e:
            r.fail("boundary", "file", f"cannot read {bp}: {e}")
        if not boundary.same_grid(nu_grid):
            r.fail("boundary", "file", "boundary spectrum is not on the [spectrum] grid")
        boundary = boundary.with_values(np.asarray(boundary.values, dtype=np.float64))
    else:
        tb = r.num("boundary", "planck_T")
        if not tb > 0:
            r.fail("boundary", "planck_T", "must be > 0")
        boundary = nu_grid.with_values(np.asarray(planck(nu_grid.nu, tb), dtype=np.float64))

    face = r.get("sampler", "face", "x-")
    if face not in ("x-", "x+", "y-", "y+", "z-", "z+"):
        r.fail("sampler", "face", f"one of x-, x+, y-, y+, z-, z+, got {face!r}")
    law = r.get("sampler", "direction", "cosine")
    if law not in ("fixed", "cosine"):
        r.fail("sampler", "direction", f"fixed or cosine, got {law!r}")
    fixed = r.vec("sampler", "fixed_direction", 3) if r.has("sampler", "fixed_direction") else None
    try:
        sampler = SamplerConfig(face, law, fixed)
    except ValueError as e:
        r.fail("sampler", "", str(e))

    n_rays = r.num("run", "rays", int)
    if n_rays < 1:
        r.fail("run", "rays", "must be >= 1")
    seed = r.num("run", "seed", int, default=0)
    if seed < 0:
        r.fail("run", "seed", "must be >= 0")
    backend = r.get("run", "backend", "scalar")
    if backend not in BACKENDS:
        r.fail("run", "backend", f"one of {', '.join(BACKENDS)}")

    return Scenario(grid, db, nu_grid, boundary, sampler, n_rays, seed, backend,
                    path, text, lines_source)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"{p}:0: cannot read scenario: {e.strerror}") from None
    return parse_scenario(text, str(p), p.resolve().parent)
