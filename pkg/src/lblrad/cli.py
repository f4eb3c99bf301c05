"""Command-line front end.

    lblrad probe    [--profile NAME|FILE|all] [--probe ID|all] [--samples N]
    lblrad run      SCENARIO --out DIR [--backend B]
    lblrad bench    [--sweep 2^10..2^20] [--rays 100] [--backend B|both]
    lblrad genlines N --out FILE [--band LO,HI]

Global flags --seed, --threads, --profile and --out go before or after the
subcommand.  Exit status: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bench as bench_mod
from . import fpmodel as fp
from . import probes
from .mcrt import BACKENDS, monte_carlo
from .scenario import load_scenario
from .spectra import generate_lines, save_lines

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
POWER_COLUMNS = ("cell", "i", "j", "k", "T", "mean_power", "stderr")


class _Invalid(Exception):
    pass


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="u64 seed")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads")
    p.add_argument("--profile", default=d(None), help="arithmetic profile name or file")
    p.add_argument("--out", default=d(None), help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lblrad", description=__doc__.split("\n")[0])
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)
    g = argparse.ArgumentParser(add_help=False)
    _add_globals(g, suppress=True)

    p = sub.add_parser("probe", parents=[g], help="replay the arithmetic probe suite")
    p.add_argument("--probe", default="all", help="probe id or 'all'")
    p.add_argument("--samples", type=int, default=probes.RANDOM_SAMPLES,
                   help="random samples per random probe")

    p = sub.add_parser("run", parents=[g], help="run a Monte-Carlo scenario")
    p.add_argument("scenario")
    p.add_argument("--backend", choices=BACKENDS, default=None, help="override the scenario")

    p = sub.add_parser("bench", parents=[g], help="lines/second against lines per ray")
    p.add_argument("--sweep", default="2^10..2^20")
    p.add_argument("--rays", type=int, default=100)
    p.add_argument("--backend", choices=BACKENDS + ("both",), default="both")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--grid-points", type=int, default=bench_mod.GRID_POINTS,
                   help="wavenumber grid size shared by all sweep points")

    p = sub.add_parser("genlines", parents=[g], help="write a synthetic line list")
    p.add_argument("n", type=int)
    p.add_argument("--band", default="200,10200", help="lo,hi in cm^-1")
    return ap


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _profiles(spec: str | None) -> list[fp.UnitProfile]:
    if spec is None or spec == "all":
        return [fp.PRESETS[n] for n in fp.GPU_PRESETS + ("IEEE-RN",)]
    return [fp.get_profile(spec)]


def cmd_probe(args) -> int:
    profs = _profiles(args.profile)
    ids = None if args.probe == "all" else [args.probe]
    if args.samples < 1:
        raise _Invalid("--samples must be >= 1")
    reports = probes.run_suite(profs, seed=args.seed or 0, probe_ids=ids, samples=args.samples,
                               threads=args.threads)
    _write_text(args.out, probes.render_report(reports))
    bad = sum(not r.match for r in reports)
    print(f"{len(reports) - bad}/{len(reports)} probe rows match", file=sys.stderr)
    return EXIT_OK


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _versions() -> dict:
    import numba

    return {"lblrad": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def _power_csv(sc, res) -> str:
    rows = [",".join(POWER_COLUMNS)]
    for c in range(sc.grid.n_cells):
        i, j, k = sc.grid.coords(c)
        rows.append(f"{c},{i},{j},{k},{sc.grid.cells[c].T!r},{float(res.mean[c])!r},"
                    f"{float(res.stderr[c])!r}")
    return "\n".join(rows) + "\n"


def cmd_run(args) -> int:
    if args.out is None:
        raise _Invalid("run needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {"status": "incomplete", "scenario": {"path": args.scenario}, "versions": _versions()}

    def write_manifest():
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8", newline="\n")

    write_manifest()
    try:
        sc = load_scenario(args.scenario)
        seed = sc.seed if args.seed is None else args.seed
        backend = args.backend or sc.backend
        profile = None if args.profile is None else fp.get_profile(args.profile)
        manifest["scenario"]["sha256"] = _sha256(sc.text.encode("utf-8"))
        manifest["scenario"]["text"] = sc.text
        manifest["lines"] = {"source": sc.lines_source, "count": len(sc.db)}
        if not sc.lines_source.startswith("synthetic:"):
            manifest["lines"]["sha256"] = _sha256(Path(sc.lines_source).read_bytes())
        manifest.update(seed=seed, backend=backend, n_rays=sc.n_rays,
                        profile=None if profile is None else profile.name)
        res = monte_carlo(sc.n_rays, sc.sampler, sc.grid, sc.db, sc.nu_grid, sc.boundary,
                          seed=seed, profile=profile, backend=backend, threads=args.threads)
        power = _power_csv(sc, res).encode("utf-8")
        (out / "power.csv").write_bytes(power)
        spec = res.exit_mean.to_bytes()
        (out / "exit_spectrum.bin").write_bytes(spec)
        manifest["outputs"] = {"power.csv": _sha256(power), "exit_spectrum.bin": _sha256(spec)}
        manifest["total_power"] = {"mean": res.total_mean, "stderr": res.total_stderr}
        manifest["status"] = "ok"
    except BaseException as e:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(e).__name__}: {e}"
        write_manifest()
        raise
    write_manifest()
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        sweep = bench_mod.parse_sweep(args.sweep)
    except ValueError as e:
        raise _Invalid(f"--sweep: {e}") from None
    if args.rays < 1 or args.reps < 1 or args.warmup < 0:
        raise _Invalid("--rays and --reps must be >= 1, --warmup >= 0")
    backends = BACKENDS if args.backend == "both" else (args.backend,)
    pts = bench_mod.sweep(sweep, backends, rays=args.rays, seed=args.seed or 0,
                          threads=args.threads, reps=args.reps, warmup=args.warmup,
                          grid_points=args.grid_points)
    _write_text(args.out, bench_mod.render_csv(pts))
    return EXIT_OK


def cmd_genlines(args) -> int:
    if args.n < 0:
        raise _Invalid("line count must be >= 0")
    if args.out is None:
        raise _Invalid("genlines needs --out FILE")
    try:
        lo, hi = (float(x) for x in args.band.split(","))
    except ValueError:
        raise _Invalid(f"--band must be lo,hi, got {args.band!r}") from None
    if not 0 < lo < hi:
        raise _Invalid("--band needs 0 < lo < hi")
    save_lines(generate_lines(args.n, seed=args.seed or 0, band=(lo, hi)), args.out)
    return EXIT_OK


COMMANDS = {"probe": cmd_probe, "run": cmd_run, "bench": cmd_bench, "genlines": cmd_genlines}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("lblrad: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("lblrad: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (_Invalid, ValueError, KeyError, FileNotFoundError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"lblrad: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (MemoryError, OSError, RuntimeError) as e:
        print(f"lblrad: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
