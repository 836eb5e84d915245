"""Command-line front end: ``lunar-nmpc run|orbit|compare|validate``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
The default output directory comes from ``$LUNAR_NMPC_OUT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .bvp import BvpError
from .orbit import CorrectionError, OrbitFileError
from .pmp import ControllerFailure
from .scenario import Scenario, ScenarioError, parse_scenario
from .simulation import (
    CONFIG_ERROR,
    IO_ERROR,
    OK,
    SOLVER_FAILURE,
    RunFailure,
    SchemaMismatch,
    compare_runs,
    run,
    write_orbit_products,
)

OUT_ENV = "LUNAR_NMPC_OUT"
logger = logging.getLogger("lunar_nmpc")


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _error(kind: str, message: str, code: int, **extra) -> int:
    payload = {"error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _load(args) -> Scenario:
    scen = parse_scenario(args.scenario)
    overrides = {}
    if getattr(args, "seed_orbit", None):
        overrides[("orbit", "source")] = "file"
        overrides[("orbit", "file")] = str(Path(args.seed_orbit).resolve())
    if getattr(args, "tolerance", None) is not None:
        overrides[("integrator", "rtol")] = args.tolerance
    if getattr(args, "epsilon_schedule", None):
        overrides[("controller", "epsilon_schedule")] = args.epsilon_schedule
    if getattr(args, "format", None):
        overrides[("output", "format")] = args.format
    if getattr(args, "max_duration", None) is not None:
        overrides[("run", "max_duration_s")] = args.max_duration
    return scen.with_overrides(overrides) if overrides else scen


def _guarded(fn, args) -> int:
    """Map failures of any module onto the documented exit codes."""
    try:
        return fn(args)
    except (ScenarioError, UnicodeDecodeError, json.JSONDecodeError, OrbitFileError, SchemaMismatch) as exc:
        return _error("config", str(exc), CONFIG_ERROR)
    except FileNotFoundError as exc:
        return _error("config", str(exc), CONFIG_ERROR)
    except RunFailure as exc:
        return _error("io", str(exc), IO_ERROR, partial=exc.partial)
    except OSError as exc:
        return _error("io", str(exc), IO_ERROR)
    except (CorrectionError, ControllerFailure, BvpError, ArithmeticError, RuntimeError) as exc:
        return _error("solver", f"{type(exc).__name__}: {exc}", SOLVER_FAILURE)


def _progress(rec):
    if int(round(rec.t)) % 100 == 0:
        logger.info("t=%7.0f s |rho|=%10.3f m |u|=%.3f I=%.3f m/s", rec.t, float(sum(rec.rho**2) ** 0.5), rec.u_norm, rec.impulse)


def _run_one(scenario_path: str, out: str, options: dict) -> tuple[str, int, dict]:
    ns = argparse.Namespace(scenario=scenario_path, **options)
    scen = _load(ns)
    if options.get("orbit_only"):
        info = write_orbit_products(scen, out)
        return scenario_path, OK, {"period": info["period"], "events": len(info["events"])}
    res = run(scen, out, plots=False if options.get("no_plots") else None, progress=_progress)
    return scenario_path, res.exit_code, res.summary


def _batch_worker(item):
    path, out, options = item
    try:
        return _run_one(path, out, options)
    except Exception as exc:  # noqa: BLE001 - isolated worker, report and continue
        return path, SOLVER_FAILURE, {"error": f"{type(exc).__name__}: {exc}"}


def cmd_run(args) -> int:
    out = Path(args.out) if args.out else default_out()
    options = {
        k: getattr(args, k)
        for k in ("seed_orbit", "tolerance", "epsilon_schedule", "format", "max_duration", "orbit_only", "no_plots")
    }
    if args.batch:
        files = sorted(p for p in Path(args.batch).iterdir() if p.suffix in (".cfg", ".json"))
        if not files:
            return _error("config", f"no scenario files in {args.batch}", CONFIG_ERROR)
        items = [(str(p), str(out / p.stem), options) for p in files]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_batch_worker, items))
        worst = OK
        for path, code, summary in results:
            print(json.dumps({"scenario": path, "exit_code": code, **summary}))
            worst = max(worst, code)
        return worst
    if not args.scenario:
        return _error("config", "a scenario file (or --batch DIR) is required", CONFIG_ERROR)
    _, code, summary = _run_one(args.scenario, str(out), options)
    print(json.dumps(summary, indent=2))
    return code


def cmd_orbit(args) -> int:
    scen = _load(args)
    info = write_orbit_products(scen, Path(args.out) if args.out else default_out())
    print(json.dumps(info, indent=2))
    return OK


def cmd_compare(args) -> int:
    report = compare_runs(args.log_a, args.log_b, u_max=args.u_max)
    print(json.dumps(report, indent=2))
    return OK


def cmd_validate(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        scen = _load(args)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(json.dumps(scen.manifest(), indent=2))
    return OK


def _schedule(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lunar-nmpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        sp.add_argument("--seed-orbit", dest="seed_orbit", help="target orbit file instead of the seed")

    r = sub.add_parser("run", help="closed-loop rendezvous simulation")
    r.add_argument("scenario", nargs="?", help="scenario .cfg or run manifest .json")
    common(r)
    r.add_argument("--tolerance", type=float, help="plant integrator relative tolerance")
    r.add_argument("--epsilon-schedule", dest="epsilon_schedule", type=_schedule, help="e.g. 1e-1,1e-2,1e-3")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--max-duration", dest="max_duration", type=float, help="mission length bound [s]")
    r.add_argument("--orbit-only", dest="orbit_only", action="store_true", help="only the target orbit and events")
    r.add_argument("--no-plots", dest="no_plots", action="store_true", help="skip PNG rendering")
    r.add_argument("--batch", help="run every scenario in this directory")
    r.add_argument("--workers", type=int, default=None, help="parallel workers for --batch")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("orbit", help="correct the target orbit, write it with its apse events")
    o.add_argument("scenario")
    common(o)
    o.set_defaults(func=cmd_orbit)

    c = sub.add_parser("compare", help="differences between two run logs")
    c.add_argument("log_a")
    c.add_argument("log_b")
    c.add_argument("--u-max", dest="u_max", type=float, help="thrust level for the bang-bang audit")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="parse a scenario and print the resolved manifest")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return _guarded(args.func, args)


if __name__ == "__main__":
    raise SystemExit(main())
