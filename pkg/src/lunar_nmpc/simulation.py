"""Scenario execution and result files.

Everything written here is SI (s, m, m/s, m/s^2); column names carry the
unit suffix.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cr3bp import SynodicState
from .orbit import (
    PeriodicOrbit,
    correct_halo,
    find_extreme_points,
    load_orbit,
    rendezvous_epoch,
    save_orbit,
)
from .pmp import RunLog, run_closed_loop
from .relative import RelativeState
from .scenario import Scenario

logger = logging.getLogger(__name__)

COLUMNS = (
    "t_s",
    "rho_x_m",
    "rho_y_m",
    "rho_z_m",
    "v_x_mps",
    "v_y_mps",
    "v_z_mps",
    "u_x_mps2",
    "u_y_mps2",
    "u_z_mps2",
    "u_norm_mps2",
    "upsilon",
    "cost",
    "impulse_mps",
)

# exit statuses
OK, CONFIG_ERROR, SOLVER_FAILURE, IO_ERROR = 0, 2, 3, 4


class RunFailure(RuntimeError):
    """A module failed during the run; ``partial`` tells whether files exist."""

    def __init__(self, message: str, partial: bool = False):
        self.partial = partial
        super().__init__(message)


class SchemaMismatch(ValueError):
    pass


def prepare_orbit(scen: Scenario) -> PeriodicOrbit:
    sys = scen.system
    if scen.get("orbit", "source") == "file":
        return load_orbit(scen.get("orbit", "file"), sys)
    seed = SynodicState.from_vector(scen.get("orbit", "seed_state"))
    return correct_halo(sys, seed, scen.get("orbit", "half_period"))


def initial_state(scen: Scenario, orbit: PeriodicOrbit) -> RelativeState:
    sys = orbit.sys
    lu = sys.length_unit * 1e3
    vu = lu / sys.time_unit
    x = scen.initial_si / np.array([lu] * 3 + [vu] * 3)
    return RelativeState.from_vector(x, rendezvous_epoch(orbit, scen.get("orbit", "rendezvous_offset_h")))


def log_rows(log: RunLog) -> list[list[float]]:
    rows = []
    for r in log.records:
        rows.append(
            [r.t, *r.rho, *r.rho_dot, *r.u, r.u_norm, r.upsilon, r.cost, r.impulse]
        )
    return rows


def _fmt(v: float) -> str:
    return repr(float(v))


def write_table(path: Path, columns, rows, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        data = {c: [float(row[i]) for row in rows] for i, c in enumerate(columns)}
        path.write_text(json.dumps(data, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a run log written as csv or json."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        cols = list(data)
        return cols, np.column_stack([np.asarray(data[c], dtype=float) for c in cols])
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return cols, np.array(rows, dtype=float).reshape(-1, len(cols))


def _write_dat(path: Path, header: str, data: np.ndarray) -> None:
    np.savetxt(path, data, header=header, fmt="%.17g")


def write_plot_data(out: Path, log: RunLog) -> list[str]:
    """Whitespace-separated text files behind the four result figures."""
    t = log.array("t")
    rho = log.array("rho")
    vel = log.array("rho_dot")
    u = log.array("u")
    files = {
        "trajectory_3d.dat": ("x_m y_m z_m", rho),
        "states.dat": ("t_s x_m y_m z_m vx_mps vy_mps vz_mps", np.column_stack([t, rho, vel])),
        "thrust.dat": (
            "t_s ux_mps2 uy_mps2 uz_mps2 unorm_mps2",
            np.column_stack([t, u, log.array("u_norm")]),
        ),
        "switching.dat": ("t_s upsilon", np.column_stack([t, log.array("upsilon")])),
    }
    for name, (header, data) in files.items():
        _write_dat(out / name, header, data)
    return list(files)


def switch_times(t: np.ndarray, u_norm: np.ndarray) -> np.ndarray:
    """Sample times where the engine changes between off and on."""
    on = u_norm > 0
    idx = np.nonzero(on[1:] != on[:-1])[0] + 1
    return t[idx]


def summarize(log: RunLog, scen: Scenario, wall: float) -> dict:
    ref = np.concatenate([scen.get("reference", "rho_m"), scen.get("reference", "rho_dot_mps")])
    final = np.concatenate([log.records[-1].rho, log.records[-1].rho_dot]) if log.records else None
    u_norm = log.array("u_norm") if log.records else np.zeros(0)
    u_max = scen.get("controller", "u_max_mps2")
    degraded = int(sum(r.degraded for r in log.records))
    return {
        "status": log.status,
        "message": log.message,
        "partial": log.status not in ("converged", "max_duration"),
        "steps": len(log.records),
        "duration_s": log.records[-1].t if log.records else 0.0,
        "impulse_mps": log.impulse,
        "weight_units": scen.get("controller", "weight_units"),
        "final_error": None if final is None else dict(zip(COLUMNS[1:7], (final - ref).tolist())),
        "switches": int(switch_times(log.array("t"), u_norm).size) if log.records else 0,
        "off_level_samples": int(np.sum((u_norm != 0) & (u_norm != u_max))),
        "degraded_steps": degraded,
        "wall_time_s": wall,
        "wall_per_step_s": _wall_stats(log),
    }


def _wall_stats(log: RunLog) -> dict:
    w = log.array("wall") if log.records else np.zeros(1)
    return {"mean": float(np.mean(w)), "max": float(np.max(w)), "median": float(np.median(w))}


@dataclass
class RunResult:
    log: RunLog
    summary: dict
    files: list[str]
    exit_code: int


def run(scen: Scenario, out_dir, plots: bool | None = None, progress=None) -> RunResult:
    """Execute one scenario and write all outputs into ``out_dir``.

    Writes the run log (csv or json), ``summary.json``, ``manifest.json``
    (enough to rerun), figure data and, if enabled, PNG figures.
    """
    import time

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(scen.manifest(), indent=2) + "\n")
    except OSError as exc:
        raise RunFailure(f"cannot write to {out}: {exc}") from exc
    orbit = prepare_orbit(scen)
    x0 = initial_state(scen, orbit)
    t0 = time.perf_counter()
    log = run_closed_loop(
        x0, orbit, scen.nmpc_config(), scen.stop_criteria(), scen.integrator(), progress=progress
    )
    wall = time.perf_counter() - t0
    summary = summarize(log, scen, wall)
    fmt = scen.get("output", "format")
    files = [f"runlog.{fmt}", "summary.json", "manifest.json"]
    try:
        write_table(out / f"runlog.{fmt}", COLUMNS, log_rows(log), fmt)
        if log.records:
            files += write_plot_data(out, log)
        do_plots = scen.get("output", "plots") if plots is None else plots
        if do_plots and log.records:
            from .plotting import render_figures

            files += render_figures(out, log)
        summary["files"] = files
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    except OSError as exc:
        raise RunFailure(f"cannot write results to {out}: {exc}", partial=True) from exc
    code = OK if not summary["partial"] else SOLVER_FAILURE
    return RunResult(log, summary, files, code)


def write_orbit_products(scen: Scenario, out_dir) -> dict:
    """Target orbit file and apse events, no control."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    orbit = prepare_orbit(scen)
    save_orbit(out / "target_orbit.txt", orbit)
    events = find_extreme_points(orbit)
    lu_km = orbit.sys.length_unit
    tu = orbit.sys.time_unit
    info = {
        "period": orbit.period,
        "period_s": orbit.period * tu,
        "initial_state": orbit.initial_state.as_vector().tolist(),
        "periodicity_error": float(np.max(orbit.periodicity_error())),
        "rendezvous_epoch": rendezvous_epoch(orbit, scen.get("orbit", "rendezvous_offset_h")),
        "events": [
            {"kind": e.kind, "epoch": e.epoch, "epoch_s": e.epoch * tu, "moon_distance_km": e.moon_distance * lu_km}
            for e in events
        ],
    }
    (out / "orbit_events.json").write_text(json.dumps(info, indent=2) + "\n")
    (out / "manifest.json").write_text(json.dumps(scen.manifest(), indent=2) + "\n")
    return info


def compare_runs(path_a, path_b, u_max: float | None = None) -> dict:
    """Column-wise differences between two run logs.

    Rows are compared up to the shorter log. ``u_max`` (default: the largest
    thrust magnitude seen in either log) is used to audit that every sample
    is either off or at full thrust.
    """
    cols_a, a = read_table(path_a)
    cols_b, b = read_table(path_b)
    if cols_a != cols_b:
        raise SchemaMismatch(f"column sets differ: {cols_a} vs {cols_b}")
    n = min(len(a), len(b))
    diff = a[:n] - b[:n]
    columns = {}
    for i, c in enumerate(cols_a):
        d = diff[:, i]
        finite = np.isfinite(d) | (np.isnan(a[:n, i]) & np.isnan(b[:n, i]))
        d = np.where(np.isnan(a[:n, i]) & np.isnan(b[:n, i]), 0.0, d)
        columns[c] = {
            "max_abs": float(np.max(np.abs(d))) if n and finite.all() else (0.0 if not n else float("inf")),
            "rms": float(np.sqrt(np.mean(d**2))) if n and finite.all() else (0.0 if not n else float("inf")),
        }
    idx = {c: i for i, c in enumerate(cols_a)}
    report = {"rows": [len(a), len(b)], "columns": columns}
    if "impulse_mps" in idx:
        ia = a[-1, idx["impulse_mps"]] if len(a) else 0.0
        ib = b[-1, idx["impulse_mps"]] if len(b) else 0.0
        report["impulse"] = {
            "a": float(ia),
            "b": float(ib),
            "delta": float(ib - ia),
            "relative": float((ib - ia) / ia) if ia else (0.0 if ib == ia else float("inf")),
        }
    if "u_norm_mps2" in idx and "t_s" in idx:
        ua, ub = a[:, idx["u_norm_mps2"]], b[:, idx["u_norm_mps2"]]
        sa = switch_times(a[:, idx["t_s"]], ua)
        sb = switch_times(b[:, idx["t_s"]], ub)
        m = min(sa.size, sb.size)
        report["switches"] = {
            "a": sa.tolist(),
            "b": sb.tolist(),
            "count_match": bool(sa.size == sb.size),
            "max_shift_s": float(np.max(np.abs(sa[:m] - sb[:m]))) if m else 0.0,
        }
        level = u_max if u_max is not None else float(max(ua.max(initial=0.0), ub.max(initial=0.0)))
        flagged = {}
        for name, t, un in (("a", a[:, idx["t_s"]], ua), ("b", b[:, idx["t_s"]], ub)):
            bad = (un != 0.0) & (un != level)
            flagged[name] = t[bad].tolist()
        report["off_level_samples"] = flagged
    return report
