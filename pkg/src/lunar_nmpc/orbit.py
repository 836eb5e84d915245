"""Target periodic orbit: halo differential correction, file I/O, apse events."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .cr3bp import (
    Cr3bpSystem,
    IntegratorSettings,
    SynodicState,
    Trajectory,
    potential_hessian,
    propagate,
    synodic_rhs,
)

logger = logging.getLogger(__name__)

# Southern L2 NRHO near the 9:2 lunar synodic resonance, x-z plane crossing at
# apolune. Coarse literature-style seed, refined by correct_halo.
DEFAULT_NRHO_SEED = np.array([1.0221, 0.0, -0.1821, 0.0, -0.1033, 0.0])
DEFAULT_NRHO_HALF_PERIOD = 0.7556


class CorrectionError(RuntimeError):
    """Differential correction did not converge."""


class OrbitFileError(ValueError):
    """Malformed trajectory file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnitMismatchError(OrbitFileError):
    pass


@dataclass(frozen=True)
class CorrectionSettings:
    tol: float = 1e-10
    max_iter: int = 25
    # which initial coordinate stays fixed: "z0" (default) or "x0"
    fixed: str = "z0"
    integrator: IntegratorSettings = IntegratorSettings(rtol=1e-13, atol=1e-13)


@dataclass
class PeriodicOrbit:
    """A closed orbit with dense output over one period."""

    initial_state: SynodicState
    period: float
    trajectory: Trajectory
    sys: Cr3bpSystem

    def wrap(self, t: float) -> float:
        return float(np.mod(t - self.initial_state.t, self.period) + self.initial_state.t)

    def state_vector(self, t) -> np.ndarray:
        """Interpolated 6-state at epoch(s) ``t`` (wrapped into one period)."""
        t = np.asarray(t, dtype=float)
        tw = np.mod(t - self.initial_state.t, self.period) + self.initial_state.t
        return self.trajectory(tw)

    def state(self, t: float) -> SynodicState:
        return SynodicState.from_vector(self.state_vector(t), t)

    def periodicity_error(self) -> np.ndarray:
        """Per-component mismatch between the stored end and start states."""
        return np.abs(self.trajectory.y[-1] - self.trajectory.y[0])


@dataclass(frozen=True)
class OrbitEvent:
    kind: str  # "apolune" | "perilune"
    epoch: float
    moon_distance: float


def stm_rhs(sys: Cr3bpSystem):
    """State + 6x6 variational equations (42 components)."""
    base = synodic_rhs(sys)
    omega = np.array([[0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def rhs(t, y):
        out = np.empty(42)
        out[:6] = base(t, y[:6])
        a = np.zeros((6, 6))
        a[:3, 3:] = np.eye(3)
        a[3:, :3] = -potential_hessian(sys, y[:3])
        a[3:, 3:] = omega
        phi = y[6:].reshape(6, 6)
        out[6:] = (a @ phi).ravel()
        return out

    return rhs


def propagate_with_stm(sys: Cr3bpSystem, y0, duration: float, settings: IntegratorSettings):
    """Return final state and STM after ``duration``."""
    z0 = np.concatenate([np.asarray(y0, float), np.eye(6).ravel()])
    sol = solve_ivp(
        stm_rhs(sys), (0.0, duration), z0, method="DOP853", rtol=settings.rtol, atol=settings.atol
    )
    if sol.status != 0:
        raise CorrectionError(f"variational propagation failed: {sol.message}")
    zf = sol.y[:, -1]
    return zf[:6], zf[6:].reshape(6, 6)


def correct_halo(
    sys: Cr3bpSystem,
    seed: SynodicState,
    half_period: float,
    settings: CorrectionSettings | None = None,
) -> PeriodicOrbit:
    """Single-shooting correction of a symmetric x-z plane crossing.

    Adjusts ``(x0, vy0, T/2)`` (or ``(z0, vy0, T/2)`` when ``fixed="x0"``)
    until the half-period state has ``y = vx = vz = 0``.
    """
    settings = settings or CorrectionSettings()
    y0 = seed.as_vector().copy()
    if abs(y0[1]) > 1e-12:
        raise ValueError("seed must lie on the x-z plane (y = 0)")
    y0[1] = 0.0
    y0[3] = 0.0
    y0[5] = 0.0
    free = {"z0": [0, 4], "x0": [2, 4]}[settings.fixed]
    rhs = synodic_rhs(sys)
    tau = float(half_period)
    for it in range(settings.max_iter + 1):
        yf, phi = propagate_with_stm(sys, y0, tau, settings.integrator)
        resid = yf[[1, 3, 5]]
        logger.debug("halo correction iter %d residual %.3e", it, np.max(np.abs(resid)))
        if np.max(np.abs(resid)) < settings.tol:
            break
        if it == settings.max_iter:
            raise CorrectionError(
                f"no convergence after {settings.max_iter} iterations, residual {np.max(np.abs(resid)):.3e}"
            )
        sens = np.max(np.abs(phi))
        if sens > 1e12:
            warnings.warn(f"state transition sensitivity {sens:.3e} exceeds 1e12", RuntimeWarning)
        dyf = rhs(tau, yf)
        jac = np.column_stack([phi[[1, 3, 5]][:, free[0]], phi[[1, 3, 5]][:, free[1]], dyf[[1, 3, 5]]])
        step = np.linalg.solve(jac, -resid)
        y0[free[0]] += step[0]
        y0[free[1]] += step[1]
        tau += step[2]
    period = 2.0 * tau
    s0 = SynodicState.from_vector(y0, 0.0)
    traj = propagate(sys, s0, period, settings.integrator)
    return PeriodicOrbit(s0, period, traj, sys)


def default_nrho(sys: Cr3bpSystem) -> PeriodicOrbit:
    """The shipped southern L2 NRHO stand-in, corrected for ``sys.mu``."""
    seed = SynodicState.from_vector(DEFAULT_NRHO_SEED)
    return correct_halo(sys, seed, DEFAULT_NRHO_HALF_PERIOD)


def orbit_from_samples(sys: Cr3bpSystem, t, y, period: float) -> PeriodicOrbit:
    """Wrap sampled states in a cubic Hermite interpolant.

    Node derivatives come from the CR3BP field, so the interpolant matches
    the state and its rate at every sample.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("epochs must be strictly increasing")
    rhs = synodic_rhs(sys)
    dy = np.array([rhs(tk, yk) for tk, yk in zip(t, y)])
    spline = CubicHermiteSpline(t, y, dy, axis=0)
    traj = Trajectory(t, y, lambda tt: np.asarray(spline(tt)).T)
    return PeriodicOrbit(SynodicState.from_vector(y[0], t[0]), float(period), traj, sys)


def save_orbit(path, orbit: PeriodicOrbit, n_samples: int | None = None, units: str = "normalized"):
    """Write the trajectory file format (header + ``t x y z vx vy vz`` rows)."""
    sys = orbit.sys
    if n_samples is None:
        t = orbit.trajectory.t
        y = orbit.trajectory.y
    else:
        t = np.linspace(orbit.initial_state.t, orbit.initial_state.t + orbit.period, n_samples)
        y = orbit.trajectory(t)
    period = orbit.period
    if units == "si":
        lu = sys.length_unit * 1e3
        tu = sys.time_unit
        t = t * tu
        y = y * np.array([lu] * 3 + [lu / tu] * 3)
        period = period * tu
    elif units != "normalized":
        raise ValueError(f"unknown units {units!r}")
    lines = [f"# units: {units}", f"# mu: {sys.mu!r}", f"# period: {float(period)!r}"]
    for tk, yk in zip(t, y):
        lines.append(" ".join(repr(float(v)) for v in (tk, *yk)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_orbit(path, sys: Cr3bpSystem) -> PeriodicOrbit:
    """Read a trajectory file; periodicity is reported, not enforced."""
    header: dict[str, str] = {}
    rows = []
    row_lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                header[key.strip().lower()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 7:
            raise OrbitFileError(f"expected 7 columns, found {len(parts)}", lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise OrbitFileError(f"non-numeric value ({exc})", lineno) from None
        row_lines.append(lineno)
    for key in ("units", "mu", "period"):
        if key not in header:
            raise OrbitFileError(f"missing header '# {key}: ...'")
    units = header["units"]
    if units not in ("normalized", "si"):
        raise OrbitFileError(f"unknown units {units!r}")
    try:
        mu = float(header["mu"])
        period = float(header["period"])
    except ValueError as exc:
        raise OrbitFileError(f"bad header value: {exc}") from None
    if not math.isclose(mu, sys.mu, rel_tol=1e-12, abs_tol=0.0):
        raise UnitMismatchError(f"file mu {mu!r} differs from system mu {sys.mu!r}")
    if len(rows) < 4:
        raise OrbitFileError("need at least 4 trajectory rows")
    data = np.array(rows)
    for k in range(1, len(data)):
        if data[k, 0] <= data[k - 1, 0]:
            raise OrbitFileError("epochs must be strictly increasing", row_lines[k])
    t, y = data[:, 0], data[:, 1:]
    if units == "si":
        lu = sys.length_unit * 1e3
        tu = sys.time_unit
        t = t / tu
        y = y / np.array([lu] * 3 + [lu / tu] * 3)
        period = period / tu
    orbit = orbit_from_samples(sys, t, y, period)
    if t[-1] - t[0] >= period * (1 - 1e-9):
        err = np.max(orbit.periodicity_error())
        if err > 1e-8:
            logger.warning("loaded orbit is not closed: endpoint mismatch %.3e", err)
    return orbit


def moon_distance(orbit: PeriodicOrbit, t) -> np.ndarray:
    y = orbit.state_vector(t)
    return np.linalg.norm(y[..., :3] - orbit.sys.r_om, axis=-1)


def _range_rate(orbit: PeriodicOrbit, t: float) -> float:
    y = orbit.state_vector(t)
    d = y[:3] - orbit.sys.r_om
    return float(d @ y[3:6] / np.linalg.norm(d))


def find_extreme_points(orbit: PeriodicOrbit, n_samples: int = 2000) -> list[OrbitEvent]:
    """Extrema of the Moon distance over one period, sorted by epoch.

    Roots of the range rate are bracketed on a periodic grid and refined with
    Brent's method; the kind follows from the sign change direction.
    """
    t0 = orbit.initial_state.t
    grid = t0 + orbit.period * np.arange(n_samples + 1) / n_samples
    rate = np.array([_range_rate(orbit, t) for t in grid])
    events = []
    for k in range(n_samples):
        a, b = grid[k], grid[k + 1]
        fa, fb = rate[k], rate[k + 1]
        if fa == 0.0 and k > 0:
            continue  # already counted as the right end of the previous cell
        if fa == 0.0:
            root = a
        elif fa * fb < 0.0:
            root = brentq(lambda t: _range_rate(orbit, t), a, b, xtol=1e-12, rtol=1e-15)
        else:
            continue
        kind = "apolune" if fb < 0.0 else "perilune"
        root = orbit.wrap(root)
        events.append(OrbitEvent(kind, root, float(moon_distance(orbit, root))))
    events.sort(key=lambda e: e.epoch)
    return events


def rendezvous_epoch(orbit: PeriodicOrbit, offset_hours: float) -> float:
    """Epoch ``offset_hours`` before apolune, wrapped into one period."""
    if offset_hours < 0:
        raise ValueError("offset_hours must be non-negative")
    apo = max(
        (e for e in find_extreme_points(orbit) if e.kind == "apolune"), key=lambda e: e.moon_distance
    )
    dt = offset_hours * 3600.0 / orbit.sys.time_unit
    return orbit.wrap(apo.epoch - dt)
