"""Normalized circular restricted three-body dynamics in the synodic frame.

Everything here works in normalized units: distances in Earth-Moon
separations, time in ``period / 2pi``, synodic rotation rate equal to one.
SI only shows up in :func:`to_si` / :func:`from_si`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

__all__ = [
    "Cr3bpSystem",
    "SynodicState",
    "Trajectory",
    "IntegratorSettings",
    "SingularPositionError",
    "PropagationError",
    "EARTH_MOON",
    "effective_potential",
    "potential_gradient",
    "potential_hessian",
    "synodic_accel",
    "synodic_rhs",
    "jacobi_integral",
    "lagrange_points",
    "propagate",
    "to_si",
    "from_si",
]

SINGULAR_DISTANCE = 1e-12


class SingularPositionError(ValueError):
    """Raised when a position coincides with one of the primaries."""


class PropagationError(RuntimeError):
    """Raised when the integrator fails (step underflow, tolerance not met)."""


@dataclass(frozen=True)
class Cr3bpSystem:
    """Mass ratio and the scales used to normalize lengths and times.

    ``length_unit`` is in km, ``period`` is the synodic revolution in seconds.
    """

    mu: float = 0.01215
    length_unit: float = 384400.0
    period: float = 2360591.424

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 0.5), got {self.mu}")
        if self.length_unit <= 0.0:
            raise ValueError("length_unit must be positive")
        if self.period <= 0.0:
            raise ValueError("period must be positive")

    @property
    def time_unit(self) -> float:
        """Seconds per normalized time unit."""
        return self.period / (2.0 * math.pi)

    @property
    def r_oe(self) -> np.ndarray:
        return np.array([-self.mu, 0.0, 0.0])

    @property
    def r_om(self) -> np.ndarray:
        return np.array([1.0 - self.mu, 0.0, 0.0])


EARTH_MOON = Cr3bpSystem()


@dataclass(frozen=True)
class SynodicState:
    """Position, velocity and epoch in the normalized synodic frame."""

    r: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3)
        v = np.array(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v)) and math.isfinite(self.t)):
            raise ValueError("synodic state components must be finite")
        r.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def from_vector(cls, y, t: float = 0.0) -> "SynodicState":
        y = np.asarray(y, dtype=float)
        return cls(y[:3], y[3:6], t)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])


def _primary_offsets(sys: Cr3bpSystem, r: np.ndarray):
    """Vectors from Earth and Moon to ``r`` (last axis holds xyz)."""
    r = np.asarray(r, dtype=float)
    d_e = r - sys.r_oe
    d_m = r - sys.r_om
    n_e = np.linalg.norm(d_e, axis=-1)
    n_m = np.linalg.norm(d_m, axis=-1)
    if np.any(n_e < SINGULAR_DISTANCE) or np.any(n_m < SINGULAR_DISTANCE):
        raise SingularPositionError(
            f"position within {SINGULAR_DISTANCE:g} of a primary "
            f"(|r-r_oe|={np.min(n_e):.3e}, |r-r_om|={np.min(n_m):.3e})"
        )
    return d_e, d_m, n_e, n_m


def effective_potential(sys: Cr3bpSystem, r) -> float:
    """Effective potential including the constant ``-mu(1-mu)/2`` term."""
    r = np.asarray(r, dtype=float)
    _, _, n_e, n_m = _primary_offsets(sys, r)
    mu = sys.mu
    return (
        -(r[..., 0] ** 2 + r[..., 1] ** 2) / 2.0
        - (1.0 - mu) / n_e
        - mu / n_m
        - mu * (1.0 - mu) / 2.0
    )


def potential_gradient(sys: Cr3bpSystem, r) -> np.ndarray:
    """Analytic gradient of :func:`effective_potential`."""
    r = np.asarray(r, dtype=float)
    d_e, d_m, n_e, n_m = _primary_offsets(sys, r)
    mu = sys.mu
    grad = (1.0 - mu) * d_e / n_e[..., None] ** 3 + mu * d_m / n_m[..., None] ** 3
    grad[..., 0] -= r[..., 0]
    grad[..., 1] -= r[..., 1]
    return grad


def potential_hessian(sys: Cr3bpSystem, r) -> np.ndarray:
    """Second derivatives of the effective potential, shape (3, 3)."""
    r = np.asarray(r, dtype=float)
    d_e, d_m, n_e, n_m = _primary_offsets(sys, r)
    mu = sys.mu
    eye = np.eye(3)
    hess = -np.diag([1.0, 1.0, 0.0])
    for m_i, d, n in ((1.0 - mu, d_e, n_e), (mu, d_m, n_m)):
        hess = hess + m_i * (eye / n**3 - 3.0 * np.outer(d, d) / n**5)
    return hess


def synodic_accel(sys: Cr3bpSystem, s: SynodicState) -> np.ndarray:
    """Acceleration of an uncontrolled body in the rotating frame."""
    grad = potential_gradient(sys, s.r)
    v = s.v
    return np.array([2.0 * v[1] - grad[0], -2.0 * v[0] - grad[1], -grad[2]])


def synodic_rhs(sys: Cr3bpSystem, control: Callable | None = None):
    """Right-hand side ``f(t, y)`` for the 6-state system.

    ``control(t, y)`` optionally returns an extra synodic acceleration.
    """
    mu = sys.mu
    xe, xm = -mu, 1.0 - mu

    def rhs(t, y):
        x, yy, z, vx, vy, vz = y
        de = math.sqrt((x - xe) ** 2 + yy * yy + z * z)
        dm = math.sqrt((x - xm) ** 2 + yy * yy + z * z)
        if de < SINGULAR_DISTANCE or dm < SINGULAR_DISTANCE:
            raise SingularPositionError("trajectory reached a primary")
        ce = (1.0 - mu) / de**3
        cm = mu / dm**3
        ax = 2.0 * vy + x - ce * (x - xe) - cm * (x - xm)
        ay = -2.0 * vx + yy - (ce + cm) * yy
        az = -(ce + cm) * z
        out = np.array([vx, vy, vz, ax, ay, az])
        if control is not None:
            out[3:] += control(t, y)
        return out

    return rhs


def jacobi_integral(sys: Cr3bpSystem, s: SynodicState) -> float:
    """Jacobi constant ``-(|v|^2 + 2U)``."""
    return float(-(s.v @ s.v + 2.0 * effective_potential(sys, s.r)))


def _dudx_axis(sys: Cr3bpSystem, x: float) -> float:
    return float(potential_gradient(sys, np.array([x, 0.0, 0.0]))[0])


def lagrange_points(sys: Cr3bpSystem, tol: float = 1e-12) -> np.ndarray:
    """Positions of L1..L5 as a (5, 3) array."""
    mu = sys.mu
    gap = 1e-9
    brackets = {
        "L1": (-mu + gap, 1.0 - mu - gap),
        "L2": (1.0 - mu + gap, 2.0),
        "L3": (-2.0, -mu - gap),
    }
    xs = []
    for name, (a, b) in brackets.items():
        fa, fb = _dudx_axis(sys, a), _dudx_axis(sys, b)
        if fa * fb > 0.0:
            raise RuntimeError(
                f"{name}: bracket [{a:.6g}, {b:.6g}] does not change sign "
                f"(dU/dx = {fa:.3e}, {fb:.3e})"
            )
        try:
            x, info = brentq(
                lambda x: _dudx_axis(sys, x), a, b, xtol=tol, rtol=4 * np.finfo(float).eps,
                maxiter=200, full_output=True,
            )
        except RuntimeError as exc:
            raise RuntimeError(f"{name}: root solve failed on [{a:.6g}, {b:.6g}]: {exc}") from exc
        if not info.converged:
            raise RuntimeError(
                f"{name}: no convergence on [{a:.6g}, {b:.6g}] after {info.iterations} iterations"
            )
        xs.append(x)
    half = math.sqrt(3.0) / 2.0
    return np.array(
        [
            [xs[0], 0.0, 0.0],
            [xs[1], 0.0, 0.0],
            [xs[2], 0.0, 0.0],
            [0.5 - mu, half, 0.0],
            [0.5 - mu, -half, 0.0],
        ]
    )


@dataclass(frozen=True)
class IntegratorSettings:
    """Adaptive (``DOP853``/``RK45``) or fixed-step ``RK4`` propagation."""

    method: str = "DOP853"
    rtol: float = 1e-12
    atol: float = 1e-12
    max_step: float = np.inf
    rk4_step: float = 1e-3

    def __post_init__(self):
        if self.method not in ("DOP853", "RK45", "RK4"):
            raise ValueError(f"unknown integrator method {self.method!r}")


@dataclass
class Trajectory:
    """Dense trajectory; call with epochs to interpolate states.

    ``t`` and ``y`` hold the integrator nodes (``y`` has shape (n, dim)).
    """

    t: np.ndarray
    y: np.ndarray
    _interp: Callable = field(repr=False)

    def __call__(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        lo, hi = min(self.t[0], self.t[-1]), max(self.t[0], self.t[-1])
        span = hi - lo
        slack = 1e-12 * max(1.0, span)
        if np.any(t_arr < lo - slack) or np.any(t_arr > hi + slack):
            raise ValueError(f"epoch outside trajectory span [{lo}, {hi}]")
        # nodes are reproduced exactly, not through the interpolant
        if t_arr.ndim == 0:
            idx = np.flatnonzero(self.t == t_arr)
            if idx.size:
                return self.y[idx[0]].copy()
            return np.asarray(self._interp(float(t_arr)))
        out = np.asarray(self._interp(t_arr)).T
        for k, tk in enumerate(t_arr):
            idx = np.flatnonzero(self.t == tk)
            if idx.size:
                out[k] = self.y[idx[0]]
        return out

    def state(self, t: float) -> SynodicState:
        return SynodicState.from_vector(self(t)[:6], t)

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def tf(self) -> float:
        return float(self.t[-1])


def _rk4(rhs, t0: float, y0: np.ndarray, duration: float, h: float) -> Trajectory:
    n = max(1, int(math.ceil(abs(duration) / h - 1e-12)))
    step = duration / n
    ts = t0 + step * np.arange(n + 1)
    ys = np.empty((n + 1, y0.size))
    ys[0] = y0
    dys = np.empty_like(ys)
    y = y0.astype(float)
    for k in range(n):
        t = ts[k]
        k1 = rhs(t, y)
        k2 = rhs(t + step / 2, y + step / 2 * k1)
        k3 = rhs(t + step / 2, y + step / 2 * k2)
        k4 = rhs(t + step, y + step * k3)
        dys[k] = k1
        y = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k + 1] = y
    dys[n] = rhs(ts[n], y)
    # cubic Hermite between nodes
    order = np.argsort(ts)
    spline = CubicHermiteSpline(ts[order], ys[order], dys[order], axis=0)
    return Trajectory(ts, ys, lambda t: np.asarray(spline(t)).T)


def integrate(rhs, t0: float, y0, duration: float, settings: IntegratorSettings) -> Trajectory:
    """Integrate ``rhs`` from ``t0`` over ``duration`` (may be negative)."""
    y0 = np.asarray(y0, dtype=float)
    if duration == 0.0:
        raise ValueError("duration must be nonzero")
    if settings.method == "RK4":
        return _rk4(rhs, t0, y0, duration, settings.rk4_step)
    sol = solve_ivp(
        rhs,
        (t0, t0 + duration),
        y0,
        method=settings.method,
        rtol=settings.rtol,
        atol=settings.atol,
        max_step=settings.max_step,
        dense_output=True,
    )
    if sol.status != 0:
        raise PropagationError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    return Trajectory(sol.t, sol.y.T, sol.sol)


def propagate(
    sys: Cr3bpSystem,
    s0: SynodicState,
    duration: float,
    settings: IntegratorSettings | None = None,
) -> Trajectory:
    """Uncontrolled propagation of ``s0``; ``duration`` may be negative."""
    settings = settings or IntegratorSettings()
    return integrate(synodic_rhs(sys), s0.t, s0.as_vector(), duration, settings)


_KINDS = ("length", "time", "velocity", "acceleration")


def _si_factor(sys: Cr3bpSystem, kind: str) -> float:
    length_m = sys.length_unit * 1e3
    tu = sys.time_unit
    factors = {
        "length": length_m,
        "time": tu,
        "velocity": length_m / tu,
        "acceleration": length_m / tu**2,
    }
    try:
        return factors[kind]
    except KeyError:
        raise ValueError(f"unknown quantity kind {kind!r}; expected one of {_KINDS}") from None


def to_si(sys: Cr3bpSystem, quantity, kind: str):
    """Normalized -> SI (m, s, m/s, m/s^2)."""
    return np.asarray(quantity, dtype=float) * _si_factor(sys, kind) if np.ndim(quantity) else float(quantity) * _si_factor(sys, kind)


def from_si(sys: Cr3bpSystem, quantity, kind: str):
    """SI (m, s, m/s, m/s^2) -> normalized."""
    return np.asarray(quantity, dtype=float) / _si_factor(sys, kind) if np.ndim(quantity) else float(quantity) / _si_factor(sys, kind)
