"""Chaser relative motion in the target LVLH frame.

Two models share one term library:

* the plant, whose frame rates and target position follow the true target
  orbit at every evaluation;
* the prediction model, which freezes them at the sampling epoch and drops
  the angular-acceleration term.

An independent oracle differences two absolute CR3BP states and maps the
result into LVLH without using the angular velocity at all.

All vectors are LVLH components in normalized units unless noted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cr3bp import (
    SINGULAR_DISTANCE,
    Cr3bpSystem,
    IntegratorSettings,
    SingularPositionError,
    SynodicState,
    Trajectory,
    integrate,
    synodic_accel,
    synodic_rhs,
)
from .lvlh import LvlhKinematics, basis_rate, frame_rates, lvlh_basis, lvlh_kinematics

ALL_TERMS = frozenset({"rotational", "lunar", "terrestrial"})


@dataclass(frozen=True)
class RelativeState:
    rho: np.ndarray
    rho_dot: np.ndarray
    epoch: float = 0.0

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float).reshape(3)
        rho_dot = np.array(self.rho_dot, dtype=float).reshape(3)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(rho_dot))):
            raise ValueError("relative state must be finite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "rho_dot", rho_dot)
        object.__setattr__(self, "epoch", float(self.epoch))

    @classmethod
    def from_vector(cls, x, epoch: float = 0.0) -> "RelativeState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6], epoch)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.rho_dot])


@dataclass(frozen=True)
class FrozenContext:
    """Quantities held constant over one prediction horizon.

    ``r_ot``, ``r_om`` and ``r_oe`` are synodic-origin vectors rotated into
    the LVLH axes of the capture epoch.
    """

    omega_il: np.ndarray
    r_ot: np.ndarray
    r_om: np.ndarray
    r_oe: np.ndarray
    mu: float
    epoch: float = 0.0
    basis: np.ndarray | None = None

    def __post_init__(self):
        for name, vec in (("moon", self.r_ot - self.r_om), ("earth", self.r_ot - self.r_oe)):
            if np.linalg.norm(vec) < SINGULAR_DISTANCE:
                raise SingularPositionError(f"target coincides with the {name}")

    @property
    def moon_offset(self) -> np.ndarray:
        return self.r_ot - self.r_om

    @property
    def earth_offset(self) -> np.ndarray:
        return self.r_ot - self.r_oe


def capture_context(target: SynodicState, sys: Cr3bpSystem) -> FrozenContext:
    """Freeze the frame rate and primary geometry at ``target.t``."""
    basis, _, omega_sl = frame_rates(target, sys)
    omega = basis @ np.array([0.0, 0.0, 1.0]) + omega_sl
    return FrozenContext(
        omega_il=omega,
        r_ot=basis @ target.r,
        r_om=basis @ sys.r_om,
        r_oe=basis @ sys.r_oe,
        mu=sys.mu,
        epoch=target.t,
        basis=basis,
    )


# --- term library (arrays of shape (3,) or (3, m)) ---


def rotational_terms(omega, omega_dot, rho, rho_dot):
    """``-2 W rho_dot - W_dot rho - W W rho``; ``omega_dot`` may be None."""
    w = np.asarray(omega).reshape(3, *([1] * (np.ndim(rho) - 1)))
    out = -2.0 * np.cross(w, rho_dot, axis=0) - np.cross(w, np.cross(w, rho, axis=0), axis=0)
    if omega_dot is not None:
        wd = np.asarray(omega_dot).reshape(w.shape)
        out = out - np.cross(wd, rho, axis=0)
    return out


def gravity_difference(offset, rho, mass: float):
    """``mass * (d/|d|^3 - (rho+d)/|rho+d|^3)`` with ``d`` the target offset."""
    d = np.asarray(offset).reshape(3, *([1] * (np.ndim(rho) - 1)))
    q = rho + d
    nq = np.linalg.norm(q, axis=0)
    if np.any(nq < SINGULAR_DISTANCE):
        raise SingularPositionError("chaser coincides with a primary")
    nd = np.linalg.norm(d, axis=0)
    return mass * (d / nd**3 - q / nq**3)


def gravity_gradient(offset, rho, mass: float):
    """Jacobian of :func:`gravity_difference` with respect to ``rho``, (3, 3)."""
    q = np.asarray(rho) + np.asarray(offset)
    nq = np.linalg.norm(q)
    return -mass / nq**3 * (np.eye(3) - 3.0 * np.outer(q, q) / nq**2)


def _accel(omega, omega_dot, moon_off, earth_off, mu, rho, rho_dot, u, terms):
    out = np.zeros(np.shape(rho))
    if "rotational" in terms:
        out = out + rotational_terms(omega, omega_dot, rho, rho_dot)
    if "lunar" in terms:
        out = out + gravity_difference(moon_off, rho, mu)
    if "terrestrial" in terms:
        out = out + gravity_difference(earth_off, rho, 1.0 - mu)
    return out + u


def plant_accel(
    state: RelativeState,
    kin: LvlhKinematics,
    target: SynodicState,
    u,
    sys: Cr3bpSystem,
    terms=ALL_TERMS,
) -> np.ndarray:
    """Full time-varying relative acceleration."""
    basis = kin.basis
    return _accel(
        kin.omega_il,
        kin.omega_dot_il,
        basis @ (target.r - sys.r_om),
        basis @ (target.r - sys.r_oe),
        sys.mu,
        state.rho,
        state.rho_dot,
        np.asarray(u, dtype=float),
        terms,
    )


def prediction_accel(state, ctx: FrozenContext, u, terms=ALL_TERMS) -> np.ndarray:
    """Frozen-coefficient acceleration (no angular-acceleration term).

    ``state`` is a :class:`RelativeState` or a (6,) / (6, m) array.
    """
    if isinstance(state, RelativeState):
        rho, rho_dot = state.rho, state.rho_dot
    else:
        x = np.asarray(state, dtype=float)
        rho, rho_dot = x[:3], x[3:6]
    return _accel(
        ctx.omega_il, None, ctx.moon_offset, ctx.earth_offset, ctx.mu, rho, rho_dot,
        np.asarray(u, dtype=float), terms,
    )


# --- absolute-difference oracle ---


def _basis_and_rate(state_vec: np.ndarray, sys: Cr3bpSystem):
    s = SynodicState.from_vector(state_vec)
    a = synodic_accel(sys, s)
    return basis_rate(s.r - sys.r_om, s.v, a)


def basis_second_derivative(target: SynodicState, sys: Cr3bpSystem, step: float = 1e-4) -> np.ndarray:
    """Second time derivative of the LVLH basis along the uncontrolled flow.

    Directional central differences of the analytic first derivative, one
    Richardson level. The step shrinks with the local frame rotation rate so
    perilune passages stay resolved.
    """
    y = target.as_vector()
    _, _, omega_sl = frame_rates(target, sys)
    step = step / max(1.0, float(np.linalg.norm(omega_sl)))
    flow = np.concatenate([target.v, synodic_accel(sys, target)])

    def diff(h):
        _, bp = _basis_and_rate(y + h * flow, sys)
        _, bm = _basis_and_rate(y - h * flow, sys)
        return (bp - bm) / (2 * h)

    return (4.0 * diff(step / 2) - diff(step)) / 3.0


def synodic_to_relative(chaser: SynodicState, target: SynodicState, sys: Cr3bpSystem) -> RelativeState:
    """Map absolute chaser/target states into an LVLH relative state."""
    basis, basis_dot = _basis_and_rate(target.as_vector(), sys)
    dr = chaser.r - target.r
    dv = chaser.v - target.v
    return RelativeState(basis @ dr, basis_dot @ dr + basis @ dv, target.t)


def relative_to_synodic(rel: RelativeState, target: SynodicState, sys: Cr3bpSystem) -> SynodicState:
    """Inverse of :func:`synodic_to_relative`."""
    basis, basis_dot = _basis_and_rate(target.as_vector(), sys)
    dr = basis.T @ rel.rho
    dv = basis.T @ (rel.rho_dot - basis_dot @ dr)
    return SynodicState(target.r + dr, target.v + dv, target.t)


def oracle_relative_accel(chaser: SynodicState, target: SynodicState, u, sys: Cr3bpSystem):
    """Relative state and acceleration from the two absolute states.

    ``u`` is the LVLH control acceleration applied to the chaser only.
    Returns ``(RelativeState, rho_ddot)``.
    """
    basis, basis_dot = _basis_and_rate(target.as_vector(), sys)
    basis_ddot = basis_second_derivative(target, sys)
    a_c = synodic_accel(sys, chaser) + basis.T @ np.asarray(u, dtype=float)
    a_t = synodic_accel(sys, target)
    dr = chaser.r - target.r
    dv = chaser.v - target.v
    rel = RelativeState(basis @ dr, basis_dot @ dr + basis @ dv, target.t)
    rho_ddot = basis_ddot @ dr + 2.0 * basis_dot @ dv + basis @ (a_c - a_t)
    return rel, rho_ddot


# --- propagation ---

RELATIVE_SETTINGS = IntegratorSettings(method="DOP853", rtol=1e-11, atol=1e-18)


def _as_control(control) -> Callable:
    if callable(control):
        return control
    u = np.asarray(control if control is not None else np.zeros(3), dtype=float)
    return lambda t: u


def plant_rhs(orbit, sys: Cr3bpSystem, control=None, terms=ALL_TERMS):
    """``f(t, x)`` of the plant along ``orbit`` (anything with ``state_vector``)."""
    ufun = _as_control(control)

    def rhs(t, x):
        target = SynodicState.from_vector(orbit.state_vector(t), t)
        kin = lvlh_kinematics(orbit, t, sys)
        acc = plant_accel(RelativeState(x[:3], x[3:6], t), kin, target, ufun(t), sys, terms)
        return np.concatenate([x[3:6], acc])

    return rhs


def prediction_rhs(ctx: FrozenContext, control=None, terms=ALL_TERMS):
    ufun = _as_control(control)

    def rhs(t, x):
        return np.concatenate([x[3:6], prediction_accel(x, ctx, ufun(t), terms)])

    return rhs


def propagate_relative(
    model: str,
    x0: RelativeState,
    control,
    duration: float,
    *,
    orbit=None,
    ctx: FrozenContext | None = None,
    sys: Cr3bpSystem | None = None,
    settings: IntegratorSettings | None = None,
    terms=ALL_TERMS,
) -> Trajectory:
    """Propagate the plant (needs ``orbit``) or the prediction model (``ctx``).

    ``control`` is a constant LVLH vector or a callable ``u(t)``; zero-order
    hold is the caller's job (pass a piecewise-constant callable).
    """
    settings = settings or RELATIVE_SETTINGS
    if model == "plant":
        if orbit is None:
            raise ValueError("plant propagation needs the target orbit")
        rhs = plant_rhs(orbit, sys or orbit.sys, control, terms)
    elif model == "prediction":
        if ctx is None:
            raise ValueError("prediction propagation needs a frozen context")
        rhs = prediction_rhs(ctx, control, terms)
    else:
        raise ValueError(f"unknown model {model!r}")
    return integrate(rhs, x0.epoch, x0.as_vector(), duration, settings)


def propagate_absolute_pair(
    chaser: SynodicState,
    target: SynodicState,
    control,
    duration: float,
    sys: Cr3bpSystem,
    settings: IntegratorSettings | None = None,
) -> Trajectory:
    """Propagate chaser and target together (12 states) in the synodic frame.

    The LVLH control is rotated with the target's current basis.
    """
    settings = settings or IntegratorSettings(rtol=1e-13, atol=1e-16)
    ufun = _as_control(control)
    base = synodic_rhs(sys)

    def rhs(t, y):
        basis = lvlh_basis(SynodicState.from_vector(y[6:]), sys)
        dc = base(t, y[:6])
        dc[3:] += basis.T @ ufun(t)
        return np.concatenate([dc, base(t, y[6:])])

    y0 = np.concatenate([chaser.as_vector(), target.as_vector()])
    return integrate(rhs, target.t, y0, duration, settings)
