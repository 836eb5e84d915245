"""Target-centred LVLH frame and its angular kinematics.

Basis rows are (i, j, k) in synodic axes with

    j = -(r x v) / |r x v|,   k = -r / |r|,   i = j x k

where ``r, v`` are the target position and synodic velocity relative to the
Moon. The inertial angular velocity is the synodic rotation (unit rate about
synodic z) plus the basis rotation seen from the synodic frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cr3bp import Cr3bpSystem, SynodicState, synodic_accel

DEGENERATE_TOL = 1e-12
SYNODIC_RATE = np.array([0.0, 0.0, 1.0])


class DegenerateGeometryError(ValueError):
    """Target motion is (nearly) rectilinear with respect to the Moon."""


@dataclass(frozen=True)
class LvlhKinematics:
    """LVLH attitude and inertial angular rates at one epoch.

    ``omega_il`` and ``omega_dot_il`` are LVLH components, per normalized time.
    """

    basis: np.ndarray
    omega_il: np.ndarray
    omega_dot_il: np.ndarray
    epoch: float


def skew(w) -> np.ndarray:
    """Cross-product matrix: ``skew(w) @ x == np.cross(w, x)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _basis_from_moon_relative(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    h = np.cross(r, v)
    nh = np.linalg.norm(h)
    nr = np.linalg.norm(r)
    if nh < DEGENERATE_TOL or nr < DEGENERATE_TOL:
        raise DegenerateGeometryError(f"|r x v| = {nh:.3e} below {DEGENERATE_TOL:g}")
    j = -h / nh
    k = -r / nr
    i = np.cross(j, k)
    return np.array([i, j, k])


def lvlh_basis(target: SynodicState, sys: Cr3bpSystem) -> np.ndarray:
    """Direction-cosine matrix with rows i, j, k expressed in synodic axes."""
    return _basis_from_moon_relative(target.r - sys.r_om, target.v)


def basis_rate(r: np.ndarray, v: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis and its synodic time derivative from Moon-relative r, v, a."""
    basis = _basis_from_moon_relative(r, v)
    _, j, k = basis
    nr = np.linalg.norm(r)
    h = np.cross(r, v)
    nh = np.linalg.norm(h)
    h_dot = np.cross(r, a)
    k_dot = -(v / nr - r * (r @ v) / nr**3)
    j_dot = -(h_dot / nh - h * (h @ h_dot) / nh**3)
    i_dot = np.cross(j_dot, k) + np.cross(j, k_dot)
    return basis, np.array([i_dot, j_dot, k_dot])


def unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def frame_rates(target: SynodicState, sys: Cr3bpSystem):
    """Basis, its synodic derivative, and the LVLH-vs-synodic rate (LVLH comps)."""
    a = synodic_accel(sys, target)
    basis, basis_dot = basis_rate(target.r - sys.r_om, target.v, a)
    omega_sl = unskew(-basis_dot @ basis.T)
    return basis, basis_dot, omega_sl


def omega_il(target: SynodicState, sys: Cr3bpSystem) -> np.ndarray:
    """Inertial angular velocity of LVLH in LVLH components."""
    basis, _, omega_sl = frame_rates(target, sys)
    return basis @ SYNODIC_RATE + omega_sl


def _omega_at(orbit, t: float) -> np.ndarray:
    return omega_il(SynodicState.from_vector(orbit.state_vector(t), t), orbit.sys)


def omega_dot_richardson(orbit, epoch: float, step: float = 1e-3) -> np.ndarray:
    """Central difference of ``omega_il`` along the orbit, one Richardson level."""
    d1 = (_omega_at(orbit, epoch + step) - _omega_at(orbit, epoch - step)) / (2 * step)
    h2 = step / 2
    d2 = (_omega_at(orbit, epoch + h2) - _omega_at(orbit, epoch - h2)) / (2 * h2)
    return (4.0 * d2 - d1) / 3.0


def lvlh_kinematics(orbit, epoch: float, sys: Cr3bpSystem | None = None, step: float = 1e-3) -> LvlhKinematics:
    """LVLH kinematics at ``epoch`` along ``orbit``.

    ``orbit`` only needs ``state_vector(t)`` and ``sys``. The differencing
    step shrinks with the local rotation rate so perilune passages stay
    resolved.
    """
    sys = sys or orbit.sys
    target = SynodicState.from_vector(orbit.state_vector(epoch), epoch)
    basis, _, omega_sl = frame_rates(target, sys)
    w = basis @ SYNODIC_RATE + omega_sl
    h = step / max(1.0, float(np.linalg.norm(w)))
    return LvlhKinematics(basis, w, omega_dot_richardson(orbit, epoch, h), float(epoch))
