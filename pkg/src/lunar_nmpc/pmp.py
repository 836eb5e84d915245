"""Minimum-propellant NMPC from Pontryagin's principle.

At every sampling instant the frozen-coefficient relative dynamics and the
costate equations form a 12-dimensional TPBVP: state fixed at the start,
costate equal to the terminal-cost gradient at the end. The bang-bang thrust
law is smoothed with ``sigma(s) = (1 + tanh s) / 2`` for the collocation
solver and applied in hard form to the converged costate.

Internally everything is in normalized CR3BP units. Weights are given in a
chosen unit system (see :class:`WeightUnits`) and converted once.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bvp import (
    BvpError,
    BvpSettings,
    TpbvpProblem,
    TpbvpSolution,
    continuation_solve,
    solve,
)
from .cr3bp import Cr3bpSystem, IntegratorSettings, SynodicState
from .lvlh import skew
from .relative import (
    FrozenContext,
    RelativeState,
    capture_context,
    prediction_accel,
    propagate_relative,
)

logger = logging.getLogger(__name__)

DIRECTION_EPS = 1e-12
DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)
WARM_NODES_PER_UNIT = 40


@dataclass(frozen=True)
class WeightUnits:
    """Unit system the cost weights refer to.

    ``length`` and ``time`` are the size of one weight-unit of length/time in
    normalized units.
    """

    name: str
    length: float
    time: float

    @classmethod
    def named(cls, name: str, sys: Cr3bpSystem) -> "WeightUnits":
        if name == "normalized":
            return cls(name, 1.0, 1.0)
        if name == "km":
            return cls(name, 1.0 / sys.length_unit, 1.0 / sys.time_unit)
        if name == "m":
            return cls(name, 1e-3 / sys.length_unit, 1.0 / sys.time_unit)
        raise ValueError(f"unknown weight unit mode {name!r} (normalized, km, m)")

    def state_factors(self) -> np.ndarray:
        """Multiply a normalized state by these to get weight units."""
        return np.array([1.0 / self.length] * 3 + [self.time / self.length] * 3)


@dataclass(frozen=True)
class CostWeights:
    """Diagonal weights: ``q`` and ``p`` have 6 entries, ``r`` is the common
    diagonal entry of the 3x3 control weight."""

    q: np.ndarray
    p: np.ndarray
    r: float

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(6)
        p = np.array(self.p, dtype=float).reshape(6)
        if np.any(q < 0) or np.any(p < 0):
            raise ValueError("Q and P must be entrywise non-negative")
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if np.any(r <= 0):
            raise ValueError("R must be positive definite")
        if np.ptp(r) != 0.0:
            raise ValueError("R must have equal diagonal entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", float(r[0]))

    @property
    def r_norm(self) -> float:
        """Spectral norm of the control weight."""
        return self.r

    def to_normalized(self, units: WeightUnits) -> "CostWeights":
        """Equivalent weights acting on normalized states, time and control."""
        d = units.state_factors()
        return CostWeights(
            q=self.q * d**2 / units.time,
            p=self.p * d**2,
            r=self.r * units.time / units.length,
        )


@dataclass(frozen=True)
class Costate:
    lambda_r: np.ndarray
    lambda_v: np.ndarray

    @classmethod
    def from_vector(cls, lam) -> "Costate":
        lam = np.asarray(lam, dtype=float)
        return cls(lam[:3], lam[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.lambda_r, self.lambda_v])


@dataclass(frozen=True)
class ControlSample:
    epoch: float
    u: np.ndarray
    switching_value: float
    primer_direction: np.ndarray | None
    degraded: bool = False


@dataclass
class NmpcConfig:
    """Controller settings. ``ts``, ``tp`` in s, ``u_max`` in m/s^2,
    ``reference`` in m and m/s (LVLH)."""

    ts: float = 2.0
    tp: float = 90.0
    u_max: float = 0.02
    weights: CostWeights = field(
        default_factory=lambda: CostWeights(
            q=[5e14] * 3 + [9e7] * 3, p=[8.05e10] * 3 + [1.0] * 3, r=1.0
        )
    )
    reference: np.ndarray = field(default_factory=lambda: np.array([-5.0, 0, 0, 0, 0, 0]))
    schedule: Sequence[float] = DEFAULT_SCHEDULE
    weight_units: str = "normalized"
    bvp: BvpSettings = field(default_factory=lambda: BvpSettings(tol=1e-5, max_nodes=5000))

    def __post_init__(self):
        if not self.ts > 0:
            raise ValueError("sampling time Ts must be positive")
        if self.tp < self.ts:
            raise ValueError("prediction horizon must satisfy Tp >= Ts")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        self.reference = np.asarray(self.reference, dtype=float).reshape(6)
        self.schedule = tuple(float(e) for e in self.schedule)


@dataclass(frozen=True)
class Problem:
    """Everything the PMP functions need, in normalized units."""

    weights: CostWeights
    reference: np.ndarray
    u_max: float


def normalized_problem(config: NmpcConfig, sys: Cr3bpSystem) -> Problem:
    units = WeightUnits.named(config.weight_units, sys)
    lu = sys.length_unit * 1e3
    vu = lu / sys.time_unit
    au = lu / sys.time_unit**2
    ref = config.reference / np.array([lu] * 3 + [vu] * 3)
    return Problem(config.weights.to_normalized(units), ref, config.u_max / au)


# --- PMP building blocks (normalized units) ---


def _x(x) -> np.ndarray:
    return x.as_vector() if isinstance(x, RelativeState) else np.asarray(x, dtype=float)


def _lam(lam) -> np.ndarray:
    return lam.as_vector() if isinstance(lam, Costate) else np.asarray(lam, dtype=float)


def switching_function(lam, w: CostWeights):
    """``|lambda_v| - |R|``; vectorized over trailing axes."""
    lv = _lam(lam)[3:6]
    return np.linalg.norm(lv, axis=0) - w.r_norm


def optimal_control(lam, w: CostWeights, u_max: float) -> np.ndarray:
    """Hard bang-bang law; off whenever the switching function is <= 0."""
    lv = _lam(lam)[3:6]
    ups = switching_function(lam, w)
    if ups <= 0.0:
        return np.zeros(3)
    return u_max * (-lv) / np.linalg.norm(lv)


def smoothed_control(lam, w: CostWeights, u_max: float, epsilon: float) -> np.ndarray:
    """``u_max * sigma(Y/(eps |R|))`` along ``-lambda_v``; vectorized."""
    lv = _lam(lam)[3:6]
    nl = np.linalg.norm(lv, axis=0)
    s = (nl - w.r_norm) / (epsilon * w.r_norm)
    gamma = u_max * 0.5 * (1.0 + np.tanh(s))
    return -gamma * lv / (nl + DIRECTION_EPS)


def hamiltonian(x, u, lam, ctx: FrozenContext, w: CostWeights, ref) -> float:
    xv, lv = _x(x), _lam(lam)
    u = np.asarray(u, dtype=float)
    err = xv - np.asarray(ref, dtype=float)
    acc = prediction_accel(xv, ctx, u)
    return float(
        err @ (w.q * err) + w.r_norm * np.linalg.norm(u) + lv[:3] @ xv[3:6] + lv[3:6] @ acc
    )


def costate_rate(x, lam, ctx: FrozenContext, w: CostWeights, ref) -> np.ndarray:
    """``-grad_x H`` for the frozen model; inputs may be (6,) or (6, m)."""
    xv, lv = _x(x), _lam(lam)
    ref = np.asarray(ref, dtype=float).reshape(6, *([1] * (xv.ndim - 1)))
    err = xv - ref
    qw = w.q.reshape(6, *([1] * (xv.ndim - 1)))
    rho = xv[:3]
    lam_r, lam_v = lv[:3], lv[3:6]
    om = skew(ctx.omega_il)
    # (d accel / d rho)^T lambda_v = -(W^2)^T lv - sum M/|q|^3 (I - 3 q q^T/|q|^2) lv
    rot = (om @ om).T @ lam_v
    grav = np.zeros_like(lam_v)
    for offset, mass in ((ctx.moon_offset, ctx.mu), (ctx.earth_offset, 1.0 - ctx.mu)):
        q = rho + offset.reshape(3, *([1] * (rho.ndim - 1)))
        nq = np.linalg.norm(q, axis=0)
        proj = np.sum(q * lam_v, axis=0)
        grav = grav + mass / nq**3 * (lam_v - 3.0 * q * proj / nq**2)
    lam_r_dot = -2.0 * qw[:3] * err[:3] + rot + grav
    lam_v_dot = -2.0 * qw[3:] * err[3:] - lam_r + 2.0 * om.T @ lam_v
    return np.concatenate([lam_r_dot, lam_v_dot])


def terminal_costate(x_end, w: CostWeights, ref) -> np.ndarray:
    """Gradient of the terminal cost, ``2 P (x - x_ref)``."""
    return 2.0 * w.p * (_x(x_end) - np.asarray(ref, dtype=float))


# --- TPBVP assembly ---


def _scales(sys: Cr3bpSystem, w: CostWeights, tp: float) -> np.ndarray:
    lu = sys.length_unit * 1e3
    vu = lu / sys.time_unit
    return np.array([1.0 / lu] * 3 + [1.0 / vu] * 3 + [w.r_norm / tp] * 3 + [w.r_norm] * 3)


class _RendezvousSystem:
    """Vectorized state/costate right-hand side and its analytic Jacobian."""

    def __init__(self, ctx: FrozenContext, prob: Problem, epsilon: float):
        om = skew(ctx.omega_il)
        self.om2 = om @ om
        self.rot_v = -2.0 * om
        self.lam_v_v = 2.0 * om.T
        self.offsets = ((ctx.moon_offset[:, None], ctx.mu), (ctx.earth_offset[:, None], 1.0 - ctx.mu))
        self.g0 = sum(m * d / np.linalg.norm(d) ** 3 for d, m in self.offsets)
        self.q = prob.weights.q[:, None]
        self.r = prob.weights.r_norm
        self.ref = prob.reference[:, None]
        self.u_max = prob.u_max
        self.eps = epsilon

    def _control(self, lv):
        nl = np.linalg.norm(lv, axis=0)
        s = (nl - self.r) / (self.eps * self.r)
        th = np.tanh(s)
        gamma = self.u_max * 0.5 * (1.0 + th)
        dgamma = self.u_max * 0.5 * (1.0 - th**2) / (self.eps * self.r)
        return nl, gamma, dgamma, -gamma * lv / (nl + DIRECTION_EPS)

    def fun(self, t, y):
        rho, vel, lr, lv = y[:3], y[3:6], y[6:9], y[9:12]
        _, _, _, u = self._control(lv)
        acc = self.rot_v @ vel - self.om2 @ rho + self.g0 + u
        lr_dot = -2.0 * self.q[:3] * (rho - self.ref[:3]) + self.om2.T @ lv
        for d, m in self.offsets:
            q = rho + d
            nq2 = np.sum(q * q, axis=0)
            nq3 = nq2 * np.sqrt(nq2)
            acc -= m * q / nq3
            lr_dot += m / nq3 * (lv - 3.0 * q * np.sum(q * lv, axis=0) / nq2)
        lv_dot = -2.0 * self.q[3:] * (vel - self.ref[3:]) - lr + self.lam_v_v @ lv
        return np.concatenate([vel, acc, lr_dot, lv_dot])

    def jac(self, t, y):
        m_nodes = y.shape[1]
        rho, lv = y[:3], y[9:12]
        eye = np.eye(3)[:, :, None]
        j = np.zeros((12, 12, m_nodes))
        j[0:3, 3:6] = eye
        j[3:6, 3:6] = self.rot_v[:, :, None]
        j[3:6, 0:3] = -self.om2[:, :, None]
        j[6:9, 0:3] = -2.0 * self.q[:3, 0][:, None, None] * eye
        j[6:9, 9:12] = self.om2.T[:, :, None]
        j[9:12, 3:6] = -2.0 * self.q[3:, 0][:, None, None] * eye
        j[9:12, 6:9] = -eye
        j[9:12, 9:12] = self.lam_v_v[:, :, None]
        for d, m in self.offsets:
            q = rho + d
            nq2 = np.sum(q * q, axis=0)
            nq = np.sqrt(nq2)
            qq = q[:, None, :] * q[None, :, :]
            grad = m / nq**3 * (eye - 3.0 * qq / nq2)  # M/|q|^3 (I - 3 q q^T/|q|^2)
            j[3:6, 0:3] -= grad
            j[6:9, 9:12] += grad
            ql = np.sum(q * lv, axis=0)
            lq = lv[:, None, :] * q[None, :, :]
            third = -3.0 / nq**5 * (lq + ql * eye + np.transpose(lq, (1, 0, 2))) + 15.0 * ql / nq**7 * qq
            j[6:9, 0:3] += m * third
        nl, gamma, dgamma, _ = self._control(lv)
        inv = 1.0 / (nl + DIRECTION_EPS)
        ll = lv[:, None, :] * lv[None, :, :]
        coef = (dgamma * inv - gamma * inv**2) / np.where(nl > 0, nl, 1.0)
        j[3:6, 9:12] = -gamma * inv * eye - coef * ll
        return j


def build_tpbvp(
    x_k,
    ctx: FrozenContext,
    prob: Problem,
    tp: float,
    epsilon: float,
    sys: Cr3bpSystem | None = None,
) -> TpbvpProblem:
    """State/costate TPBVP on ``[ctx.epoch, ctx.epoch + tp]`` (normalized time)."""
    sys = sys or Cr3bpSystem(mu=ctx.mu)
    x0 = _x(x_k)
    w, ref = prob.weights, prob.reference
    rhs = _RendezvousSystem(ctx, prob, epsilon)

    def bc(ya, yb):
        return np.concatenate([ya[:6] - x0, yb[6:] - terminal_costate(yb[:6], w, ref)])

    def bc_jac(ya, yb):
        ja = np.zeros((12, 12))
        jb = np.zeros((12, 12))
        ja[:6, :6] = np.eye(6)
        jb[6:, 6:] = np.eye(6)
        jb[6:, :6] = -2.0 * np.diag(w.p)
        return ja, jb

    scale = _scales(sys, w, tp)
    return TpbvpProblem(
        n=12,
        fun=rhs.fun,
        bc=bc,
        t_a=ctx.epoch,
        t_b=ctx.epoch + tp,
        y_scale=scale,
        bc_scale=scale,
        fun_jac=rhs.jac,
        bc_jac=bc_jac,
        params={"epsilon": epsilon},
    )


def cold_guess(x_k, prob: Problem, t_a: float, t_b: float, n: int = 41):
    """Constant state with double-integrator costates."""
    x0 = _x(x_k)
    w, ref = prob.weights, prob.reference
    err = x0 - ref
    t = np.linspace(t_a, t_b, n)
    s = t_b - t
    lam_r = 2 * w.p[:3, None] * err[:3, None] + 2 * w.q[:3, None] * err[:3, None] * s
    lam_v = (
        2 * w.p[:3, None] * err[:3, None] * s
        + w.q[:3, None] * err[:3, None] * s**2
        + 2 * w.p[3:, None] * err[3:, None]
    )
    y = np.vstack([np.repeat(x0[:, None], n, axis=1), lam_r, lam_v])
    return t, y


def horizon_cost(sol: TpbvpSolution, prob: Problem) -> float:
    """Cost functional evaluated on a TPBVP solution with the hard law."""
    w, ref = prob.weights, prob.reference
    t = sol.mesh
    y = sol.y
    err = y[:6] - ref[:, None]
    ups = np.linalg.norm(y[9:12], axis=0) - w.r_norm
    gamma = np.where(ups > 0, prob.u_max, 0.0)
    integrand = np.sum(w.q[:, None] * err**2, axis=0) + w.r_norm * gamma
    running = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t)))
    return running + float(err[:, -1] @ (w.p * err[:, -1]))


class ControllerFailure(RuntimeError):
    pass


class NmpcController:
    """Receding-horizon controller; owns the warm-start state."""

    def __init__(self, config: NmpcConfig, sys: Cr3bpSystem):
        self.config = config
        self.sys = sys
        self.prob = normalized_problem(config, sys)
        self.ts = config.ts / sys.time_unit
        self.tp = config.tp / sys.time_unit
        self.warm: TpbvpSolution | None = None
        self.last_sample: ControlSample | None = None
        self.failures: list[str] = []

    def _solve(self, x_k, ctx: FrozenContext) -> TpbvpSolution:
        cfg = self.config
        make = lambda eps: build_tpbvp(x_k, ctx, self.prob, self.tp, eps, self.sys)  # noqa: E731
        t_a, t_b = ctx.epoch, ctx.epoch + self.tp
        errors = []
        if self.warm is not None:
            warm = self._warm_guess(t_a, t_b)
            try:
                return solve(make(cfg.schedule[-1]), warm, cfg.bvp)
            except BvpError as exc:
                errors.append(f"warm: {exc}")
            try:
                return continuation_solve(make, warm, cfg.schedule, cfg.bvp)
            except BvpError as exc:
                errors.append(f"warm continuation: {exc}")
        guess = cold_guess(x_k, self.prob, t_a, t_b)
        try:
            return continuation_solve(make, guess, cfg.schedule, cfg.bvp)
        except BvpError as exc:
            errors.append(f"cold continuation: {exc}")
        dense = _densify(cfg.schedule)
        try:
            return continuation_solve(make, guess, dense, cfg.bvp)
        except BvpError as exc:
            errors.append(f"dense continuation: {exc}")
        raise ControllerFailure("; ".join(errors))

    def _warm_guess(self, t_a: float, t_b: float):
        # thrust-magnitude profile as mesh monitor: nodes gather at switches
        w = self.warm
        gamma = np.linalg.norm(
            smoothed_control(w.y[6:], self.prob.weights, self.prob.u_max, self.config.schedule[-1]), axis=0
        )
        return w.shifted(t_a, t_b, monitor=gamma / self.prob.u_max, nodes_per_unit=WARM_NODES_PER_UNIT)

    def step(self, x_k: RelativeState, target: SynodicState) -> tuple[ControlSample, TpbvpSolution | None]:
        """One sampling instant: solve the TPBVP and extract the hard control."""
        ctx = capture_context(target, self.sys)
        try:
            sol = self._solve(x_k, ctx)
        except ControllerFailure as exc:
            logger.warning("NMPC solve failed at t=%.9f, holding previous control: %s", target.t, exc)
            self.failures.append(str(exc))
            prev = self.last_sample
            u = prev.u if prev is not None else np.zeros(3)
            ups = prev.switching_value if prev is not None else -self.prob.weights.r_norm
            sample = ControlSample(target.t, u, ups, prev.primer_direction if prev else None, True)
            self.warm = None
            self.last_sample = sample
            return sample, None
        lam0 = sol.y[6:, 0]
        w = self.prob.weights
        ups = float(switching_function(lam0, w))
        u = optimal_control(lam0, w, self.prob.u_max)
        nl = np.linalg.norm(lam0[3:])
        primer = -lam0[3:] / nl if nl > 0 else None
        sample = ControlSample(target.t, u, ups, primer)
        self.warm = sol
        self.last_sample = sample
        return sample, sol


def _densify(schedule: Sequence[float]) -> list[float]:
    out = []
    for a, b in zip(schedule, schedule[1:]):
        out += [a, math.sqrt(a * b)]
    return out + [schedule[-1]]


def nmpc_step(x_k, target: SynodicState, config: NmpcConfig, sys: Cr3bpSystem, warm_start=None):
    """Functional form of :meth:`NmpcController.step`."""
    ctrl = NmpcController(config, sys)
    ctrl.warm = warm_start
    return ctrl.step(x_k, target)


# --- closed loop ---


@dataclass
class StopCriteria:
    """Run ends at ``max_duration`` (s) or once the error stayed inside the
    box (m, m/s per axis) with engines off for ``dwell`` seconds."""

    max_duration: float = 4 * 3600.0
    box: np.ndarray | None = None
    dwell: float = 0.0


@dataclass
class RunRecord:
    t: float
    rho: np.ndarray
    rho_dot: np.ndarray
    u: np.ndarray
    u_norm: float  # commanded magnitude, exactly 0 or u_max
    upsilon: float
    cost: float
    impulse: float
    degraded: bool
    wall: float


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    start_epoch: float = 0.0

    def append(self, rec: RunRecord):
        self.records.append(rec)

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def impulse(self) -> float:
        return self.records[-1].impulse if self.records else 0.0


def run_closed_loop(
    x0: RelativeState,
    orbit,
    config: NmpcConfig,
    stop: StopCriteria | None = None,
    plant_settings: IntegratorSettings | None = None,
    progress=None,
) -> RunLog:
    """Measure, solve, apply the zero-order-hold sample to the plant, repeat.

    ``x0`` is in normalized units with ``x0.epoch`` the start epoch. Records
    are in SI (s from start, m, m/s, m/s^2); the last record is the final
    state with the control that would have been applied next.
    """
    sys = orbit.sys
    stop = stop or StopCriteria()
    ctrl = NmpcController(config, sys)
    lu = sys.length_unit * 1e3
    vu = lu / sys.time_unit
    au = lu / sys.time_unit**2
    tu = sys.time_unit
    ref_si = config.reference
    log = RunLog(start_epoch=x0.epoch)
    x = x0
    impulse = 0.0
    n_steps = int(round(stop.max_duration / config.ts))
    inside_since = None
    for k in range(n_steps + 1):
        t_rel = k * config.ts
        epoch = x0.epoch + k * ctrl.ts
        x = RelativeState(x.rho, x.rho_dot, epoch)
        target = orbit.state(epoch)
        t_wall = time.perf_counter()
        try:
            sample, sol = ctrl.step(x, target)
        except Exception as exc:  # noqa: BLE001 - any failure ends the run with a partial log
            log.status = "controller_error"
            log.message = f"{type(exc).__name__}: {exc}"
            return log
        wall = time.perf_counter() - t_wall
        cost = horizon_cost(sol, ctrl.prob) if sol is not None else float("nan")
        on = bool(np.any(sample.u))
        u_norm = config.u_max if on else 0.0
        u_si = config.u_max * sample.u / np.linalg.norm(sample.u) if on else np.zeros(3)
        log.append(
            RunRecord(
                t=t_rel,
                rho=x.rho * lu,
                rho_dot=x.rho_dot * vu,
                u=u_si,
                u_norm=u_norm,
                upsilon=sample.switching_value * config.weights.r_norm / ctrl.prob.weights.r_norm,
                cost=cost,
                impulse=impulse,
                degraded=sample.degraded,
                wall=wall,
            )
        )
        if progress is not None:
            progress(log.records[-1])
        err = np.concatenate([x.rho * lu, x.rho_dot * vu]) - ref_si
        if stop.box is not None:
            if np.all(np.abs(err) <= stop.box) and not np.any(sample.u):
                inside_since = t_rel if inside_since is None else inside_since
                if t_rel - inside_since >= stop.dwell:
                    log.status = "converged"
                    return log
            else:
                inside_since = None
        if k == n_steps:
            break
        try:
            traj = propagate_relative(
                "plant", x, sample.u, ctrl.ts, orbit=orbit, sys=sys, settings=plant_settings
            )
        except Exception as exc:  # noqa: BLE001
            log.status = "propagation_error"
            log.message = f"{type(exc).__name__}: {exc}"
            return log
        x = RelativeState.from_vector(traj.y[-1], epoch + ctrl.ts)
        impulse += u_norm * config.ts
    log.status = "max_duration"
    return log
