"""Two-point boundary value problems by collocation, with continuation.

The collocation itself is scipy's ``solve_bvp`` (three-stage Lobatto IIIA,
fourth order, residual-driven mesh refinement, damped Newton with sparse
Jacobians). This module adds variable and time scaling, distinct failure
types that carry the last iterate for warm starts, an independent residual
check and smoothing-parameter continuation.
"""

from __future__ import annotations

import contextlib
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_bvp

logger = logging.getLogger(__name__)


class BvpError(RuntimeError):
    """Base class; ``last`` is the final iterate (a TpbvpSolution) if any."""

    def __init__(self, message: str, last: "TpbvpSolution | None" = None, epsilon: float | None = None):
        self.last = last
        self.epsilon = epsilon
        if epsilon is not None:
            message = f"{message} (epsilon={epsilon:g})"
        super().__init__(message)


class NewtonDivergenceError(BvpError):
    pass


class MeshBudgetError(BvpError):
    pass


class SingularJacobianError(BvpError):
    pass


@dataclass
class TpbvpProblem:
    """``y' = fun(t, y)`` on ``[t_a, t_b]`` with ``bc(y(t_a), y(t_b)) = 0``.

    ``fun`` is vectorized: ``y`` has shape (n, m). Optional ``fun_jac``
    returns (n, n, m) and ``bc_jac`` the pair (dbc/dya, dbc/dyb); without them
    the Jacobians come from finite differences. ``y_scale`` and ``bc_scale``
    only affect conditioning, never the solution.
    """

    n: int
    fun: Callable
    bc: Callable
    t_a: float
    t_b: float
    y_scale: np.ndarray | None = None
    bc_scale: np.ndarray | None = None
    fun_jac: Callable | None = None
    bc_jac: Callable | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.t_b > self.t_a:
            raise ValueError("span must satisfy t_b > t_a")
        self.y_scale = np.ones(self.n) if self.y_scale is None else np.asarray(self.y_scale, float)
        self.bc_scale = np.ones(self.n) if self.bc_scale is None else np.asarray(self.bc_scale, float)
        n_bc = np.asarray(self.bc(np.zeros(self.n), np.zeros(self.n))).size
        if n_bc != self.n:
            raise ValueError(f"{n_bc} boundary residuals for {self.n} unknowns")


@dataclass(frozen=True)
class BvpSettings:
    tol: float = 1e-8
    bc_tol: float | None = None
    max_nodes: int = 5000
    initial_nodes: int = 31
    verbose: bool = False


@dataclass
class TpbvpSolution:
    mesh: np.ndarray
    y: np.ndarray  # (n, m)
    interpolant: Callable
    residual_norm: float
    niter: int
    success: bool = True
    trace: str = ""
    derivative: Callable | None = None

    def __call__(self, t) -> np.ndarray:
        return self.interpolant(t)

    def shifted(self, t_a: float, t_b: float, monitor: np.ndarray | None = None, nodes_per_unit: int = 40):
        """Guess on a new span ``[t_a, t_b]``.

        Values come from the old solution at the same epochs, held constant
        past its end. Without ``monitor`` the old mesh keeps its position
        relative to the span. With ``monitor`` (one non-negative value per
        old node) the old mesh is first thinned by
        :func:`equidistribute`, so refinement from earlier solves does not
        accumulate.
        """
        rel = (self.mesh - self.mesh[0]) / (self.mesh[-1] - self.mesh[0])
        if monitor is not None:
            rel = equidistribute(rel, monitor, nodes_per_unit)
        t = t_a + rel * (t_b - t_a)
        t[-1] = t_b
        inside = np.clip(t, self.mesh[0], self.mesh[-1])
        return t, self.interpolant(inside)


def equidistribute(x: np.ndarray, monitor: np.ndarray, nodes_per_unit: int) -> np.ndarray:
    """Points on ``[x[0], x[-1]]`` equidistributing ``span fraction + total variation``.

    The density is ``nodes_per_unit`` per unit of the arc measure
    ``(x - x0)/(x_end - x0) + cumulative |d monitor|``, so every unit jump of
    the monitor receives as many points as the whole background span. The
    result never has more points than ``x``.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(monitor, dtype=float)
    frac = (x - x[0]) / (x[-1] - x[0])
    arc = frac + np.concatenate([[0.0], np.cumsum(np.abs(np.diff(m)))])
    n = int(min(x.size, max(3, round(nodes_per_unit * arc[-1]))))
    out = np.interp(np.linspace(0.0, arc[-1], n), arc, x)
    return np.unique(out)


def _scaled(problem: TpbvpProblem):
    s = problem.y_scale[:, None]
    ys = problem.y_scale
    bs = problem.bc_scale
    dt = problem.t_b - problem.t_a

    def fun(tau, z):
        t = problem.t_a + dt * tau
        return dt * problem.fun(t, z * s) / s

    def bc(za, zb):
        return np.asarray(problem.bc(za * ys, zb * ys)) / bs

    fun_jac = bc_jac = None
    if problem.fun_jac is not None:

        def fun_jac(tau, z):
            t = problem.t_a + dt * tau
            j = problem.fun_jac(t, z * s)
            return dt * j * (ys[None, :, None] / ys[:, None, None])

    if problem.bc_jac is not None:

        def bc_jac(za, zb):
            ja, jb = problem.bc_jac(za * ys, zb * ys)
            return ja * ys[None, :] / bs[:, None], jb * ys[None, :] / bs[:, None]

    return fun, bc, fun_jac, bc_jac


def _initial_guess(problem: TpbvpProblem, guess, settings: BvpSettings):
    if isinstance(guess, TpbvpSolution):
        guess = guess.shifted(problem.t_a, problem.t_b)
    if callable(guess):
        t = np.linspace(problem.t_a, problem.t_b, settings.initial_nodes)
        y = np.asarray(guess(t), dtype=float)
    elif isinstance(guess, tuple):
        t, y = (np.asarray(g, dtype=float) for g in guess)
    else:
        y0 = np.asarray(guess, dtype=float)
        t = np.linspace(problem.t_a, problem.t_b, settings.initial_nodes)
        y = np.repeat(y0.reshape(-1, 1), t.size, axis=1)
    if y.shape != (problem.n, t.size):
        raise ValueError(f"guess has shape {y.shape}, expected ({problem.n}, {t.size})")
    return t, y


def solve(problem: TpbvpProblem, guess, settings: BvpSettings | None = None) -> TpbvpSolution:
    """Collocation solve; raises a :class:`BvpError` subclass on failure.

    ``guess`` is a TpbvpSolution, a ``(t, y)`` tuple, a callable ``y(t)`` or
    a constant vector.
    """
    settings = settings or BvpSettings()
    t, y = _initial_guess(problem, guess, settings)
    dt = problem.t_b - problem.t_a
    tau = (t - problem.t_a) / dt
    fun, bc, fun_jac, bc_jac = _scaled(problem)
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        res = solve_bvp(
            fun,
            bc,
            tau,
            y / problem.y_scale[:, None],
            fun_jac=fun_jac,
            bc_jac=bc_jac,
            tol=settings.tol,
            bc_tol=settings.bc_tol if settings.bc_tol is not None else settings.tol,
            max_nodes=settings.max_nodes,
            verbose=2 if settings.verbose else 0,
        )
    trace = buf.getvalue()
    if trace:
        logger.debug("bvp trace:\n%s", trace)
    scale = problem.y_scale

    def interp(tt, _sol=res.sol):
        tt = np.asarray(tt, dtype=float)
        return _sol((tt - problem.t_a) / dt) * (scale[:, None] if tt.ndim else scale)

    dsol = res.sol.derivative()

    def dinterp(tt):
        tt = np.asarray(tt, dtype=float)
        return dsol((tt - problem.t_a) / dt) / dt * (scale[:, None] if tt.ndim else scale)

    rms = res.rms_residuals
    sol = TpbvpSolution(
        mesh=problem.t_a + dt * res.x,
        y=res.y * scale[:, None],
        interpolant=interp,
        residual_norm=float(np.max(rms)) if rms is not None and rms.size else np.inf,
        niter=int(res.niter),
        success=res.status == 0,
        trace=trace,
        derivative=dinterp,
    )
    if res.status == 0 and not np.all(np.isfinite(res.y)):
        raise NewtonDivergenceError("non-finite iterate", sol)
    if res.status == 1:
        raise MeshBudgetError(f"mesh budget of {settings.max_nodes} nodes exhausted", sol)
    if res.status == 2:
        raise SingularJacobianError("singular collocation Jacobian", sol)
    if res.status == 3:
        raise NewtonDivergenceError("boundary conditions not met; Newton iteration diverged", sol)
    return sol


_LOBATTO5 = np.array([-1.0, -np.sqrt(3.0 / 7.0), 0.0, np.sqrt(3.0 / 7.0), 1.0])
_LOBATTO5_W = np.array([1.0 / 10, 49.0 / 90, 32.0 / 45, 49.0 / 90, 1.0 / 10])


def residual_check(problem: TpbvpProblem, sol: TpbvpSolution) -> float:
    """Max over mesh intervals of the RMS relative collocation residual.

    Evaluated from the returned interpolant with 5-point Lobatto quadrature
    in the scaled variables, independently of the solver's own estimate.
    """
    dt = problem.t_b - problem.t_a
    s = problem.y_scale[:, None]
    h = np.diff(sol.mesh)
    worst = 0.0
    for k in range(h.size):
        mid = 0.5 * (sol.mesh[k] + sol.mesh[k + 1])
        t = mid + 0.5 * h[k] * _LOBATTO5
        dz = sol.derivative(t) / s * dt
        f = dt * problem.fun(t, sol(t)) / s
        r = (dz - f) / (1.0 + np.abs(f))
        worst = max(worst, float(np.sqrt(0.5 * np.sum(_LOBATTO5_W * np.sum(r**2, axis=0)))))
    return worst


def continuation_solve(
    make_problem: Callable[[float], TpbvpProblem],
    guess,
    schedule: Sequence[float],
    settings: BvpSettings | None = None,
    max_bisections: int = 3,
) -> TpbvpSolution:
    """Solve along a decreasing smoothing schedule, warm-starting each stage.

    A failed stage is retried after inserting the geometric midpoint between
    the last converged and the failing parameter, up to ``max_bisections``
    times per stage.
    """
    schedule = [float(e) for e in schedule]
    if not schedule:
        raise ValueError("empty continuation schedule")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    current = guess
    last_eps: float | None = None
    pending = list(schedule)
    bisections = 0
    sol = None
    while pending:
        eps = pending[0]
        try:
            sol = solve(make_problem(eps), current, settings)
        except BvpError as exc:
            if last_eps is None or bisections >= max_bisections:
                raise type(exc)(str(exc), exc.last, eps) from exc
            mid = float(np.sqrt(last_eps * eps))
            logger.info("continuation: stage %g failed, inserting %g", eps, mid)
            pending.insert(0, mid)
            bisections += 1
            continue
        pending.pop(0)
        current = sol
        last_eps = eps
        bisections = 0
    return sol
