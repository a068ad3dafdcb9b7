"""Single-shooting best-response solver.

An agent's decision vector is its flat control sequence. States are
eliminated by an RK4 rollout (the same step that advances the nominal
trajectory) so the subproblem is unconstrained apart from optional box
bounds, which are handled by projection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .costs import PlanningWindow
from .dynamics import AgentModel
from .errors import InputError, NumericalError


@dataclass(frozen=True)
class SolveReport:
    final_objective: float
    iterations: int
    gradient_norm: float
    converged: bool
    line_search_failures: int


def rollout(model: AgentModel, x0, controls, dt: float) -> np.ndarray:
    """RK4 rollout of the disturbance-free model; returns ``H+1`` states."""
    U = np.ascontiguousarray(np.asarray(controls, dtype=float).reshape(-1, model.control_dim))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise InputError("initial state has the wrong dimension")
    X = _kernels.rollout(model.kind, model.params, x0, U, dt)
    if not np.all(np.isfinite(X)):
        raise NumericalError(f"{model.tag}: rollout diverged")
    return X


_EMPTY = np.zeros(0, dtype=np.int64)


class AgentProblem:
    """Objective of agent ``i`` with the other agents' trajectories frozen.

    ``other_pos[k, t]`` are the frozen positions of the agents listed in
    ``others``; ``mask[k, t]`` marks the steps at which each is a neighbor.
    """

    def __init__(self, window: PlanningWindow, i: int, other_pos, others, mask):
        m = window.models[i]
        w = window.weights[i]
        self.model = m
        self.H = window.horizon
        self._args_pre = (m.kind, m.params, np.asarray(window.x0[i], dtype=float))
        self._args_post = (
            window.dt, np.ascontiguousarray(window.refs[i]), w.Q_track, w.Q_terminal,
            w.R_control, float(w.lambda_v), float(w.v_max),
            np.asarray(m.velocity_indices, dtype=np.int64) if m.velocity_indices else _EMPTY,
            np.asarray(m.position_indices, dtype=np.int64), float(w.lambda_frs),
            _kernels.PENALTY_FRS if window.penalty == "frs" else _kernels.PENALTY_EUCLIDEAN,
            float(window.d_col),
            np.ascontiguousarray(other_pos, dtype=float).reshape(len(others), self.H + 1, m.position_dim),
            np.ascontiguousarray(mask, dtype=np.bool_).reshape(len(others), self.H + 1),
            np.ascontiguousarray(window.pair_inv[i, list(others)]).reshape(
                len(others), self.H + 1, m.position_dim, m.position_dim),
        )
        self.bounds = None
        if m.control_bounds is not None:
            self.bounds = (np.tile(m.control_bounds[:, 0], self.H), np.tile(m.control_bounds[:, 1], self.H))

    def _eval(self, u, want_grad):
        U = np.ascontiguousarray(np.asarray(u, dtype=float).reshape(self.H, self.model.control_dim))
        f, g = _kernels.agent_objective(*self._args_pre, U, *self._args_post, want_grad)
        if not np.isfinite(f):
            raise NumericalError(f"{self.model.tag}: non-finite objective")
        return f, g

    def objective(self, u) -> float:
        return self._eval(u, False)[0]

    def gradient(self, u) -> np.ndarray:
        return self._eval(u, True)[1]

    def value_and_grad(self, u):
        return self._eval(u, True)

    def preconditioner(self, u) -> Callable:
        """Cholesky solve with the Gauss-Newton Hessian of the tracking terms
        along the rollout of ``u``."""
        U = np.ascontiguousarray(np.asarray(u, dtype=float).reshape(self.H, self.model.control_dim))
        Qt, Qf, R = self._args_post[2:5]
        P = _kernels.tracking_hessian(*self._args_pre, U, self._args_post[0], Qt, Qf, R)
        if not np.all(np.isfinite(P)):
            return None
        P += 1e-8 * max(np.trace(P) / len(P), 1e-12) * np.eye(len(P))
        try:
            fac = scipy.linalg.cho_factor(P, check_finite=False)
        except np.linalg.LinAlgError:
            return None
        return lambda v: scipy.linalg.cho_solve(fac, v, check_finite=False)


def minimize(objective: Callable, gradient: Callable, init, tol: float = 1e-6,
             max_iter: int = 200, bounds=None, memory: int = 10,
             value_and_grad: Optional[Callable] = None,
             precondition: Optional[Callable] = None, refresh: int = 0):
    """Projected L-BFGS with Armijo backtracking (``c = 1e-4``, halving).

    ``precondition(v)`` applies the initial inverse-Hessian guess of the
    two-loop recursion; without it the usual ``s^T y / y^T y`` scaling is
    used. If ``refresh > 0``, ``precondition`` is instead a factory called
    with the current point every ``refresh`` iterations to rebuild it. Stops when the gradient norm (of the projected gradient, if
    bounded) falls below ``tol``, when an accepted step lowers the objective
    by at most ``1e-12`` or after ``max_iter`` iterations.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    vg = value_and_grad or (lambda z: (objective(z), gradient(z)))
    x = np.array(init, dtype=float).reshape(-1)
    lo = hi = None
    if bounds is not None:
        lo, hi = bounds
        x = np.clip(x, lo, hi)

    def pgrad_norm(x, g):
        if lo is None:
            return float(np.linalg.norm(g))
        return float(np.linalg.norm(x - np.clip(x - g, lo, hi)))

    f, g = vg(x)
    f0, x0 = f, x.copy()
    S, Y, RHO = [], [], []
    failures = 0
    it = 0
    gn = pgrad_norm(x, g)
    converged = gn <= tol
    factory = precondition if refresh > 0 else None
    if factory is not None:
        precondition = factory(x)
    use_pre = precondition is not None
    while not converged and it < max_iter:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if use_pre:
            q = precondition(q)
        elif S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        p = -q
        if not np.all(np.isfinite(p)):
            S, Y, RHO = [], [], []
            p = -g
        if not g @ p < 0:
            S, Y, RHO = [], [], []
            p = -g if not use_pre else -precondition(g)
            if not g @ p < 0:
                p = -g
        # without curvature information start from a unit-length step
        step = 1.0 if (S or use_pre) else min(1.0, 1.0 / max(np.linalg.norm(p), 1e-300))
        accepted = False
        for _ in range(60):
            xn = x + step * p
            if lo is not None:
                xn = np.clip(xn, lo, hi)
            if np.array_equal(xn, x):
                # the step has shrunk below the resolution of x
                break
            try:
                fn = objective(xn)
            except NumericalError:
                fn = np.inf
            if fn <= f + 1e-4 * (g @ (xn - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            failures += 1
            if S or use_pre:
                S, Y, RHO = [], [], []
                use_pre = False
                continue
            break
        fn, gnew = vg(xn)
        if not np.all(np.isfinite(gnew)):
            failures += 1
            break
        it += 1
        if factory is not None and it % refresh == 0:
            precondition = factory(xn)
        use_pre = precondition is not None
        s, y = xn - x, gnew - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
                RHO.pop(0)
        decrease = f - fn
        x, f, g = xn, fn, gnew
        gn = pgrad_norm(x, g)
        if gn <= tol:
            converged = True
        elif decrease <= 1e-12:
            break
    if it == 0 and failures and not converged:
        return x0, SolveReport(f0, 0, gn, False, failures)
    return x, SolveReport(float(f), it, gn, converged, failures)
