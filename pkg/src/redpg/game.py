"""Iterated epsilon-best-response over neighbor-localized agent costs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import PlanningWindow, potential_value
from .ellipsoid import REGULARIZATION, boxplus
from .errors import InputError, NumericalError
from .optimizer import AgentProblem, minimize, rollout


@dataclass(frozen=True)
class StrategyProfile:
    controls: tuple     # per agent, (H, n_u)

    def __post_init__(self):
        ctrl = tuple(np.array(u, dtype=float) for u in self.controls)
        if len({len(u) for u in ctrl}) > 1:
            raise InputError("agents have different horizons")
        object.__setattr__(self, "controls", ctrl)

    @property
    def horizon(self) -> int:
        return len(self.controls[0])

    def with_agent(self, i: int, u) -> "StrategyProfile":
        c = list(self.controls)
        c[i] = np.asarray(u, dtype=float).reshape(self.controls[i].shape)
        return StrategyProfile(tuple(c))

    @classmethod
    def zeros(cls, window: PlanningWindow) -> "StrategyProfile":
        return cls(tuple(np.zeros((window.horizon, m.control_dim)) for m in window.models))


@dataclass(frozen=True)
class NeighborSchedule:
    """``sets[t][i]`` is the neighbor set of agent ``i`` at step ``t``."""

    sets: tuple
    mode: str = "euclidean"
    d_prox: float = float("inf")

    def __post_init__(self):
        for per_t in self.sets:
            for i, s in enumerate(per_t):
                if i in s:
                    raise InputError("agent listed as its own neighbor")
                if any(i not in per_t[j] for j in s):
                    raise InputError("neighbor sets are not symmetric")

    @property
    def n_agents(self) -> int:
        return len(self.sets[0])

    def mask(self, i: int) -> np.ndarray:
        """``(N, T)`` boolean array of agent ``i``'s neighbors per step."""
        out = np.zeros((self.n_agents, len(self.sets)), dtype=bool)
        for t, per_t in enumerate(self.sets):
            for j in per_t[i]:
                out[j, t] = True
        return out

    def sizes(self) -> np.ndarray:
        return np.array([[len(s) for s in per_t] for per_t in self.sets])


def complete_schedule(N: int, steps: int) -> NeighborSchedule:
    sets = tuple(tuple(frozenset(j for j in range(N) if j != i) for i in range(N))
                 for _ in range(steps))
    return NeighborSchedule(sets, "euclidean", float("inf"))


def _as_positions(positions):
    P = np.asarray(positions, dtype=float)
    if P.ndim == 2:
        P = P[:, None, :]
    if P.ndim != 3:
        raise InputError("positions must have shape (N, T, n_p)")
    return P


def neighbor_sets(positions, d_prox: float, v_max: Optional[float] = None,
                  dt: Optional[float] = None) -> NeighborSchedule:
    """Euclidean proximity neighbors: ``j`` neighbors ``i`` at step ``t`` iff
    their distance is below ``d_prox``."""
    if v_max is not None and dt is not None and d_prox < 2.0 * v_max * dt:
        raise InputError(f"d_prox={d_prox} is below the one-step closing distance {2 * v_max * dt}")
    P = _as_positions(positions)
    N, T = P.shape[:2]
    D = np.linalg.norm(P[:, None] - P[None, :], axis=-1)    # (N, N, T)
    sets = tuple(tuple(frozenset(int(j) for j in range(N) if j != i and D[i, j, t] < d_prox)
                       for i in range(N)) for t in range(T))
    return NeighborSchedule(sets, "euclidean", float(d_prox))


def neighbor_sets_anisotropic(positions, pos_shapes) -> NeighborSchedule:
    """Neighbors by overlap of the combined shapes:
    ``(p_i - p_j)^T (Q_i boxplus Q_j)^-1 (p_i - p_j) <= 1``.

    ``pos_shapes[i, t]`` is agent i's position shape at step t.
    """
    P = _as_positions(positions)
    S = np.asarray(pos_shapes, dtype=float)
    N, T, n_p = P.shape
    if S.shape != (N, T, n_p, n_p):
        raise InputError("shape array does not match positions")
    member = np.zeros((N, N, T), dtype=bool)
    for i in range(N):
        for j in range(i + 1, N):
            for t in range(T):
                d = P[i, t] - P[j, t]
                try:
                    q = d @ np.linalg.solve(boxplus([S[i, t], S[j, t]]) + REGULARIZATION * np.eye(n_p), d)
                except np.linalg.LinAlgError as exc:
                    raise NumericalError("combined shape is singular") from exc
                member[i, j, t] = member[j, i, t] = q <= 1.0
    sets = tuple(tuple(frozenset(int(j) for j in np.flatnonzero(member[i, :, t])) for i in range(N))
                 for t in range(T))
    return NeighborSchedule(sets, "anisotropic", float("nan"))


@dataclass(frozen=True)
class NeCertificate:
    epsilon: float
    iterations_used: int
    potential_trace: tuple
    max_residual_improvement: float
    terminated_by: str
    accepted: tuple = field(default=())        # (agent, improvement) per accepted step
    potential_violations: int = 0


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 200
    memory: int = 10
    refresh: int = 5        # preconditioner rebuild interval, 0 disables it


def _trajectories(window: PlanningWindow, profile: StrategyProfile):
    return [rollout(window.models[j], window.x0[j], profile.controls[j], window.dt)
            for j in range(window.n_agents)]


def _problem(i, window, trajs, schedule):
    N = window.n_agents
    others = [j for j in range(N) if j != i]
    mask = schedule.mask(i)[others]
    pos = np.array([window.models[j].positions(trajs[j]) for j in others]) if others \
        else np.zeros((0, window.horizon + 1, window.models[i].position_dim))
    return AgentProblem(window, i, pos, others, mask)


def best_response(i: int, profile: StrategyProfile, window: PlanningWindow,
                  schedule: NeighborSchedule, options: Optional[SolverOptions] = None,
                  trajectories=None):
    """Minimize agent ``i``'s localized cost with everyone else frozen.

    Returns ``(controls, improvement, report)``. The solve is warm-started at
    the current controls and never returns a worse point: if it fails to
    improve, the old controls come back with zero improvement.
    """
    opts = options or SolverOptions()
    trajs = trajectories if trajectories is not None else _trajectories(window, profile)
    prob = _problem(i, window, trajs, schedule)
    u0 = profile.controls[i].reshape(-1)
    f_old = prob.objective(u0)
    pre = prob.preconditioner if opts.refresh > 0 else None
    u, rep = minimize(prob.objective, prob.gradient, u0, opts.tol, opts.max_iter,
                      prob.bounds, opts.memory, prob.value_and_grad, pre, opts.refresh)
    f_new = prob.objective(u)
    if not f_new < f_old:
        return profile.controls[i].copy(), 0.0, rep
    return u.reshape(profile.controls[i].shape), f_old - f_new, rep


def solve_epsilon_ne(window: PlanningWindow, schedule: NeighborSchedule, epsilon: float = 1e-2,
                     k_max: int = 50, init: Optional[StrategyProfile] = None,
                     options: Optional[SolverOptions] = None):
    """Iterated epsilon-best response.

    Each outer iteration holds a candidate best response for every agent and
    accepts the one with the largest improvement (lowest index on ties). It
    stops once every improvement is below ``epsilon`` or after ``k_max``
    accepted updates. Only agents coupled to the one just accepted need new
    candidates; the rest are reused.

    The schedule is fixed during a solve and symmetric, so the recorded
    potential (all own terms plus scheduled pair terms) drops by exactly the
    accepted improvement at every step.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    N = window.n_agents
    if schedule.n_agents != N or len(schedule.sets) != window.horizon + 1:
        raise InputError("schedule does not match the window")
    profile = init if init is not None else StrategyProfile.zeros(window)
    trajs = _trajectories(window, profile)
    coupled = [set(np.flatnonzero(schedule.mask(i).any(axis=1))) for i in range(N)]
    cand = [None] * N
    stale = set(range(N))
    trace = [potential_value(profile, window, schedule)]
    accepted = []
    violations = 0
    k = 0
    while True:
        for i in sorted(stale):
            u, r, _ = best_response(i, profile, window, schedule, options, trajs)
            cand[i] = (u, r)
        stale = set()
        r_all = np.array([c[1] for c in cand])
        best = int(np.argmax(r_all))
        if r_all[best] < epsilon:
            term = "epsilon"
            break
        if k >= k_max:
            term = "iteration_cap"
            break
        profile = profile.with_agent(best, cand[best][0])
        trajs[best] = rollout(window.models[best], window.x0[best], profile.controls[best], window.dt)
        phi = potential_value(profile, window, schedule)
        if phi > trace[-1]:
            violations += 1
        trace.append(phi)
        accepted.append((best, float(r_all[best])))
        k += 1
        stale = {best} | {j for j in range(N) if best in coupled[j]}
    cert = NeCertificate(float(epsilon), k, tuple(trace), float(r_all.max()), term,
                         tuple(accepted), violations)
    return profile, cert
