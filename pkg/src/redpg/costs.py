"""Per-agent cost stack, reference trajectories and the game potential.

Everything here is the plain numpy reference implementation. The optimizer
evaluates the same objective through the compiled kernel, and the tests
compare the two.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import AgentModel, step
from .ellipsoid import REGULARIZATION, boxplus, separation_margin
from .errors import InputError, NumericalError

PENALTY_MODES = ("frs", "euclidean")


def _check_psd(M, name, dim):
    M = np.asarray(M, dtype=float)
    if M.shape != (dim, dim):
        raise InputError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * max(1.0, np.abs(M).max(initial=0.0)):
        raise InputError(f"{name} is not symmetric")
    if dim and np.linalg.eigvalsh(0.5 * (M + M.T))[0] < -1e-10:
        raise InputError(f"{name} is not positive semidefinite")
    return M


@dataclass(frozen=True)
class CostWeights:
    Q_track: np.ndarray
    Q_terminal: np.ndarray
    R_control: np.ndarray
    lambda_v: float = 10.0
    lambda_frs: float = 10.0
    v_max: float = 5.0

    def __post_init__(self):
        n = np.shape(self.Q_track)[0]
        object.__setattr__(self, "Q_track", _check_psd(self.Q_track, "Q_track", n))
        object.__setattr__(self, "Q_terminal", _check_psd(self.Q_terminal, "Q_terminal", n))
        m = np.shape(self.R_control)[0]
        object.__setattr__(self, "R_control", _check_psd(self.R_control, "R_control", m))
        for name in ("lambda_v", "lambda_frs", "v_max"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")


def default_weights(model: AgentModel, lambda_v=10.0, lambda_frs=10.0, v_max=5.0) -> CostWeights:
    """Position-only tracking weights (10 on each position axis) and identity
    control weights."""
    Q = np.zeros((model.state_dim, model.state_dim))
    for k in model.position_indices:
        Q[k, k] = 10.0
    return CostWeights(Q, Q.copy(), np.eye(model.control_dim), lambda_v, lambda_frs, v_max)


def identity_weights(model: AgentModel) -> CostWeights:
    n, m = model.state_dim, model.control_dim
    return CostWeights(np.eye(n), np.eye(n), np.eye(m))


@dataclass(frozen=True)
class ReferenceTrajectory:
    points: np.ndarray      # (T+1, n_x)

    @property
    def terminal(self) -> np.ndarray:
        return self.points[-1]

    @property
    def T(self) -> int:
        return len(self.points) - 1

    def window(self, start: int, H: int) -> np.ndarray:
        """Stage rows ``start .. start+H-1`` (held at the end point past ``T``)
        followed by the terminal target, which is always the goal."""
        idx = np.minimum(np.arange(start, start + H), self.T)
        return np.vstack([self.points[idx], self.terminal])


def reference_trajectory(model: AgentModel, x0, goal, T: int, dt: float) -> ReferenceTrajectory:
    """Straight-line reference from ``x0`` to ``goal`` in ``T`` steps.

    Positions interpolate linearly, interior velocities carry the constant
    segment velocity and other components are copied from the goal. The
    first and last points are ``x0`` and ``goal`` exactly.
    """
    if T < 1:
        raise InputError("T must be at least 1")
    x0, goal = np.asarray(x0, dtype=float), np.asarray(goal, dtype=float)
    pos, vel = list(model.position_indices), list(model.velocity_indices)
    pts = np.tile(goal, (T + 1, 1))
    s = np.arange(T + 1)[:, None] / T
    pts[:, pos] = x0[pos] + s * (goal[pos] - x0[pos])
    if vel:
        pts[:, vel] = (goal[pos] - x0[pos]) / (T * dt)
    pts[0], pts[T] = x0, goal
    return ReferenceTrajectory(pts)


def tracking_stage(x, u, r, w: CostWeights) -> float:
    e = np.asarray(x, dtype=float) - r
    u = np.asarray(u, dtype=float)
    return float(e @ w.Q_track @ e + u @ w.R_control @ u)


def tracking_terminal(x_T, r_F, w: CostWeights) -> float:
    e = np.asarray(x_T, dtype=float) - r_F
    return float(e @ w.Q_terminal @ e)


def velocity_penalty(v, w: CostWeights) -> float:
    return float(np.exp(-w.lambda_v * (w.v_max - np.linalg.norm(v))))


def frs_penalty(xi: float, w: CostWeights) -> float:
    return float(np.exp(-w.lambda_frs * xi))


def euclidean_penalty(p_i, p_j, d_col: float, w: CostWeights) -> float:
    return float(np.exp(-w.lambda_frs * (np.linalg.norm(np.subtract(p_i, p_j)) - d_col)))


def stage_cost(i: int, states: Sequence[np.ndarray], u_i, neighbors, pos_shapes, ref_i,
               w: CostWeights, model: AgentModel) -> float:
    """Tracking, velocity barrier and FRS couplings of agent ``i`` at one step.

    ``states[j]`` is agent j's state and ``pos_shapes[j]`` its collision shape
    (position block) at this step.
    """
    if i in neighbors:
        raise InputError("neighbor set contains the agent itself")
    x = states[i]
    c = tracking_stage(x, u_i, ref_i, w) + velocity_penalty(x[list(model.velocity_indices)], w)
    p_i = model.positions(x)
    for j in sorted(neighbors):
        xi = separation_margin(p_i, model.positions(states[j]), pos_shapes[i], pos_shapes[j])
        c += frs_penalty(xi, w)
    return c


@dataclass(frozen=True)
class PlanningWindow:
    """Frozen data of one finite-horizon game.

    ``refs[i]`` has ``H+1`` rows; ``pair_inv[i, j, t]`` is the inverse of the
    (regularized) combined collision shape of agents i and j at window step
    t. ``penalty`` is ``"frs"`` or ``"euclidean"``.
    """

    models: tuple
    x0: tuple
    refs: tuple
    weights: tuple
    pair_inv: np.ndarray
    dt: float
    penalty: str = "frs"
    d_col: float = 0.5

    def __post_init__(self):
        N = len(self.models)
        if not (len(self.x0) == len(self.refs) == len(self.weights) == N):
            raise InputError("per-agent window fields have different lengths")
        if self.penalty not in PENALTY_MODES:
            raise InputError(f"penalty must be one of {PENALTY_MODES}")
        if len({m.position_dim for m in self.models}) > 1:
            raise InputError("agents must share the position dimension")
        H1 = len(self.refs[0])
        if any(len(r) != H1 for r in self.refs):
            raise InputError("references of different lengths")
        if self.pair_inv.shape[:3] != (N, N, H1):
            raise InputError("pair_inv shape does not match the window")

    @property
    def n_agents(self) -> int:
        return len(self.models)

    @property
    def horizon(self) -> int:
        return len(self.refs[0]) - 1


def pair_inverses(pos_shapes: np.ndarray) -> np.ndarray:
    """``inv(Q_i boxplus Q_j + reg I)`` for every ordered pair and step.

    ``pos_shapes`` has shape ``(N, T+1, n_p, n_p)``; the result has shape
    ``(N, N, T+1, n_p, n_p)`` and is exactly symmetric in ``(i, j)``. The
    diagonal blocks are left as zeros.
    """
    N, T1, n_p, _ = pos_shapes.shape
    out = np.zeros((N, N, T1, n_p, n_p))
    reg = REGULARIZATION * np.eye(n_p)
    for i in range(N):
        for j in range(i + 1, N):
            for t in range(T1):
                M = np.linalg.inv(boxplus([pos_shapes[i, t], pos_shapes[j, t]]) + reg)
                M = 0.5 * (M + M.T)
                out[i, j, t] = M
                out[j, i, t] = M
    return out


def rollout_states(model: AgentModel, x0, U, dt) -> np.ndarray:
    """Disturbance-free rollout through ``dynamics.step`` (reference route)."""
    U = np.asarray(U, dtype=float).reshape(-1, model.control_dim)
    X = [np.asarray(x0, dtype=float)]
    w0 = np.zeros(model.disturbance_dim)
    try:
        for u in U:
            X.append(step(model, X[-1], u, w0, dt))
    except NumericalError as exc:
        raise NumericalError(f"{model.tag}: rollout diverged") from exc
    return np.array(X)


def _pair_value(window: PlanningWindow, i, j, t, p_i, p_j, w: CostWeights) -> float:
    if window.penalty == "euclidean":
        return euclidean_penalty(p_i, p_j, window.d_col, w)
    d = p_i - p_j
    return frs_penalty(float(d @ window.pair_inv[i, j, t] @ d) - 1.0, w)


def _self_terms(model, X, U, ref, w: CostWeights) -> float:
    vel = list(model.velocity_indices)
    H = len(U)
    total = 0.0
    for t in range(H):
        total += tracking_stage(X[t], U[t], ref[t], w)
    total += tracking_terminal(X[H], ref[H], w)
    for t in range(H + 1):
        total += velocity_penalty(X[t][vel], w)
    return total


def agent_cost(i: int, profile, window: PlanningWindow, schedule=None) -> float:
    """Localized cost of agent ``i`` under ``profile``.

    Couplings are counted at every step ``t = 0..H`` where the schedule lists
    a neighbor; ``schedule=None`` couples every pair.
    """
    controls = profile.controls if hasattr(profile, "controls") else profile
    N = window.n_agents
    X = [rollout_states(window.models[j], window.x0[j], controls[j], window.dt) for j in range(N)]
    m_i, w = window.models[i], window.weights[i]
    total = _self_terms(m_i, X[i], np.asarray(controls[i]).reshape(-1, m_i.control_dim),
                        window.refs[i], w)
    for t in range(window.horizon + 1):
        nbrs = range(N) if schedule is None else schedule.sets[t][i]
        p_i = m_i.positions(X[i][t])
        for j in nbrs:
            if j != i:
                total += _pair_value(window, i, j, t, p_i,
                                     window.models[j].positions(X[j][t]), w)
    return total


def potential_value(profile, window: PlanningWindow, schedule=None) -> float:
    """Game potential: every agent's own terms plus each coupled unordered
    pair once. With ``schedule=None`` all pairs couple at every step.

    The pair term uses agent ``i``'s barrier weight for the pair ``i < j``;
    the identity with per-agent costs needs the pair weights to agree.
    """
    controls = profile.controls if hasattr(profile, "controls") else profile
    N = window.n_agents
    X = [rollout_states(window.models[j], window.x0[j], controls[j], window.dt) for j in range(N)]
    total = 0.0
    for i in range(N):
        m = window.models[i]
        total += _self_terms(m, X[i], np.asarray(controls[i]).reshape(-1, m.control_dim),
                             window.refs[i], window.weights[i])
    for t in range(window.horizon + 1):
        for i in range(N):
            nbrs = range(i + 1, N) if schedule is None else [j for j in schedule.sets[t][i] if j > i]
            for j in nbrs:
                total += _pair_value(window, i, j, t, window.models[i].positions(X[i][t]),
                                     window.models[j].positions(X[j][t]), window.weights[i])
    return total
