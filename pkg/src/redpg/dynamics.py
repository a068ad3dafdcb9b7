"""Agent dynamics models, integration, linearization and LQR gain synthesis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import InputError, NumericalError, SolverError

GRAVITY = 9.81


@dataclass(frozen=True)
class AgentModel:
    """Continuous-time dynamics of one agent.

    ``deriv(x, u, w)`` returns the state derivative; ``jacobian(x, u)`` returns
    the analytic ``(A, B)`` pair at zero disturbance. ``heading_index`` marks a
    planar heading angle (4WD only) so feedback can be expressed in the
    vehicle frame.
    """

    tag: str
    state_dim: int
    control_dim: int
    disturbance_dim: int
    deriv: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray, np.ndarray], tuple]
    position_indices: tuple
    velocity_indices: tuple
    control_bounds: Optional[np.ndarray] = None
    kind: int = -1
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    heading_index: Optional[int] = None

    def __post_init__(self):
        pos, vel = set(self.position_indices), set(self.velocity_indices)
        if pos & vel:
            raise InputError("position and velocity indices overlap")
        if any(not 0 <= k < self.state_dim for k in pos | vel):
            raise InputError("state index out of range")

    @property
    def position_dim(self) -> int:
        return len(self.position_indices)

    def positions(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states)[..., list(self.position_indices)]

    def clip_controls(self, u: np.ndarray) -> np.ndarray:
        if self.control_bounds is None:
            return u
        lo, hi = self.control_bounds[:, 0], self.control_bounds[:, 1]
        return np.clip(u, lo, hi)


@dataclass(frozen=True)
class Linearization:
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    reference_state: np.ndarray
    reference_control: np.ndarray


@dataclass(frozen=True)
class FeedbackGain:
    K: np.ndarray
    riccati: np.ndarray
    residual: float


def _check_dims(model: AgentModel, x, u, w):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (model.state_dim,) or u.shape != (model.control_dim,) \
            or w.shape != (model.disturbance_dim,):
        raise InputError(
            f"{model.tag}: expected x{(model.state_dim,)}, u{(model.control_dim,)}, "
            f"w{(model.disturbance_dim,)}; got {x.shape}, {u.shape}, {w.shape}")
    return x, u, w


def _rk4(fun, y, dt):
    k1 = fun(y)
    k2 = fun(y + 0.5 * dt * k1)
    k3 = fun(y + 0.5 * dt * k2)
    k4 = fun(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(model: AgentModel, x, u, w, dt: float) -> np.ndarray:
    """Advance one RK4 interval with zero-order-hold control and disturbance."""
    x, u, w = _check_dims(model, x, u, w)
    if dt < 0:
        raise InputError(f"dt must be non-negative, got {dt}")
    if dt == 0:
        return x.copy()
    out = _rk4(lambda y: model.deriv(y, u, w), x, dt)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{model.tag}: non-finite state after step")
    return out


def linearize(model: AgentModel, x_ref, u_ref) -> Linearization:
    """Central finite-difference Jacobians of ``deriv`` at ``(x_ref, u_ref, 0)``."""
    x_ref, u_ref, w0 = _check_dims(model, x_ref, u_ref, np.zeros(model.disturbance_dim))
    if not (np.all(np.isfinite(x_ref)) and np.all(np.isfinite(u_ref))):
        raise InputError("linearization point must be finite")

    def jac(fun, z):
        cols = []
        for k in range(z.size):
            h = 1e-6 * (1.0 + abs(z[k]))
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            cols.append((fun(zp) - fun(zm)) / (2.0 * h))
        return np.column_stack(cols) if cols else np.zeros((model.state_dim, 0))

    A = jac(lambda z: model.deriv(z, u_ref, w0), x_ref)
    B = jac(lambda z: model.deriv(x_ref, z, w0), u_ref)
    D = jac(lambda z: model.deriv(x_ref, u_ref, z), w0)
    if not all(np.all(np.isfinite(M)) for M in (A, B, D)):
        raise NumericalError(f"{model.tag}: non-finite Jacobian")
    return Linearization(A, B, D, x_ref, u_ref)


def _care_residual(A, B, Q, R, P):
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def lqr_gain(A, B, Q_lqr, R_lqr, tol: float = 1e-8, max_iter: int = 50) -> FeedbackGain:
    """Continuous-time LQR gain ``K = -R^-1 B^T P`` (closed loop ``A + B K``).

    The Riccati solution is seeded by scipy's Schur solver and polished with
    Newton-Kleinman iterations until the residual norm is below ``tol``.
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q_lqr).astype(float), np.atleast_2d(R_lqr).astype(float)
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"Riccati solver failed: {exc}") from exc
    if not np.all(np.isfinite(P)):
        raise SolverError("Riccati solution is not finite")
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(_care_residual(A, B, Q, R, P))
    for _ in range(max_iter):
        if res <= tol:
            break
        K = -np.linalg.solve(R, B.T @ P)
        Acl = A + B @ K
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            break
        P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        res_new = np.linalg.norm(_care_residual(A, B, Q, R, P_new))
        if not res_new < res:
            break
        P, res = P_new, res_new
    K = -np.linalg.solve(R, B.T @ P)
    eig = np.linalg.eigvals(A + B @ K)
    scale = max(1.0, np.linalg.norm(Q), np.linalg.norm(P))
    if res > tol * scale or np.max(eig.real) >= 0:
        raise SolverError(
            f"LQR failed: residual {res:.3e}, max closed-loop real part {np.max(eig.real):.3e}",
            residual=res)
    return FeedbackGain(K=K, riccati=P, residual=float(res))


def _wrap(kind, params):
    params = np.asarray(params, dtype=float)

    def f(x, u, w):
        return _kernels.deriv(kind, params, np.asarray(x, dtype=float),
                              np.asarray(u, dtype=float), np.asarray(w, dtype=float))

    def jac(x, u):
        return _kernels.jacobians(kind, params, np.asarray(x, dtype=float),
                                  np.asarray(u, dtype=float))
    return f, jac, params


def quadrotor_model(mass: float = 1.0, inertia=(0.1, 0.1, 0.2), gravity: float = GRAVITY) -> AgentModel:
    """12-state small-angle rigid-body quadrotor.

    State ``[wx, wy, wz, roll, pitch, yaw, vx, vy, vz, px, py, pz]``; controls
    ``[dF, tau_x, tau_y, tau_z]`` where ``dF`` is collective thrust above the
    hover value ``m g``. Disturbances are additive translational accelerations.
    """
    params = [mass, gravity, *inertia]
    f, jac, params = _wrap(_kernels.QUADROTOR, params)
    return AgentModel("quadrotor", 12, 4, 3, f, jac, (9, 10, 11), (6, 7, 8),
                      kind=_kernels.QUADROTOR, params=params)


def fourwd_model(L: float = 0.2, wheel_speed_max: Optional[float] = None) -> AgentModel:
    """Differential-drive 4WD vehicle with wheel-speed disturbances."""
    if not L > 0:
        raise InputError(f"wheelbase L must be positive, got {L}")
    f, jac, params = _wrap(_kernels.FOURWD, [L])
    bounds = None
    if wheel_speed_max is not None:
        bounds = np.array([[-wheel_speed_max, wheel_speed_max]] * 2, dtype=float)
    return AgentModel("fourwd", 3, 2, 2, f, jac, (0, 1), (), bounds,
                      kind=_kernels.FOURWD, params=params, heading_index=2)


def double_integrator_model(dim: int = 2) -> AgentModel:
    if dim not in (2, 3):
        raise InputError(f"double integrator dimension must be 2 or 3, got {dim}")
    f, jac, params = _wrap(_kernels.DOUBLE_INTEGRATOR, [dim])
    return AgentModel(f"double_integrator_{dim}d", 2 * dim, dim, dim, f, jac,
                      tuple(range(dim)), tuple(range(dim, 2 * dim)),
                      kind=_kernels.DOUBLE_INTEGRATOR, params=params)


MODEL_TAGS = ("quadrotor", "fourwd", "double_integrator_2d", "double_integrator_3d")


def model_from_tag(tag: str, L: float = 0.2, wheel_speed_max: Optional[float] = None) -> AgentModel:
    if tag == "quadrotor":
        return quadrotor_model()
    if tag == "fourwd":
        return fourwd_model(L, wheel_speed_max)
    if tag == "double_integrator_2d":
        return double_integrator_model(2)
    if tag == "double_integrator_3d":
        return double_integrator_model(3)
    raise InputError(f"unknown model tag {tag!r}; expected one of {MODEL_TAGS}")


def trim_control(model: AgentModel, x0, goal, horizon_seconds: float) -> np.ndarray:
    """Control that holds the straight-line cruise from ``x0`` toward ``goal``.

    Zero for the hover-referenced quadrotor and the double integrator. For
    the 4WD vehicle both wheels run at the segment speed, which keeps the
    linearization controllable.
    """
    if model.heading_index is None:
        return np.zeros(model.control_dim)
    dist = np.linalg.norm(model.positions(goal) - model.positions(x0))
    v = dist / horizon_seconds if horizon_seconds > 0 else 0.0
    return np.full(model.control_dim, max(v, 1e-2))


def heading_frame(model: AgentModel, x_nominal, x_linearization) -> np.ndarray:
    """State-space rotation mapping errors at ``x_nominal`` into the frame of
    the linearization point (identity for models without a heading)."""
    S = np.eye(model.state_dim)
    if model.heading_index is None:
        return S
    a = x_linearization[model.heading_index] - x_nominal[model.heading_index]
    c, s = np.cos(a), np.sin(a)
    i, j = model.position_indices
    S[i, i], S[i, j], S[j, i], S[j, j] = c, -s, s, c
    return S
