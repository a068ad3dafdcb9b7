"""Compiled inner loops: model derivatives, Jacobians and the agent objective.

Everything here works on plain float64 arrays so numba can compile it. The
public modules wrap these functions behind dataclasses.
"""
import numpy as np
from numba import njit

DOUBLE_INTEGRATOR = 0
FOURWD = 1
QUADROTOR = 2

PENALTY_FRS = 0
PENALTY_EUCLIDEAN = 1


@njit(cache=True)
def deriv(kind, params, x, u, w):
    out = np.zeros(x.shape[0])
    if kind == DOUBLE_INTEGRATOR:
        d = x.shape[0] // 2
        for k in range(d):
            out[k] = x[d + k]
            out[d + k] = u[k] + w[k]
    elif kind == FOURWD:
        L = params[0]
        vl = u[0] + w[0]
        vr = u[1] + w[1]
        v = 0.5 * (vl + vr)
        out[0] = v * np.cos(x[2])
        out[1] = v * np.sin(x[2])
        out[2] = (vr - vl) / L
    else:
        m, g, ixx, iyy, izz = params[0], params[1], params[2], params[3], params[4]
        wx, wy, wz = x[0], x[1], x[2]
        out[0] = (u[1] + (iyy - izz) * wy * wz) / ixx
        out[1] = (u[2] + (izz - ixx) * wz * wx) / iyy
        out[2] = (u[3] + (ixx - iyy) * wx * wy) / izz
        out[3] = wx
        out[4] = wy
        out[5] = wz
        cr, sr = np.cos(x[3]), np.sin(x[3])
        cp, sp = np.cos(x[4]), np.sin(x[4])
        cy, sy = np.cos(x[5]), np.sin(x[5])
        a = (m * g + u[0]) / m
        out[6] = a * (cr * sp * cy + sr * sy) + w[0]
        out[7] = a * (cr * sp * sy - sr * cy) + w[1]
        out[8] = a * (cr * cp) - g + w[2]
        out[9] = x[6]
        out[10] = x[7]
        out[11] = x[8]
    return out


@njit(cache=True)
def jacobians(kind, params, x, u):
    """Analytic state and control Jacobians of ``deriv`` at zero disturbance."""
    n = x.shape[0]
    A = np.zeros((n, n))
    B = np.zeros((n, u.shape[0]))
    if kind == DOUBLE_INTEGRATOR:
        d = n // 2
        for k in range(d):
            A[k, d + k] = 1.0
            B[d + k, k] = 1.0
    elif kind == FOURWD:
        L = params[0]
        v = 0.5 * (u[0] + u[1])
        c, s = np.cos(x[2]), np.sin(x[2])
        A[0, 2] = -v * s
        A[1, 2] = v * c
        B[0, 0] = 0.5 * c
        B[0, 1] = 0.5 * c
        B[1, 0] = 0.5 * s
        B[1, 1] = 0.5 * s
        B[2, 0] = -1.0 / L
        B[2, 1] = 1.0 / L
    else:
        m, g, ixx, iyy, izz = params[0], params[1], params[2], params[3], params[4]
        wx, wy, wz = x[0], x[1], x[2]
        A[0, 1] = (iyy - izz) * wz / ixx
        A[0, 2] = (iyy - izz) * wy / ixx
        A[1, 0] = (izz - ixx) * wz / iyy
        A[1, 2] = (izz - ixx) * wx / iyy
        A[2, 0] = (ixx - iyy) * wy / izz
        A[2, 1] = (ixx - iyy) * wx / izz
        B[0, 1] = 1.0 / ixx
        B[1, 2] = 1.0 / iyy
        B[2, 3] = 1.0 / izz
        A[3, 0] = 1.0
        A[4, 1] = 1.0
        A[5, 2] = 1.0
        cr, sr = np.cos(x[3]), np.sin(x[3])
        cp, sp = np.cos(x[4]), np.sin(x[4])
        cy, sy = np.cos(x[5]), np.sin(x[5])
        a = (m * g + u[0]) / m
        dx = cr * sp * cy + sr * sy
        dy = cr * sp * sy - sr * cy
        dz = cr * cp
        A[6, 3] = a * (-sr * sp * cy + cr * sy)
        A[6, 4] = a * (cr * cp * cy)
        A[6, 5] = a * (-cr * sp * sy + sr * cy)
        A[7, 3] = a * (-sr * sp * sy - cr * cy)
        A[7, 4] = a * (cr * cp * sy)
        A[7, 5] = a * (cr * sp * cy + sr * sy)
        A[8, 3] = a * (-sr * cp)
        A[8, 4] = a * (-cr * sp)
        B[6, 0] = dx / m
        B[7, 0] = dy / m
        B[8, 0] = dz / m
        A[9, 6] = 1.0
        A[10, 7] = 1.0
        A[11, 8] = 1.0
    return A, B


@njit(cache=True)
def rk4_step(kind, params, x, u, w, dt):
    k1 = deriv(kind, params, x, u, w)
    k2 = deriv(kind, params, x + 0.5 * dt * k1, u, w)
    k3 = deriv(kind, params, x + 0.5 * dt * k2, u, w)
    k4 = deriv(kind, params, x + dt * k3, u, w)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def rollout(kind, params, x0, U, dt):
    """Disturbance-free RK4 rollout with zero-order-hold controls."""
    H = U.shape[0]
    X = np.empty((H + 1, x0.shape[0]))
    X[0] = x0
    w = np.zeros(8)
    for t in range(H):
        X[t + 1] = rk4_step(kind, params, X[t], U[t], w, dt)
    return X


@njit(cache=True)
def rk4_vjp(kind, params, x, u, dt, lam):
    """``(lam^T dx+/dx, lam^T dx+/du)`` for one RK4 step at zero disturbance."""
    w = np.zeros(8)
    k1 = deriv(kind, params, x, u, w)
    y2 = x + 0.5 * dt * k1
    k2 = deriv(kind, params, y2, u, w)
    y3 = x + 0.5 * dt * k2
    k3 = deriv(kind, params, y3, u, w)
    y4 = x + dt * k3
    A1, B1 = jacobians(kind, params, x, u)
    A2, B2 = jacobians(kind, params, y2, u)
    A3, B3 = jacobians(kind, params, y3, u)
    A4, B4 = jacobians(kind, params, y4, u)
    a4 = (dt / 6.0) * lam
    t4 = A4.T @ a4
    a3 = (dt / 3.0) * lam + dt * t4
    t3 = A3.T @ a3
    a2 = (dt / 3.0) * lam + 0.5 * dt * t3
    t2 = A2.T @ a2
    a1 = (dt / 6.0) * lam + 0.5 * dt * t2
    lx = lam + A1.T @ a1 + t2 + t3 + t4
    lu = B1.T @ a1 + B2.T @ a2 + B3.T @ a3 + B4.T @ a4
    return lx, lu


@njit(cache=True)
def rk4_jacobians(kind, params, x, u, dt):
    """Full Jacobians ``(dx+/dx, dx+/du)`` of one RK4 step."""
    n = x.shape[0]
    w = np.zeros(8)
    I = np.eye(n)
    k1 = deriv(kind, params, x, u, w)
    y2 = x + 0.5 * dt * k1
    k2 = deriv(kind, params, y2, u, w)
    y3 = x + 0.5 * dt * k2
    k3 = deriv(kind, params, y3, u, w)
    y4 = x + dt * k3
    A1, B1 = jacobians(kind, params, x, u)
    A2, B2 = jacobians(kind, params, y2, u)
    A3, B3 = jacobians(kind, params, y3, u)
    A4, B4 = jacobians(kind, params, y4, u)
    K1x, K1u = A1, B1
    K2x = A2 @ (I + 0.5 * dt * K1x)
    K2u = A2 @ (0.5 * dt * K1u) + B2
    K3x = A3 @ (I + 0.5 * dt * K2x)
    K3u = A3 @ (0.5 * dt * K2u) + B3
    K4x = A4 @ (I + dt * K3x)
    K4u = A4 @ (dt * K3u) + B4
    Ad = I + (dt / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    Bd = (dt / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)
    return Ad, Bd


@njit(cache=True)
def _pair_term(pen_mode, lam_f, d_col, diff, Minv):
    """Coupling barrier value and its gradient with respect to ``diff``."""
    npos = diff.shape[0]
    grad = np.zeros(npos)
    if pen_mode == PENALTY_FRS:
        Md = Minv @ diff
        xi = diff @ Md - 1.0
        val = np.exp(-lam_f * xi)
        for k in range(npos):
            grad[k] = -lam_f * val * 2.0 * Md[k]
    else:
        dist = np.sqrt(diff @ diff)
        val = np.exp(-lam_f * (dist - d_col))
        if dist > 0.0:
            for k in range(npos):
                grad[k] = -lam_f * val * diff[k] / dist
    return val, grad


@njit(cache=True)
def agent_objective(kind, params, x0, U, dt, ref, Qt, Qf, R, lam_v, v_max,
                    vel_idx, pos_idx, lam_f, pen_mode, d_col,
                    other_pos, other_mask, other_inv, want_grad):
    """Localized cost of one agent over a window and its control gradient.

    ``other_pos[k, t]`` is the frozen position of the k-th coupled agent,
    ``other_mask[k, t]`` whether it is a neighbor at step t, and
    ``other_inv[k, t]`` the inverse combined collision shape of the pair.
    The rollout is RK4; the gradient is the exact adjoint of it.
    """
    H = U.shape[0]
    n = x0.shape[0]
    nu = U.shape[1]
    X = rollout(kind, params, x0, U, dt)
    dLdx = np.zeros((H + 1, n))
    total = 0.0
    for t in range(H + 1):
        x = X[t]
        e = x - ref[t]
        if t < H:
            We = Qt @ e
            total += e @ We
            u = U[t]
            total += u @ (R @ u)
        else:
            We = Qf @ e
            total += e @ We
        for k in range(n):
            dLdx[t, k] += 2.0 * We[k]
        if vel_idx.shape[0] > 0:
            sq = 0.0
            for k in vel_idx:
                sq += x[k] * x[k]
            speed = np.sqrt(sq)
            bar = np.exp(-lam_v * (v_max - speed))
            total += bar
            if speed > 0.0:
                for k in vel_idx:
                    dLdx[t, k] += lam_v * bar * x[k] / speed
        else:
            total += np.exp(-lam_v * v_max)
        pi = np.empty(pos_idx.shape[0])
        for a in range(pos_idx.shape[0]):
            pi[a] = x[pos_idx[a]]
        for j in range(other_pos.shape[0]):
            if not other_mask[j, t]:
                continue
            diff = pi - other_pos[j, t]
            val, gp = _pair_term(pen_mode, lam_f, d_col, diff, other_inv[j, t])
            total += val
            for a in range(pos_idx.shape[0]):
                dLdx[t, pos_idx[a]] += gp[a]
    grad = np.zeros(H * nu)
    if not want_grad:
        return total, grad
    lam = dLdx[H].copy()
    for t in range(H - 1, -1, -1):
        lx, lu = rk4_vjp(kind, params, X[t], U[t], dt, lam)
        gu = 2.0 * (R @ U[t]) + lu
        for k in range(nu):
            grad[t * nu + k] = gu[k]
        lam = dLdx[t] + lx
    return total, grad


@njit(cache=True)
def tracking_hessian(kind, params, x0, U, dt, Qt, Qf, R):
    """Gauss-Newton Hessian of the tracking and control terms with respect
    to the flat control vector, linearized along the rollout of ``U``."""
    H = U.shape[0]
    n = x0.shape[0]
    nu = U.shape[1]
    nv = H * nu
    X = rollout(kind, params, x0, U, dt)
    S = np.zeros((n, nv))
    Hess = np.zeros((nv, nv))
    for t in range(H):
        for a in range(nu):
            for b in range(nu):
                Hess[t * nu + a, t * nu + b] += 2.0 * R[a, b]
    for t in range(H):
        Ad, Bd = rk4_jacobians(kind, params, X[t], U[t], dt)
        S = Ad @ S
        for a in range(n):
            for b in range(nu):
                S[a, t * nu + b] += Bd[a, b]
        W = Qf if t + 1 == H else Qt
        Hess += 2.0 * (S.T @ (W @ S))
    return Hess
