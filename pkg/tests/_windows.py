"""Small planning windows shared by the cost, optimizer and game tests."""
import numpy as np

from redpg.costs import CostWeights, PlanningWindow, pair_inverses, reference_trajectory
from redpg.dynamics import model_from_tag


def place(model, position, heading=0.0):
    x = np.zeros(model.state_dim)
    x[list(model.position_indices)] = position
    if model.tag == "fourwd":
        x[2] = heading
    return x


def weights_for(model, lambda_frs=10.0, v_max=5.0, lambda_v=10.0):
    Q = np.zeros((model.state_dim, model.state_dim))
    for k in model.position_indices:
        Q[k, k] = 10.0
    if model.tag == "quadrotor":
        for k in range(6):
            Q[k, k] = 1.0
    return CostWeights(Q, Q.copy(), np.eye(model.control_dim), lambda_v, lambda_frs, v_max)


def make_window(tag, starts, goals, H=8, dt=0.2, radius=0.25, penalty="frs", weights=None,
                T=None):
    """Window at trial step 0 with ball-shaped collision sets of radius ``radius``."""
    models = tuple(model_from_tag(tag) for _ in starts)
    x0 = tuple(place(m, s, np.arctan2(g[1] - s[1], g[0] - s[0])) for m, s, g in zip(models, starts, goals))
    xg = tuple(place(m, g, x[2] if m.tag == "fourwd" else 0.0) for m, g, x in zip(models, goals, x0))
    T = T or H
    refs = tuple(reference_trajectory(m, a, b, T, dt).window(0, H) for m, a, b in zip(models, x0, xg))
    n_p = models[0].position_dim
    shapes = np.tile(radius ** 2 * np.eye(n_p), (len(models), H + 1, 1, 1))
    w = weights or tuple(weights_for(m) for m in models)
    return PlanningWindow(models, x0, refs, w, pair_inverses(shapes), dt, penalty, 2 * radius)


def crossing_window(tag="quadrotor", H=8, **kw):
    """Three agents whose straight lines cross near the origin."""
    if tag == "fourwd":
        starts = [(-1.0, 0.0), (1.0, 0.1), (0.0, -1.0)]
        goals = [(1.0, 0.0), (-1.0, 0.1), (0.0, 1.0)]
    elif tag == "double_integrator_2d":
        starts = [(-1.0, 0.0), (1.0, 0.1), (0.0, -1.0)]
        goals = [(1.0, 0.0), (-1.0, 0.1), (0.0, 1.0)]
    else:
        starts = [(-1.0, 0.0, 1.0), (1.0, 0.1, 1.0), (0.0, -1.0, 1.1)]
        goals = [(1.0, 0.0, 1.0), (-1.0, 0.1, 1.0), (0.0, 1.0, 1.1)]
    return make_window(tag, starts, goals, H=H, **kw)
