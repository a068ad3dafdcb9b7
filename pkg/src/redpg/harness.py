"""Experiment engine: receding-horizon planning, tracked execution under
disturbance, metrics, Monte Carlo aggregation, the Euclidean ablation,
hyperparameter sweeps and the intersection scenarios."""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .costs import (CostWeights, PlanningWindow, pair_inverses,
                    reference_trajectory)
from .dynamics import _rk4, heading_frame, model_from_tag, step, trim_control
from .ellipsoid import boxplus
from .errors import GenerationError, InputError, RedpgError
from .game import (NeCertificate, SolverOptions, StrategyProfile, neighbor_sets,
                   neighbor_sets_anisotropic, solve_epsilon_ne)
from .optimizer import rollout
from .reachability import FrsConfig, FrsSequence, calibrated_frs_sequence

DEFAULT_BOUNDS = ((0.0, 0.0, 0.0), (30.0, 30.0, 10.0))


@dataclass(frozen=True)
class AgentSpec:
    tag: str
    x0: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))
        if self.x0.shape != self.goal.shape:
            raise InputError("start and goal states differ in size")


@dataclass(frozen=True)
class Scenario:
    """One planning problem plus every knob of the pipeline.

    ``footprint_radius`` is the physical radius added (as a ball) to each
    agent's position reachable set before pairwise separation is measured;
    ``None`` means ``d_col / 2``. ``weights`` optionally overrides the
    per-agent cost weights built from ``q_position``, ``q_attitude``
    (quadrotor rates and angles), ``r_control`` and the barrier parameters.
    """

    agents: tuple
    T: int = 50
    dt: float = 0.2
    mpc_horizon: int = 20
    sigma: float = 0.02
    d_col: float = 0.5
    d_prox: float = 2.0
    neighbor_mode: str = "euclidean"
    epsilon: float = 1e-2
    k_max: int = 50
    k_max_replan: int = 10
    seed: int = 0
    bounds: Optional[tuple] = None
    lambda_v: float = 10.0
    lambda_frs: float = 10.0
    v_max: float = 5.0
    q_position: float = 10.0
    r_control: float = 1.0
    q_attitude: float = 1.0
    weights: Optional[tuple] = None
    initial_shape_scale: float = 1e-4
    eta: float = 1e-3
    frs_mode: str = "propagated"
    frs_samples: int = 1000
    footprint_radius: Optional[float] = None
    penalty: str = "frs"
    solver_tol: float = 1e-6
    solver_max_iter: int = 200
    wheelbase: float = 0.2
    wheel_speed_max: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise InputError("scenario has no agents")
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.mpc_horizon >= 1:
            raise InputError("need T >= mpc_horizon >= 1")
        if self.sigma < 0:
            raise InputError("sigma must be non-negative")
        if not self.d_col > 0:
            raise InputError("d_col must be positive")
        if self.neighbor_mode not in ("euclidean", "anisotropic"):
            raise InputError(f"unknown neighbor mode {self.neighbor_mode!r}")
        if self.neighbor_mode == "euclidean" and self.d_prox < 2.0 * self.v_max * self.dt:
            raise InputError(f"d_prox={self.d_prox} is below 2*v_max*dt={2 * self.v_max * self.dt}")
        if self.penalty not in ("frs", "euclidean"):
            raise InputError(f"unknown penalty {self.penalty!r}")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def radius(self) -> float:
        return self.d_col / 2.0 if self.footprint_radius is None else self.footprint_radius

    def models(self):
        return [model_from_tag(a.tag, self.wheelbase, self.wheel_speed_max) for a in self.agents]

    def agent_weights(self, i: int, model) -> CostWeights:
        if self.weights is not None:
            return self.weights[i]
        Q = np.zeros((model.state_dim, model.state_dim))
        for k in model.position_indices:
            Q[k, k] = self.q_position
        if model.tag == "quadrotor":
            # body rates and Euler angles, kept near hover where the tracking
            # gain and the reachable sets are linearized
            for k in range(6):
                Q[k, k] = self.q_attitude
        return CostWeights(Q, Q.copy(), self.r_control * np.eye(model.control_dim),
                           self.lambda_v, self.lambda_frs, self.v_max)

    def frs_config(self, model) -> FrsConfig:
        return FrsConfig(self.initial_shape_scale * np.eye(model.state_dim), self.sigma,
                         self.eta, mode=self.frs_mode)


@dataclass
class ExecutionRecord:
    nominal_states: list            # per agent (T+1, n_x)
    nominal_controls: list          # per agent (T, n_u)
    certificates: list              # NeCertificate per planning step
    neighbor_counts: np.ndarray     # (T, N) neighbor-set sizes at the current step
    executed_states: Optional[list] = None
    executed_controls: Optional[list] = None
    disturbances: Optional[list] = None
    failed: bool = False
    failure: str = ""


@dataclass(frozen=True)
class Metrics:
    tracking_cost: float
    dist_to_goal_at_Tm5: float
    collision_ratio: float
    min_pairwise_distance: float
    near_collision_count: int
    avg_neighbors: float
    ne_iterations: tuple

    def to_dict(self):
        d = asdict(self)
        d["ne_iterations"] = list(self.ne_iterations)
        return d


METRIC_FIELDS = tuple(f.name for f in fields(Metrics))
SCALAR_METRICS = METRIC_FIELDS[:-1]


# ---------------------------------------------------------------- scenarios

def _state_at(model, position, heading=None):
    x = np.zeros(model.state_dim)
    x[list(model.position_indices)] = position
    if heading is not None and model.heading_index is not None:
        x[model.heading_index] = heading
    return x


def _draw_separated(rng, n, lo, hi, min_sep, budget):
    pts = []
    while len(pts) < n:
        if budget[0] <= 0:
            raise GenerationError(f"could not place {n} points {min_sep} m apart within the draw cap")
        budget[0] -= 1
        p = rng.uniform(lo, hi)
        if all(np.linalg.norm(p - q) >= min_sep for q in pts):
            pts.append(p)
    return pts


def random_scenario(N: int, bounds=DEFAULT_BOUNDS, min_sep: float = 1.0, tag: str = "quadrotor",
                    seed: int = 0, **params) -> Scenario:
    """Uniform random starts and goals inside ``bounds`` with every pair of
    starts (and of goals) at least ``min_sep`` apart. At most 1e5 draws."""
    if N < 1:
        raise InputError("N must be positive")
    model = model_from_tag(tag)
    lo, hi = (np.asarray(b, dtype=float)[:model.position_dim] for b in bounds)
    rng = np.random.default_rng(seed)
    budget = [100_000]
    starts = _draw_separated(rng, N, lo, hi, min_sep, budget)
    goals = _draw_separated(rng, N, lo, hi, min_sep, budget)
    agents = []
    for s, g in zip(starts, goals):
        heading = math.atan2(g[1] - s[1], g[0] - s[0]) if model.heading_index is not None else None
        agents.append(AgentSpec(tag, _state_at(model, s, heading), _state_at(model, g, heading)))
    return Scenario(tuple(agents), seed=seed, bounds=(tuple(lo), tuple(hi)), **params)


@dataclass(frozen=True)
class RandomScenarios:
    """Picklable factory: ``seed -> random_scenario(...)``."""

    N: int
    bounds: tuple = DEFAULT_BOUNDS
    min_sep: float = 1.0
    tag: str = "quadrotor"
    params: tuple = ()

    def __call__(self, seed: int) -> Scenario:
        return random_scenario(self.N, self.bounds, self.min_sep, self.tag, seed, **dict(self.params))

    def with_params(self, **kw) -> "RandomScenarios":
        p = dict(self.params)
        p.update(kw)
        return replace(self, params=tuple(sorted(p.items())))


@dataclass(frozen=True)
class FixedScenario:
    """Same agents every trial; only the seed (disturbance draws) changes."""

    scenario: Scenario

    def __call__(self, seed: int) -> Scenario:
        return replace(self.scenario, seed=seed)

    def with_params(self, **kw) -> "FixedScenario":
        return FixedScenario(replace(self.scenario, **kw))


def intersection_scenario(variant: int = 1, **params) -> Scenario:
    """Four-way intersection of 4WD vehicles (reconstructed geometry).

    Roads run along both axes with lanes 0.15 m either side of the centre
    line and 2 m approach legs. Vehicle A comes from the south and turns
    left to the west, B comes from the north and turns left to the east,
    C drives straight from the west to the east; their paths cross near
    the centre at the same time. Variant 2 adds a fourth vehicle driving
    along the far eastern edge, well away from the conflict zone.
    """
    lane = 0.15
    leg = 2.0
    specs = [
        ((lane, -leg), (-leg, lane)),        # south, left turn to west
        ((-lane, leg), (leg, -lane)),        # north, left turn to east
        ((-leg, -lane), (leg, -lane - 0.3)),  # west, straight east
    ]
    if variant == 2:
        specs.append(((leg + 2.0, -leg), (leg + 2.0, leg)))
    elif variant != 1:
        raise InputError("intersection variant must be 1 or 2")
    model = model_from_tag("fourwd")
    agents = []
    for s, g in specs:
        s, g = np.array(s), np.array(g)
        d = g - s
        heading = math.atan2(d[1], d[0])
        agents.append(AgentSpec("fourwd", _state_at(model, s, heading), _state_at(model, g, heading)))
    base = dict(T=75, dt=0.2, mpc_horizon=10, d_col=0.3, d_prox=1.0, v_max=1.0,
                wheel_speed_max=1.0, footprint_radius=0.2)
    base.update(params)
    return Scenario(tuple(agents), **base)


# -------------------------------------------------------------- planning

_FRS_CACHE: dict = {}


def _frs_key(sc: Scenario, model, x_lin, u_trim):
    return (model.tag, tuple(model.params), x_lin.tobytes(), u_trim.tobytes(), sc.sigma,
            sc.initial_shape_scale, sc.eta, sc.frs_mode, sc.frs_samples, sc.T, sc.dt)


def trial_frs(sc: Scenario, models=None):
    """Reachable-set sequences for every agent, with eta calibration.

    Linearization points differ only in position for agents of one model,
    and the dynamics do not depend on position, so sequences are computed
    at the origin and shared (cached across trials).
    """
    models = models or sc.models()
    out, ratios = [], []
    for m, a in zip(models, sc.agents):
        u_trim = trim_control(m, a.x0, a.goal, sc.T * sc.dt)
        x_lin = a.x0.copy()
        x_lin[list(m.position_indices)] = 0.0
        key = _frs_key(sc, m, x_lin, u_trim)
        if key not in _FRS_CACHE:
            _FRS_CACHE[key] = calibrated_frs_sequence(m, x_lin, u_trim, sc.frs_config(m), sc.dt, sc.T,
                                                      samples=sc.frs_samples, seed=0)
        frs, ratio = _FRS_CACHE[key]
        out.append(frs)
        ratios.append(ratio)
    return out, ratios


def collision_shapes(sc: Scenario, frs: Sequence[FrsSequence]) -> np.ndarray:
    """``(N, T+1, n_p, n_p)``: position reachable set grown by the footprint."""
    n_p = frs[0].position_shapes.shape[-1]
    ball = sc.radius ** 2 * np.eye(n_p)
    return np.array([[boxplus([f.position_shape(t), ball]) for t in range(sc.T + 1)] for f in frs])


def plan_nominal(sc: Scenario, frs=None) -> ExecutionRecord:
    """Receding-horizon epsilon-NE planning over the whole trial.

    At every step the neighbor schedule is rebuilt from the warm-start
    predictions, the game is solved over the MPC window, the first control
    of every agent is committed and the nominal states advance without
    disturbance.
    """
    models = sc.models()
    N, H, T = sc.n_agents, sc.mpc_horizon, sc.T
    if frs is None:
        frs, _ = trial_frs(sc, models)
    shapes = collision_shapes(sc, frs)
    pair_inv = pair_inverses(shapes)
    refs = [reference_trajectory(m, a.x0, a.goal, T, sc.dt) for m, a in zip(models, sc.agents)]
    weights = tuple(sc.agent_weights(i, m) for i, m in enumerate(models))
    opts = SolverOptions(tol=sc.solver_tol, max_iter=sc.solver_max_iter)
    X = [[a.x0.copy()] for a in sc.agents]
    U = [[] for _ in range(N)]
    certs = []
    counts = np.zeros((T, N), dtype=int)
    profile = None
    try:
        for s in range(T):
            idx = np.minimum(np.arange(s, s + H + 1), T)
            x_now = tuple(X[i][-1] for i in range(N))
            window = PlanningWindow(tuple(models), x_now, tuple(r.window(s, H) for r in refs),
                                    weights, pair_inv[:, :, idx], sc.dt, sc.penalty, sc.d_col)
            if profile is None:
                init = StrategyProfile.zeros(window)
            else:
                init = StrategyProfile(tuple(np.vstack([u[1:], u[-1:]]) for u in profile.controls))
            pred = np.array([m.positions(rollout(m, x_now[i], init.controls[i], sc.dt))
                             for i, m in enumerate(models)])
            if sc.neighbor_mode == "euclidean":
                sched = neighbor_sets(pred, sc.d_prox)
            else:
                sched = neighbor_sets_anisotropic(pred, shapes[:, idx])
            counts[s] = [len(x) for x in sched.sets[0]]
            profile, cert = solve_epsilon_ne(window, sched, sc.epsilon,
                                             sc.k_max if s == 0 else sc.k_max_replan, init, opts)
            certs.append(cert)
            for i, m in enumerate(models):
                u = m.clip_controls(profile.controls[i][0].copy())
                U[i].append(u)
                X[i].append(step(m, X[i][-1], u, np.zeros(m.disturbance_dim), sc.dt))
    except RedpgError as exc:
        return ExecutionRecord([np.array(x) for x in X], [np.array(u) for u in U], certs, counts,
                               failed=True, failure=f"{type(exc).__name__}: {exc}")
    return ExecutionRecord([np.array(x) for x in X], [np.array(u) for u in U], certs, counts)


# ------------------------------------------------------------- execution

def sample_disturbance(sigma: float, n_w: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Zero-mean Gaussian with standard deviation ``sigma`` per channel,
    rejection-sampled into ``[-sigma, sigma]``."""
    if sigma < 0:
        raise InputError("sigma must be non-negative")
    shape = (n_w,) if size is None else (size, n_w)
    if sigma == 0:
        return np.zeros(shape)
    out = rng.normal(0.0, sigma, shape)
    bad = np.abs(out) > sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > sigma
    return out


def execute_tracked(sc: Scenario, record: ExecutionRecord, frs, rng: np.random.Generator) -> ExecutionRecord:
    """Run the plan on the disturbed system with LQR tracking.

    Each step integrates the true state and the nominal state together over
    one RK4 interval under ``u = u_bar + K (x - x_bar)`` (errors rotated into
    the linearization heading for the 4WD model). The nominal half is reset
    to the recorded nominal state at every step, so ``sigma = 0`` reproduces
    the nominal trajectory exactly.
    """
    models = sc.models()
    T = len(record.nominal_controls[0])
    Xs, Us, Ws = [], [], []
    for i, m in enumerate(models):
        n = m.state_dim
        K = frs[i].gain.K
        x_lin = frs[i].linearization.reference_state
        W = sample_disturbance(sc.sigma, m.disturbance_dim, rng, T)
        w0 = np.zeros(m.disturbance_dim)
        X = [record.nominal_states[i][0].copy()]
        U = []
        for s in range(T):
            ubar = record.nominal_controls[i][s]
            w = W[s]

            def control(x, xb):
                return m.clip_controls(ubar + K @ (heading_frame(m, xb, x_lin) @ (x - xb)))

            def f(y):
                x, xb = y[:n], y[n:]
                return np.concatenate([m.deriv(x, control(x, xb), w), m.deriv(xb, ubar, w0)])

            U.append(control(X[-1], record.nominal_states[i][s]))
            y = _rk4(f, np.concatenate([X[-1], record.nominal_states[i][s]]), sc.dt)
            X.append(y[:n])
        Xs.append(np.array(X))
        Us.append(np.array(U))
        Ws.append(W)
    return replace(record, executed_states=Xs, executed_controls=Us, disturbances=Ws)


def _pairwise_distances(pos):
    """``pos`` (N, T+1, n_p) -> (T+1, number of pairs)."""
    N = pos.shape[0]
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    if not pairs:
        return np.full((pos.shape[1], 0), np.inf)
    return np.stack([np.linalg.norm(pos[i] - pos[j], axis=-1) for i, j in pairs], axis=1)


def compute_metrics(record: ExecutionRecord, sc: Scenario) -> Metrics:
    models = sc.models()
    X = record.executed_states if record.executed_states is not None else record.nominal_states
    U = record.executed_controls if record.executed_controls is not None else record.nominal_controls
    T = len(U[0])
    terms = []
    for i, m in enumerate(models):
        ref = reference_trajectory(m, sc.agents[i].x0, sc.agents[i].goal, T, sc.dt).points
        E = X[i] - ref
        terms.extend(np.einsum("ti,ti->t", E, E))
        terms.extend(np.einsum("ti,ti->t", U[i], U[i]))
    tracking = math.fsum(terms)
    t_eff = max(T - 5, 0)
    dist = math.fsum(float(np.linalg.norm(m.positions(X[i][t_eff]) - m.positions(sc.agents[i].goal)))
                     for i, m in enumerate(models)) / len(models)
    pos = np.array([m.positions(X[i]) for i, m in enumerate(models)])
    D = _pairwise_distances(pos)
    closest = D.min(axis=1) if D.shape[1] else np.full(D.shape[0], np.inf)
    collision_ratio = float(np.mean(closest < sc.d_col))
    near = int(np.sum(closest < sc.d_col + 0.05))
    counts = record.neighbor_counts
    avg_nb = math.fsum(counts.ravel().tolist()) / counts.size if counts.size else 0.0
    return Metrics(tracking, dist, collision_ratio, float(closest.min()), near, avg_nb,
                   tuple(c.iterations_used for c in record.certificates))


def frs_containment_of_run(record: ExecutionRecord, frs) -> float:
    """Fraction of (agent, t) pairs whose executed tracking error lies in the
    agent's reachable-set ellipsoid at t."""
    inside = total = 0
    for i, f in enumerate(frs):
        E = record.executed_states[i] - record.nominal_states[i]
        for t, e in enumerate(E):
            Q = f.shapes[min(t, len(f.shapes) - 1)]
            inside += float(e @ np.linalg.solve(Q, e)) <= 1.0 + 1e-9
            total += 1
    return inside / total


# ----------------------------------------------------------- Monte Carlo

@dataclass
class TrialResult:
    seed: int
    metrics: Optional[Metrics]
    failed: bool = False
    failure: str = ""
    record: Optional[ExecutionRecord] = None
    calibrated_eta: tuple = ()


def run_trial(sc: Scenario, keep_record: bool = False) -> TrialResult:
    models = sc.models()
    frs, _ = trial_frs(sc, models)
    plan = plan_nominal(sc, frs)
    etas = tuple(f.config.eta for f in frs)
    if plan.failed:
        return TrialResult(sc.seed, None, True, plan.failure, plan if keep_record else None, etas)
    rng = np.random.default_rng([sc.seed, 7])
    rec = execute_tracked(sc, plan, frs, rng)
    return TrialResult(sc.seed, compute_metrics(rec, sc), False, "", rec if keep_record else None, etas)


def _trial_job(args):
    factory, seed, keep = args
    try:
        return run_trial(factory(seed), keep)
    except RedpgError as exc:
        return TrialResult(seed, None, True, f"{type(exc).__name__}: {exc}")


@dataclass
class MonteCarloResult:
    trials: list
    mean: dict
    std: dict

    @property
    def failed_count(self) -> int:
        return sum(t.failed for t in self.trials)

    def table(self):
        rows = []
        for t in self.trials:
            row = {"seed": t.seed, "failed": int(t.failed)}
            if t.metrics is not None:
                row.update({k: getattr(t.metrics, k) for k in SCALAR_METRICS})
            rows.append(row)
        return rows


def _aggregate(results):
    ok = [r.metrics for r in results if not r.failed]
    mean, std = {}, {}
    for k in SCALAR_METRICS:
        vals = [float(getattr(m, k)) for m in ok]
        if not vals:
            mean[k] = std[k] = float("nan")
            continue
        mu = math.fsum(vals) / len(vals)
        mean[k] = mu
        std[k] = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals))
    iters = [i for m in ok for i in m.ne_iterations]
    mean["ne_iterations"] = math.fsum(iters) / len(iters) if iters else float("nan")
    return mean, std


def monte_carlo(template: Union[Callable[[int], Scenario], Scenario], trials: int, base_seed: int = 0,
                jobs: int = 1, keep_records: bool = False) -> MonteCarloResult:
    """Run ``trials`` trials with seeds ``base_seed .. base_seed+trials-1``.

    ``template`` maps a seed to a scenario (a plain Scenario is reused with
    only its seed replaced). Aggregates use exactly rounded sums over trials
    in seed order, so they do not depend on ``jobs``.
    """
    if trials < 1:
        raise InputError("trials must be at least 1")
    factory = FixedScenario(template) if isinstance(template, Scenario) else template
    args = [(factory, base_seed + k, keep_records) for k in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_job, args))
    else:
        results = [_trial_job(a) for a in args]
    results.sort(key=lambda r: r.seed)
    mean, std = _aggregate(results)
    return MonteCarloResult(results, mean, std)


def ablation_euclidean(template):
    """Same pipeline with the reachable-set coupling replaced by the
    Euclidean barrier ``exp(-lambda (|p_i - p_j| - d_col))``."""
    if isinstance(template, Scenario):
        return replace(template, penalty="euclidean")
    return template.with_params(penalty="euclidean")


@dataclass
class SweepResult:
    rows: list          # dicts: parameters, mean metrics, failed count
    winner: Optional[dict]

    @property
    def has_winner(self) -> bool:
        return self.winner is not None


def select_winner(rows):
    """Safety-first lexicographic rule: drop cells with any collision, then
    minimize tracking cost, then distance to goal."""
    safe = [r for r in rows if r["collision_ratio"] == 0.0 and r["failed"] == 0]
    if not safe:
        return None
    return min(safe, key=lambda r: (r["tracking_cost"], r["dist_to_goal_at_Tm5"]))


def grid_sweep(template, grid: dict, trials: int, base_seed: int = 0, jobs: int = 1) -> SweepResult:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise InputError("grid must name at least one parameter with at least one value")
    if isinstance(template, Scenario):
        template = FixedScenario(template)
    names = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in names)):
        params = dict(zip(names, values))
        res = monte_carlo(template.with_params(**params), trials, base_seed, jobs)
        row = dict(params)
        row.update({k: res.mean[k] for k in SCALAR_METRICS})
        row["max_collision_ratio"] = max((t.metrics.collision_ratio for t in res.trials if not t.failed),
                                         default=float("nan"))
        row["failed"] = res.failed_count
        rows.append(row)
    return SweepResult(rows, select_winner(rows))


# ---------------------------------------------------------------- output

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def trajectory_rows(states, controls, trial: int = 0):
    rows = []
    for i, (X, U) in enumerate(zip(states, controls)):
        for t, x in enumerate(X):
            u = U[t] if t < len(U) else np.full(U.shape[1], np.nan)
            rows.append([str(trial), str(t), str(i)] + [fmt(v) for v in x] +
                        ["" if np.isnan(v) else fmt(v) for v in u])
    return rows


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def trajectory_header(sc: Scenario):
    m = sc.models()[0]
    return (["trial", "t", "agent"] + [f"x{k}" for k in range(m.state_dim)]
            + [f"u{k}" for k in range(m.control_dim)])


def dumps(obj, indent: int = 0) -> str:
    """JSON text with sorted keys and floats at 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(dumps(v, indent + 1) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def certificate_dict(c: NeCertificate) -> dict:
    return {"epsilon": c.epsilon, "iterations_used": c.iterations_used,
            "potential_trace": list(c.potential_trace),
            "max_residual_improvement": c.max_residual_improvement,
            "terminated_by": c.terminated_by, "potential_violations": c.potential_violations}
