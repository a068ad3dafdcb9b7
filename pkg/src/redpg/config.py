"""Scenario config files (YAML, versioned schema).

A config describes one scenario plus the pipeline knobs::

    version: 1
    seed: 0              # optional, the CLI --seed flag overrides it
    trials: 10
    scenario:
      type: random       # random | intersection | explicit
      agents: 3
      model: quadrotor
      bounds: [[0, 0, 0], [30, 30, 10]]
      min_sep: 1.0
    params:
      sigma: 0.02
      d_col: 0.5

Unknown keys are rejected and every error names the offending key and the
line it sits on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import yaml

from .dynamics import MODEL_TAGS, model_from_tag
from .errors import ConfigError, RedpgError
from .harness import (AgentSpec, FixedScenario, RandomScenarios, Scenario, intersection_scenario,
                      DEFAULT_BOUNDS)

SCHEMA_VERSION = 1


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _num(check=None):
    def validate(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if not np.isfinite(v):
            return "must be finite"
        if check is not None and not check(v):
            return _RANGE_TEXT.get(check, "is out of range")
        return None
    return validate


def _int(check=None):
    def validate(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "must be an integer"
        if check is not None and not check(v):
            return _RANGE_TEXT.get(check, "is out of range")
        return None
    return validate


def _choice(*options):
    def validate(v):
        return None if v in options else f"must be one of {list(options)}"
    return validate


def _optional(inner):
    def validate(v):
        return None if v is None else inner(v)
    return validate


_RANGE_TEXT = {_positive: "must be positive", _nonneg: "must be non-negative"}

# key -> (validator, unit, description)
PARAM_SCHEMA = {
    "T": (_int(_positive), "steps", "trial length"),
    "dt": (_num(_positive), "s", "control step"),
    "mpc_horizon": (_int(_positive), "steps", "receding-horizon window"),
    "sigma": (_num(_nonneg), "m/s^2 (quadrotor, double integrator) or m/s (4WD)",
              "disturbance scale and truncation bound"),
    "d_col": (_num(_positive), "m", "collision threshold"),
    "d_prox": (_num(_positive), "m", "neighbor proximity threshold"),
    "neighbor_mode": (_choice("euclidean", "anisotropic"), "-", "neighbor rule"),
    "epsilon": (_num(_positive), "cost units", "best-response acceptance threshold"),
    "k_max": (_int(_positive), "iterations", "best-response cap of the first window"),
    "k_max_replan": (_int(_positive), "iterations", "best-response cap of later windows"),
    "lambda_v": (_num(_positive), "s/m", "velocity barrier sharpness"),
    "lambda_frs": (_num(_positive), "-", "reachable-set barrier sharpness"),
    "v_max": (_num(_positive), "m/s", "speed limit"),
    "q_position": (_num(_nonneg), "1/m^2", "position tracking weight"),
    "q_attitude": (_num(_nonneg), "1/rad^2, s^2/rad^2", "quadrotor angle and rate weight"),
    "r_control": (_num(_positive), "1/control^2", "control effort weight"),
    "initial_shape_scale": (_num(_positive), "state units^2", "initial error ellipsoid scale"),
    "eta": (_num(_nonneg), "state units^2/s^2", "reachable-set linearization slack"),
    "frs_mode": (_choice("propagated", "literal"), "-", "reachable-set formula"),
    "frs_samples": (_int(_positive), "rollouts", "containment check sample count"),
    "footprint_radius": (_optional(_num(_nonneg)), "m", "physical agent radius, null means d_col/2"),
    "penalty": (_choice("frs", "euclidean"), "-", "pairwise barrier"),
    "solver_tol": (_num(_positive), "cost units", "best-response gradient tolerance"),
    "solver_max_iter": (_int(_positive), "iterations", "best-response iteration cap"),
    "wheelbase": (_num(_positive), "m", "4WD wheel separation"),
    "wheel_speed_max": (_optional(_num(_positive)), "m/s", "4WD wheel speed bound"),
}

SCENARIO_KEYS = {
    "type": "random | intersection | explicit",
    "agents": "random: number of agents; explicit: list of {model, start, goal}",
    "model": "random: model tag of every agent",
    "bounds": "random: [[lo...], [hi...]] in m",
    "min_sep": "random: minimum start and goal separation in m",
    "variant": "intersection: 1 or 2",
}

TOP_KEYS = {"version", "seed", "trials", "scenario", "params"}


@dataclass(frozen=True)
class RunConfig:
    """A validated config: a seed-to-scenario factory plus run settings."""

    template: Callable[[int], Scenario]
    seed: Optional[int]
    trials: int
    source: str = ""

    def resolve_seed(self, override: Optional[int]) -> int:
        if override is not None:
            return int(override)
        if self.seed is None:
            raise ConfigError("no seed: set 'seed' in the config or pass --seed", "seed")
        return self.seed

    def scenario(self, seed: int) -> Scenario:
        return self.template(seed)


class _Doc:
    """Plain Python values of a YAML document plus the line of every key."""

    def __init__(self, text: str):
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"YAML syntax error: {exc}", None,
                              mark.line + 1 if mark is not None else None) from exc
        self.lines: dict = {}
        self._loader = yaml.SafeLoader("")
        self.value = {} if node is None else self._convert(node, ())

    def _convert(self, node, path):
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = self._scalar(k)
                if not isinstance(key, (str, int)):
                    raise ConfigError("mapping keys must be plain scalars", None, k.start_mark.line + 1)
                key = str(key)
                if key in out:
                    raise ConfigError(f"duplicate key {_dotted(path + (key,))!r}",
                                      _dotted(path + (key,)), k.start_mark.line + 1)
                self.lines[path + (key,)] = k.start_mark.line + 1
                out[key] = self._convert(v, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            out = []
            for n, v in enumerate(node.value):
                self.lines[path + (n,)] = v.start_mark.line + 1
                out.append(self._convert(v, path + (n,)))
            return out
        return self._scalar(node)

    def _scalar(self, node):
        return self._loader.construct_object(node) if isinstance(node, yaml.ScalarNode) else node

    def line(self, *path) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


def _fail(doc: _Doc, path, message: str):
    key = _dotted(path)
    raise ConfigError(f"{key}: {message}", key, doc.line(*path))


def _reject_unknown(doc: _Doc, mapping: dict, allowed, path):
    if not isinstance(mapping, dict):
        _fail(doc, path, "must be a mapping")
    for k in mapping:
        if k not in allowed:
            _fail(doc, path + (k,), "unknown key")


def _vector(doc, value, path, dim=None):
    if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        _fail(doc, path, "must be a list of numbers")
    if dim is not None and len(value) != dim:
        _fail(doc, path, f"must have {dim} entries")
    return np.array(value, dtype=float)


def _explicit_agents(doc, entries, path):
    if not isinstance(entries, list) or not entries:
        _fail(doc, path, "must be a non-empty list of agents")
    agents = []
    for n, e in enumerate(entries):
        p = path + (n,)
        _reject_unknown(doc, e, {"model", "start", "goal"}, p)
        for k in ("model", "start", "goal"):
            if k not in e:
                _fail(doc, p + (k,), "is required")
        if e["model"] not in MODEL_TAGS:
            _fail(doc, p + ("model",), f"must be one of {list(MODEL_TAGS)}")
        m = model_from_tag(e["model"])
        start, goal = _vector(doc, e["start"], p + ("start",)), _vector(doc, e["goal"], p + ("goal",))
        states = []
        for vec, k in ((start, "start"), (goal, "goal")):
            if len(vec) == m.state_dim:
                states.append(vec)
            elif len(vec) == m.position_dim:
                x = np.zeros(m.state_dim)
                x[list(m.position_indices)] = vec
                states.append(x)
            else:
                _fail(doc, p + (k,), f"needs {m.position_dim} position or {m.state_dim} state entries")
        if m.heading_index is not None and len(start) == m.position_dim:
            d = goal - start
            for x in states:
                x[m.heading_index] = float(np.arctan2(d[1], d[0]))
        agents.append(AgentSpec(e["model"], *states))
    return agents


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    doc = _Doc(text)
    data = doc.value
    _reject_unknown(doc, data, TOP_KEYS, ())
    if "version" not in data:
        raise ConfigError("version: missing schema version", "version", None)
    if data["version"] != SCHEMA_VERSION:
        _fail(doc, ("version",), f"unsupported schema version {data['version']!r}, expected {SCHEMA_VERSION}")
    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        _fail(doc, ("seed",), "must be a non-negative integer")
    trials = data.get("trials", 1)
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        _fail(doc, ("trials",), "must be a positive integer")

    params = data.get("params", {}) or {}
    _reject_unknown(doc, params, PARAM_SCHEMA, ("params",))
    for k, v in params.items():
        err = PARAM_SCHEMA[k][0](v)
        if err:
            _fail(doc, ("params", k), err)

    sc = data.get("scenario")
    if sc is None:
        raise ConfigError("scenario: missing scenario section", "scenario", None)
    _reject_unknown(doc, sc, SCENARIO_KEYS, ("scenario",))
    kind = sc.get("type", "random")
    allowed = {"random": {"type", "agents", "model", "bounds", "min_sep"},
               "intersection": {"type", "variant"},
               "explicit": {"type", "agents"}}
    if kind not in allowed:
        _fail(doc, ("scenario", "type"), f"must be one of {list(allowed)}")
    for k in sc:
        if k not in allowed[kind]:
            _fail(doc, ("scenario", k), f"not valid for scenario type {kind!r}")

    try:
        if kind == "random":
            n = sc.get("agents", 3)
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                _fail(doc, ("scenario", "agents"), "must be a positive integer")
            tag = sc.get("model", "quadrotor")
            if tag not in MODEL_TAGS:
                _fail(doc, ("scenario", "model"), f"must be one of {list(MODEL_TAGS)}")
            bounds = sc.get("bounds", [list(DEFAULT_BOUNDS[0]), list(DEFAULT_BOUNDS[1])])
            if not isinstance(bounds, list) or len(bounds) != 2:
                _fail(doc, ("scenario", "bounds"), "must be [[lo...], [hi...]]")
            lo = _vector(doc, bounds[0], ("scenario", "bounds", 0))
            hi = _vector(doc, bounds[1], ("scenario", "bounds", 1), len(lo))
            if np.any(hi < lo):
                _fail(doc, ("scenario", "bounds"), "upper corner below lower corner")
            min_sep = sc.get("min_sep", 1.0)
            if _num(_nonneg)(min_sep):
                _fail(doc, ("scenario", "min_sep"), "must be a non-negative number")
            template = RandomScenarios(n, (tuple(lo), tuple(hi)), float(min_sep), tag,
                                       tuple(sorted(params.items())))
            template(0 if seed is None else seed)       # validates the parameters
        elif kind == "intersection":
            variant = sc.get("variant", 1)
            if variant not in (1, 2):
                _fail(doc, ("scenario", "variant"), "must be 1 or 2")
            template = FixedScenario(intersection_scenario(variant, **params))
        else:
            agents = _explicit_agents(doc, sc.get("agents"), ("scenario", "agents"))
            template = FixedScenario(Scenario(tuple(agents), **params))
    except ConfigError:
        raise
    except RedpgError as exc:
        key = next((k for k in params if k in str(exc)), None)
        path = ("params", key) if key else ("scenario",)
        _fail(doc, path, str(exc))
    return RunConfig(template, seed, trials, source)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def schema_text() -> str:
    """Human-readable listing of every accepted key with its unit."""
    lines = ["version: schema version (must be 1)",
             "seed: non-negative integer, optional",
             "trials: positive integer, default 1",
             "scenario:"]
    lines += [f"  {k}: {v}" for k, v in SCENARIO_KEYS.items()]
    lines.append("params:")
    lines += [f"  {k} [{unit}]: {desc}" for k, (_, unit, desc) in PARAM_SCHEMA.items()]
    return "\n".join(lines)
