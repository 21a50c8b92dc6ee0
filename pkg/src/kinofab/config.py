"""Scenario configuration files.

The format is TOML with five kinds of blocks::

    [model]               chain geometry, masses, limits, gravity
    [model.control_points]  name = [link, offset]
    [[behaviors]]         one table per primitive behavior
    [[tree]]              high-level nodes (dodge / track / schedule)
    [[obstacles]]         projectiles
    [goals]               name = [x, y] set-points for track nodes
    [run]                 integration, output and sweep settings

Unknown keys are rejected. Validation errors carry the dotted key path and,
when it can be located, the line number in the source file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .behaviors import DEFAULT_GAINS, DEFAULT_WEIGHTS, JOINTS, KINDS, NODE_KINDS, BehaviorSpec, TreeNode
from .fabrics import DEFAULT_DAMPING, DEFAULT_GATE_EPS, SPEED_GATES
from .model import ChainModel
from .prioritization import DEFAULT_DELTA
from .resolution import ControlOptions
from .scenarios import TAGS
from .sim import DEFAULT_DIVERGENCE_BOUND, DEFAULT_DT, Obstacle, Scenario


class ConfigError(ValueError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key, self.line = key, line
        where = f" (line {line})" if line else ""
        super().__init__(f"{key}: {message}{where}")


@dataclass
class ScenarioConfig:
    model: dict
    behaviors: list = field(default_factory=list)
    tree: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    goals: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)


# -- field validators -------------------------------------------------------------

class _Invalid(Exception):
    pass


def _float(v, *, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _Invalid(f"expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v):
        raise _Invalid("must not be NaN")
    if positive and not v > 0:
        raise _Invalid(f"must be > 0, got {v:g}")
    if nonneg and not v >= 0:
        raise _Invalid(f"must be >= 0, got {v:g}")
    return v


def _int(v, *, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise _Invalid(f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise _Invalid(f"must be >= {minimum}, got {v}")
    return v


def _str(v, choices=None):
    if not isinstance(v, str):
        raise _Invalid(f"expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise _Invalid(f"must be one of {list(choices)}, got {v!r}")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise _Invalid(f"expected true/false, got {v!r}")
    return v


def _floats(v, *, positive=False, size=None, finite=True):
    if not isinstance(v, list) or not v:
        raise _Invalid(f"expected a non-empty list of numbers, got {v!r}")
    out = [_float(x, positive=positive) for x in v]
    if finite and not all(math.isfinite(x) for x in out):
        raise _Invalid("entries must be finite")
    if size is not None and len(out) != size:
        raise _Invalid(f"expected {size} entries, got {len(out)}")
    return out


def _ints(v):
    if not isinstance(v, list) or not v:
        raise _Invalid(f"expected a non-empty list of integers, got {v!r}")
    return [_int(x, minimum=0) for x in v]


def _strs(v):
    if not isinstance(v, list):
        raise _Invalid(f"expected a list of strings, got {v!r}")
    return [_str(x) for x in v]


# -- schema --------------------------------------------------------------------
# key -> (validator, default, comment); a default of ... marks a required key.

REQUIRED = ...

MODEL_SCHEMA = {
    "link_lengths": (lambda v: _floats(v, positive=True), REQUIRED, "link lengths (m)"),
    "link_masses": (lambda v: _floats(v, positive=True), REQUIRED, "point masses at link tips (kg)"),
    "joint_lower": (_floats, REQUIRED, "lower joint limits (rad)"),
    "joint_upper": (_floats, REQUIRED, "upper joint limits (rad)"),
    "gravity": (lambda v: _floats(v, size=2), [0.0, -9.81], "world gravity (m/s^2)"),
    "actuated": (lambda v: [_bool(x) for x in v] if isinstance(v, list) else _bool(v), None,
                 "actuation mask (default: all joints)"),
    "end_effector": (_str, "ee", "name of the end-effector control point"),
}

BEHAVIOR_SCHEMA = {
    "name": (_str, REQUIRED, "unique behavior name"),
    "class": (lambda v: _str(v, KINDS), REQUIRED, "attractor | repeller | limit-upper | limit-lower"),
    "priority": (lambda v: _int(v, minimum=1), 2, "priority level (1 = highest)"),
    "weight": (lambda v: _float(v, positive=True), None, "metric weight W (default per class)"),
    "damping": (lambda v: _float(v, nonneg=True), DEFAULT_DAMPING, "damping gain B"),
    "lambda_e": (lambda v: _float(v, positive=True), None, "attractor strength"),
    "lambda_b": (lambda v: _float(v, positive=True), None, "repeller barrier strength"),
    "lambda_om": (lambda v: _float(v, positive=True), None, "repeller metric gain"),
    "d_max": (lambda v: _float(v, positive=True), None, "repeller range, squared distance (m^2)"),
    "lambda_l": (lambda v: _float(v, positive=True), None, "limit barrier strength"),
    "lambda_lm": (lambda v: _float(v, positive=True), None, "limit metric gain"),
    "target": (_floats, None, "goal / obstacle / limit override"),
    "attachment": (lambda v: _str(v) if isinstance(v, str) else _ints(v), JOINTS,
                   "control point name, \"joints\", or joint index list"),
    "selection": (_ints, None, "joints selected by S_k (default: all)"),
    "active": (_bool, True, "static activation flag"),
    "tag": (lambda v: _str(v, TAGS), None, "benchmark flag: PO | EA | BL | RE"),
}
GAIN_KEYS = ("lambda_e", "lambda_b", "lambda_om", "d_max", "lambda_l", "lambda_lm")

TREE_SCHEMA = {
    "name": (_str, REQUIRED, "unique node name"),
    "kind": (lambda v: _str(v, NODE_KINDS), REQUIRED, "dodge | track | schedule"),
    "children": (_strs, REQUIRED, "behavior or node names"),
    "activation_radius": (lambda v: _float(v, positive=True), math.inf, "dodge radius (m)"),
    "obstacle": (lambda v: _int(v, minimum=0), 0, "obstacle index for dodge"),
    "goal": (_str, None, "goal name for track"),
    "start": (_float, 0.0, "schedule window start (s)"),
    "stop": (_float, math.inf, "schedule window end (s)"),
}

OBSTACLE_SCHEMA = {
    "position": (lambda v: _floats(v, size=2), REQUIRED, "initial position (m)"),
    "velocity": (lambda v: _floats(v, size=2), [0.0, 0.0], "constant velocity when not launched (m/s)"),
    "radius": (lambda v: _float(v, positive=True), 0.05, "radius (m)"),
    "launch_speed": (lambda v: _float(v, nonneg=True), 0.0, "launch speed (m/s), 0 = no launch"),
    "launch_time": (lambda v: _float(v, nonneg=True), 0.0, "launch time (s)"),
    "direction": (lambda v: _floats(v, size=2), None, "launch direction"),
    "aim_point": (_str, None, "control point aimed at on launch"),
    "gravity": (_bool, False, "ballistic flight under model gravity"),
}

RUN_SCHEMA = {
    "name": (_str, "scenario", "scenario name, used for output files"),
    "dt": (lambda v: _float(v, positive=True), DEFAULT_DT, "control period (s)"),
    "duration": (lambda v: _float(v, positive=True), 1.0, "horizon (s)"),
    "q0": (_floats, None, "initial joint angles (default: zeros)"),
    "dq0": (_floats, None, "initial joint velocities (default: zeros)"),
    "seed": (lambda v: _int(v, minimum=0), 0, "seed for initial-state sampling"),
    "initial_spread": (lambda v: _float(v, nonneg=True), 0.0, "uniform perturbation of q0 (rad)"),
    "speed_gate": (lambda v: _str(v, SPEED_GATES), "gated", "policy speed factor: gated | strict"),
    "gate_eps": (lambda v: _float(v, positive=True), DEFAULT_GATE_EPS, "gate floor on |dx|^2"),
    "delta": (lambda v: _float(v, positive=True), DEFAULT_DELTA, "pseudo-inverse regularization"),
    "divergence_bound": (lambda v: _float(v, positive=True), DEFAULT_DIVERGENCE_BOUND,
                         "abort when |dq|_inf exceeds this (rad/s)"),
    "monitor_points": (_strs, None, "control points for min distance (default: end effector)"),
    "output_dir": (_str, "out", "output directory"),
    "sweep_speeds": (lambda v: _floats(v, positive=True), [float(s) for s in range(1, 11)],
                     "launch speeds for sweep (m/s)"),
    "bench_iterations": (lambda v: _int(v, minimum=100), 1000, "iterations per bench combo"),
}

SECTIONS = ("model", "behaviors", "tree", "obstacles", "goals", "run")


# -- line lookup --------------------------------------------------------------------

def _line_of(text: str | None, path: tuple) -> int | None:
    if not text:
        return None
    lines = text.splitlines()
    head = path[0]
    rest = list(path[1:])
    start = None
    if rest and isinstance(rest[0], int):
        count = -1
        for i, raw in enumerate(lines):
            if raw.strip().startswith(f"[[{head}]]"):
                count += 1
                if count == rest[0]:
                    start = i
                    break
        rest = rest[1:]
    else:
        header = head
        if head == "model" and rest[:1] == ["control_points"] and len(rest) > 1:
            header, rest = "model.control_points", rest[1:]
        for i, raw in enumerate(lines):
            if raw.strip().startswith(f"[{header}]"):
                start = i
                break
    if start is None:
        return None
    if not rest:
        return start + 1
    key = str(rest[0])
    for j in range(start + 1, len(lines)):
        s = lines[j].strip()
        if s.startswith("["):
            break
        if s.split("=", 1)[0].strip() == key and "=" in s:
            return j + 1
    return start + 1


def _dotted(path):
    out = path[0]
    for p in path[1:]:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


# -- validation -------------------------------------------------------------------------

def _apply(schema, table, path, text, *, keep_none=False):
    err = lambda p, msg: ConfigError(_dotted(p), msg, _line_of(text, p))
    if not isinstance(table, dict):
        raise err(path, "expected a table")
    out = {}
    for key in table:
        if key not in schema:
            raise err(path + (key,), "unknown key")
    for key, (check, default, _) in schema.items():
        if key in table:
            try:
                out[key] = check(table[key])
            except _Invalid as exc:
                raise err(path + (key,), str(exc)) from None
        elif default is REQUIRED:
            raise err(path + (key,), "missing required key")
        elif default is not None or keep_none:
            out[key] = list(default) if isinstance(default, list) else default
    return out


def validate(raw: dict, text: str | None = None) -> ScenarioConfig:
    """Validate a parsed TOML document and apply defaults."""
    err = lambda p, msg: ConfigError(_dotted(p), msg, _line_of(text, p))
    for key in raw:
        if key not in SECTIONS:
            raise err((key,), "unknown section")
    if "model" not in raw:
        raise ConfigError("model", "missing required section")

    model_raw = dict(raw["model"])
    points_raw = model_raw.pop("control_points", {})
    model = _apply(MODEL_SCHEMA, model_raw, ("model",), text)
    n = len(model["link_lengths"])
    for key in ("link_masses", "joint_lower", "joint_upper"):
        if len(model[key]) != n:
            raise err(("model", key), f"expected {n} entries, got {len(model[key])}")
    if any(lo >= hi for lo, hi in zip(model["joint_lower"], model["joint_upper"])):
        raise err(("model", "joint_upper"), "every upper limit must exceed its lower limit")
    if "actuated" in model:
        act = model["actuated"]
        model["actuated"] = [act] * n if isinstance(act, bool) else act
        if len(model["actuated"]) != n:
            raise err(("model", "actuated"), f"expected {n} entries")
    if not isinstance(points_raw, dict):
        raise err(("model", "control_points"), "expected a table")
    points = {}
    for name, val in points_raw.items():
        p = ("model", "control_points", name)
        if not (isinstance(val, list) and len(val) == 2):
            raise err(p, "expected [link, offset]")
        try:
            link, offset = _int(val[0], minimum=0), _float(val[1], nonneg=True)
        except _Invalid as exc:
            raise err(p, str(exc)) from None
        if link >= n:
            raise err(p, f"link index {link} out of range for {n} links")
        points[name] = [link, offset]
    if not points:
        points[model["end_effector"]] = [n - 1, model["link_lengths"][-1]]
    if model["end_effector"] not in points:
        raise err(("model", "end_effector"), f"{model['end_effector']!r} is not a control point")
    model["control_points"] = points

    behaviors = []
    names = set()
    for i, b in enumerate(_array(raw, "behaviors", text)):
        b = _apply(BEHAVIOR_SCHEMA, b, ("behaviors", i), text)
        kind = b["class"]
        for key in GAIN_KEYS:
            if key in b and key not in DEFAULT_GAINS[kind]:
                raise err(("behaviors", i, key), f"gain does not apply to class {kind}")
        for key, val in DEFAULT_GAINS[kind].items():
            b.setdefault(key, val)
        b.setdefault("weight", DEFAULT_WEIGHTS[kind])
        if b["name"] in names:
            raise err(("behaviors", i, "name"), f"duplicate behavior name {b['name']!r}")
        names.add(b["name"])
        att = b["attachment"]
        if isinstance(att, str) and att != JOINTS and att not in points:
            raise err(("behaviors", i, "attachment"), f"unknown control point {att!r}")
        if isinstance(att, list) and max(att) >= n:
            raise err(("behaviors", i, "attachment"), "joint index out of range")
        if kind == "repeller" and not (isinstance(att, str) and att != JOINTS):
            raise err(("behaviors", i, "attachment"), "repeller must attach to a control point")
        if kind.startswith("limit") and isinstance(att, str) and att != JOINTS:
            raise err(("behaviors", i, "attachment"), "limit behaviors attach to joints")
        if "selection" in b and max(b["selection"]) >= n:
            raise err(("behaviors", i, "selection"), "joint index out of range")
        behaviors.append(b)

    goals = {}
    goals_raw = raw.get("goals", {})
    if not isinstance(goals_raw, dict):
        raise err(("goals",), "expected a table")
    for name, val in goals_raw.items():
        try:
            goals[name] = _floats(val)
        except _Invalid as exc:
            raise err(("goals", name), str(exc)) from None

    obstacles = []
    for i, o in enumerate(_array(raw, "obstacles", text)):
        o = _apply(OBSTACLE_SCHEMA, o, ("obstacles", i), text)
        if o.get("aim_point") is not None and o["aim_point"] not in points:
            raise err(("obstacles", i, "aim_point"), f"unknown control point {o['aim_point']!r}")
        if o["launch_speed"] > 0 and "direction" not in o and "aim_point" not in o:
            raise err(("obstacles", i, "launch_speed"), "launched obstacle needs direction or aim_point")
        obstacles.append(o)

    tree = []
    node_names = set()
    tree_raw = _array(raw, "tree", text)
    all_nodes = {t.get("name") for t in tree_raw if isinstance(t, dict)}
    for i, t in enumerate(tree_raw):
        t = _apply(TREE_SCHEMA, t, ("tree", i), text)
        if t["name"] in node_names or t["name"] in names:
            raise err(("tree", i, "name"), f"duplicate name {t['name']!r}")
        node_names.add(t["name"])
        for c in t["children"]:
            if c not in names and c not in all_nodes:
                raise err(("tree", i, "children"), f"dangling reference {c!r}")
        if t["kind"] == "track" and t.get("goal") not in goals:
            raise err(("tree", i, "goal"), f"unknown goal {t.get('goal')!r}")
        if t["kind"] == "dodge" and t["obstacle"] >= len(obstacles):
            raise err(("tree", i, "obstacle"), f"no obstacle with index {t['obstacle']}")
        tree.append(t)

    run = _apply(RUN_SCHEMA, raw.get("run", {}), ("run",), text)
    for key in ("q0", "dq0"):
        if key in run and len(run[key]) != n:
            raise err(("run", key), f"expected {n} entries, got {len(run[key])}")
    for p in run.get("monitor_points", []):
        if p not in points:
            raise err(("run", "monitor_points"), f"unknown control point {p!r}")

    cfg = ScenarioConfig(model=model, behaviors=behaviors, tree=tree, obstacles=obstacles, goals=goals, run=run)
    try:
        build_scenario(cfg)
    except ValueError as exc:
        raise ConfigError("config", str(exc)) from None
    return cfg


def _array(raw, key, text):
    val = raw.get(key, [])
    if not isinstance(val, list):
        raise ConfigError(key, "expected an array of tables ([[" + key + "]])", _line_of(text, (key,)))
    return val


def loads(text: str) -> ScenarioConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("syntax", str(exc)) from None
    return validate(raw, text)


def parse_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    text = Path(path).read_text()
    return loads(text)


# -- building -----------------------------------------------------------------------------

def build_model(cfg: ScenarioConfig) -> ChainModel:
    m = cfg.model
    return ChainModel(
        link_lengths=m["link_lengths"], link_masses=m["link_masses"],
        joint_lower=m["joint_lower"], joint_upper=m["joint_upper"], gravity=m["gravity"],
        actuated=m.get("actuated"), control_points={k: tuple(v) for k, v in m["control_points"].items()},
        end_effector=m["end_effector"],
    )


def build_behavior(b: dict) -> BehaviorSpec:
    return BehaviorSpec(
        name=b["name"], kind=b["class"], priority=b["priority"], weight=b["weight"],
        damping=b["damping"], gains={k: b[k] for k in GAIN_KEYS if k in b},
        target=b.get("target"), attachment=b["attachment"], selection=b.get("selection"),
        active=b["active"], tag=b.get("tag"),
    )


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Instantiate the runnable scenario described by ``cfg``."""
    model = build_model(cfg)
    run = cfg.run
    n = model.n_joints
    q0 = np.asarray(run.get("q0", np.zeros(n)), dtype=float)
    if run["initial_spread"] > 0:
        rng = np.random.default_rng(run["seed"])
        q0 = q0 + rng.uniform(-run["initial_spread"], run["initial_spread"], n)
    nodes = [TreeNode(name=t["name"], kind=t["kind"], children=t["children"],
                      activation_radius=t["activation_radius"], obstacle=t["obstacle"],
                      goal=t.get("goal"), start=t["start"], stop=t["stop"]) for t in cfg.tree]
    obstacles = [Obstacle(position=o["position"], velocity=o["velocity"], radius=o["radius"],
                          launch_speed=o["launch_speed"], launch_time=o["launch_time"],
                          direction=o.get("direction"), aim_point=o.get("aim_point"),
                          gravity=o["gravity"]) for o in cfg.obstacles]
    options = ControlOptions(speed_gate=run["speed_gate"], gate_eps=run["gate_eps"], delta=run["delta"])
    return Scenario(
        model=model, behaviors=[build_behavior(b) for b in cfg.behaviors], q0=q0, dq0=run.get("dq0"),
        nodes=nodes, obstacles=obstacles, goals={k: np.asarray(v) for k, v in cfg.goals.items()},
        dt=run["dt"], duration=run["duration"], options=options,
        divergence_bound=run["divergence_bound"], monitor_points=run.get("monitor_points"),
        name=run["name"],
    )


# -- emitting -----------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot emit {v!r}")


def _emit_table(lines, schema, table, comments):
    for key, (_, _, doc) in schema.items():
        if key not in table or table[key] is None:
            if comments and key not in table:
                lines.append(f"# {key} = ...  # {doc} (unset)")
            continue
        suffix = f"  # {doc}" if comments else ""
        lines.append(f"{key} = {_fmt(table[key])}{suffix}")


def dumps(cfg: ScenarioConfig, comments: bool = True) -> str:
    """Serialize a validated config; ``loads(dumps(cfg)) == cfg``."""
    lines = []
    if comments:
        lines += ["# kinofab scenario configuration", "# Units: metres, kilograms, seconds, radians.", ""]
    lines.append("[model]")
    _emit_table(lines, MODEL_SCHEMA, cfg.model, comments)
    lines += ["", "[model.control_points]"]
    if comments:
        lines.append("# name = [link index, offset along link (m)]")
    for name, (link, offset) in cfg.model["control_points"].items():
        lines.append(f"{json.dumps(name)} = [{link}, {_fmt(float(offset))}]")
    for b in cfg.behaviors:
        lines += ["", "[[behaviors]]"]
        _emit_table(lines, {k: v for k, v in BEHAVIOR_SCHEMA.items() if k not in GAIN_KEYS}, b, comments)
        for key in GAIN_KEYS:
            if key in b:
                suffix = f"  # {BEHAVIOR_SCHEMA[key][2]}" if comments else ""
                lines.append(f"{key} = {_fmt(b[key])}{suffix}")
    for t in cfg.tree:
        lines += ["", "[[tree]]"]
        _emit_table(lines, TREE_SCHEMA, t, comments)
    for o in cfg.obstacles:
        lines += ["", "[[obstacles]]"]
        _emit_table(lines, OBSTACLE_SCHEMA, o, comments)
    if cfg.goals:
        lines += ["", "[goals]"]
        for name, val in cfg.goals.items():
            lines.append(f"{json.dumps(name)} = {_fmt(val)}")
    lines += ["", "[run]"]
    _emit_table(lines, RUN_SCHEMA, cfg.run, comments)
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG_TEXT = """
[model]
link_lengths = [0.2, 0.2, 0.2, 0.2]
link_masses = [0.5, 0.5, 0.5, 0.5]
joint_lower = [-2.5, -2.5, -2.5, -2.5]
joint_upper = [2.5, 2.5, 2.5, 2.5]

[model.control_points]
ee = [3, 0.2]
wrist = [1, 0.2]

[[behaviors]]
name = "posture"
class = "attractor"
tag = "PO"
target = [1.5707963267948966, 0.0, 0.0, 0.0]

[[behaviors]]
name = "wrist"
class = "attractor"
tag = "EA"
attachment = "wrist"
target = [0.0, 0.4]

[[behaviors]]
name = "limit_upper"
class = "limit-upper"
tag = "BL"

[[behaviors]]
name = "limit_lower"
class = "limit-lower"
tag = "BL"

[[behaviors]]
name = "repel_head"
class = "repeller"
tag = "RE"
attachment = "ee"

[[tree]]
name = "dodge"
kind = "dodge"
children = ["repel_head"]
activation_radius = 1.0

[[obstacles]]
position = [1.5, 0.8]
radius = 0.05
launch_speed = 5.0
direction = [-1.0, 0.0]

[run]
name = "reactivity"
duration = 2.0
q0 = [1.5707963267948966, 0.0, 0.0, 0.0]
"""


def default_config() -> ScenarioConfig:
    """Reference reactivity scenario with every default filled in."""
    return loads(DEFAULT_CONFIG_TEXT)
