"""Built-in desk-scale scenarios used by the CLI, the benchmark table and
the acceptance suite.

Behavior tags: PO posture attractor, EA end-effector attractor, BL joint
limits, RE obstacle repeller.
"""

from __future__ import annotations

import numpy as np

from .behaviors import ATTRACTOR, LIMIT_LOWER, LIMIT_UPPER, REPELLER, BehaviorSpec, TreeNode
from .model import ChainModel
from .sim import Obstacle, Scenario

COMBOS = ("PO+BL", "PO+EA+BL", "PO+BL+RE", "PO+EA+BL+RE")
TAGS = ("PO", "EA", "BL", "RE")


def parse_combo(combo: str) -> set:
    tags = {t.strip().upper() for t in combo.split("+") if t.strip()}
    unknown = tags - set(TAGS)
    if unknown:
        raise ValueError(f"unknown behavior flags {sorted(unknown)} in combo {combo!r}")
    return tags


def select_behaviors(behaviors, tags):
    """Keep untagged behaviors and those whose tag is in ``tags``."""
    return [b for b in behaviors if b.tag is None or b.tag in tags]


def desk_chain(n: int = 7, reach: float = 1.05, mass: float = 0.5, limit: float = 2.5) -> ChainModel:
    """Upright planar chain of ``n`` equal links with a ``mid`` and ``ee`` point."""
    length = reach / n
    return ChainModel(
        link_lengths=np.full(n, length),
        link_masses=np.full(n, mass),
        joint_lower=np.full(n, -limit),
        joint_upper=np.full(n, limit),
        control_points={"ee": (n - 1, length), "mid": (n // 2 - 1, length)},
    )


def limit_pair(tag="BL", **kwargs):
    return [
        BehaviorSpec(name="limit_upper", kind=LIMIT_UPPER, tag=tag, **kwargs),
        BehaviorSpec(name="limit_lower", kind=LIMIT_LOWER, tag=tag, **kwargs),
    ]


def benchmark_scenario(combo: str = "PO+EA+BL+RE", n: int = 7, duration: float = 1.0) -> Scenario:
    """Run-time analog: every flag present adds its behavior(s)."""
    tags = parse_combo(combo)
    model = desk_chain(n)
    q0 = np.zeros(n)
    q0[0] = np.pi / 2
    q0[1:] = 0.15
    posture = BehaviorSpec(name="posture", kind=ATTRACTOR, tag="PO", target=q0.copy())
    ee_goal = np.array([-0.35, 0.85])
    reach = BehaviorSpec(name="reach", kind=ATTRACTOR, tag="EA", attachment="ee", target=ee_goal)
    # one repeller on the tip, the analog of a head repeller
    repel = BehaviorSpec(name="repel_ee", kind=REPELLER, tag="RE", attachment="ee")
    behaviors = select_behaviors([posture, reach, *limit_pair(), repel], tags)
    nodes, obstacles = [], []
    if "RE" in tags:
        nodes = [TreeNode(name="dodge", kind="dodge", children=[repel.name], activation_radius=1.0)]
        obstacles = [Obstacle(position=[1.2, 0.9], radius=0.05, launch_speed=1.5, aim_point="ee")]
    return Scenario(model=model, behaviors=behaviors, q0=q0, nodes=nodes, obstacles=obstacles,
                    duration=duration, name=f"bench[{combo}]")


def reactivity_scenario(speed: float, repeller: bool = True, distance: float = 1.5,
                        radius: float = 0.05, n: int = 4) -> Scenario:
    """Ball launched horizontally at the chain tip ("head") from ``distance``.

    Posture, a mid-chain attractor, joint limits and (optionally) a repeller
    on the head are active.
    """
    model = ChainModel(
        link_lengths=np.full(n, 0.2),
        link_masses=np.full(n, 0.5),
        joint_lower=np.full(n, -2.5),
        joint_upper=np.full(n, 2.5),
        control_points={"ee": (n - 1, 0.2), "wrist": (1, 0.2)},
    )
    q0 = np.zeros(n)
    q0[0] = np.pi / 2
    posture = BehaviorSpec(name="posture", kind=ATTRACTOR, tag="PO", target=q0.copy())
    wrist = BehaviorSpec(name="wrist", kind=ATTRACTOR, tag="EA", attachment="wrist", target=[0.0, 0.4])
    behaviors = [posture, wrist, *limit_pair()]
    nodes = []
    if repeller:
        behaviors.append(BehaviorSpec(name="repel_head", kind=REPELLER, tag="RE", attachment="ee"))
        nodes = [TreeNode(name="dodge", kind="dodge", children=["repel_head"], activation_radius=1.0)]
    head = np.array([0.0, 0.2 * n])
    ball = Obstacle(position=head + [distance, 0.0], radius=radius, launch_speed=speed, direction=[-1.0, 0.0])
    return Scenario(model=model, behaviors=behaviors, q0=q0, nodes=nodes, obstacles=[ball],
                    duration=distance / speed + 0.5, name=f"reactivity[v={speed:g},{'on' if repeller else 'off'}]")


def limit_stress_scenario(overshoot: float = 0.5, duration: float = 3.0, n: int = 3) -> Scenario:
    """Posture target beyond the upper limit of every joint."""
    model = ChainModel(
        link_lengths=np.full(n, 0.3),
        link_masses=np.full(n, 0.5),
        joint_lower=np.full(n, -1.0),
        joint_upper=np.full(n, 1.0),
    )
    target = model.joint_upper + overshoot
    behaviors = [BehaviorSpec(name="posture", kind=ATTRACTOR, tag="PO", target=target), *limit_pair()]
    return Scenario(model=model, behaviors=behaviors, q0=np.zeros(n), duration=duration, name="limit-stress")


def attractor_scenario(q0, target, duration: float = 5.0, **options) -> Scenario:
    """Single joint-space attractor on a 3-link chain."""
    q0 = np.asarray(q0, dtype=float)
    n = q0.size
    model = ChainModel.uniform(n, length=0.3, mass=0.5, limit=np.pi)
    b = BehaviorSpec(name="posture", kind=ATTRACTOR, target=target, **options)
    return Scenario(model=model, behaviors=[b], q0=q0, duration=duration, name="attractor")
