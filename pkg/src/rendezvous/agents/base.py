"""Shared plumbing for decision policies: plan types, the per-agent context
and the registry used by the harness."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from ..geometry import Pose2D
from ..maptool import PlaceInfo, WaypointGraph
from ..memory import Memory
from ..protocol import Message
from ..scene import SceneSpec
from ..world import AgentAction, Observation, SignalComplete, Wait


@dataclass(frozen=True)
class Query:
    variant: str
    args: tuple = ()
    justification: str = ""


@dataclass(frozen=True)
class Communicate:
    message: Message
    justification: str = ""


@dataclass(frozen=True)
class Navigate:
    place: str
    justification: str = ""


@dataclass(frozen=True)
class WaitPlan:
    justification: str = ""


ReasonerPlan = Union[Query, Communicate, Navigate, WaitPlan]


@dataclass
class AgentContext:
    """What a policy is handed at episode start."""
    name: str
    roster: list[str]
    scene: SceneSpec
    graph: WaypointGraph
    rng: np.random.Generator
    horizon: int
    speed: float = 1.0
    known_places: dict[str, PlaceInfo] = field(default_factory=dict)
    note: Callable[[str, str], None] = lambda kind, detail: None
    # ground-truth start poses; only oracle baselines read this
    true_initial_poses: dict[str, Pose2D] | None = None


def place_info(scene: SceneSpec, name: str) -> PlaceInfo:
    p = scene.place(name)
    return PlaceInfo(p.name, p.location, p.bounding_box, p.indoor)


class Policy(ABC):
    kind = "base"

    def __init__(self, ctx: AgentContext):
        self.ctx = ctx
        self.name = ctx.name
        self.mem = Memory(ctx.name, ctx.roster, ctx.scene.extent)
        # the schematic map is public; perception refines it
        self.mem.grid.load_schematic(ctx.scene.obstacle_grid, ctx.scene.cell_size)
        self.signaled: str | None = None

    @abstractmethod
    def act(self, obs: Observation) -> AgentAction:
        ...

    def perceive(self, obs: Observation) -> None:
        self.mem.integrate_observation(obs, obs.pose)

    def signal_if_inside(self, obs: Observation, place: str) -> AgentAction | None:
        info = self.ctx.known_places.get(place)
        if info is None:
            return None
        if self.signaled != place and info.bounding_box.contains(obs.pose.x, obs.pose.y):
            self.signaled = place
            self.ctx.note("signal", place)
            return SignalComplete(place)
        return None


def nearby_threats(obs: Observation, last_near: dict[int, int], radius: float = 40.0,
                   memory_s: int = 60) -> tuple[list[Pose2D], bool]:
    """Sentinels within `radius`, and whether any of them is a fresh arrival
    (not within the radius during the last `memory_s` steps)."""
    threats, fresh = [], False
    for s in obs.sentinels:
        if s.distance <= radius:
            threats.append(s.pose)
            fresh |= obs.clock - last_near.get(s.id, -10**9) > memory_s
            last_near[s.id] = obs.clock
    return threats, fresh


def drive(nav, mem: Memory, obs: Observation, speed: float, last_near: dict[int, int]) -> AgentAction:
    """One navigator step with the emergency triggers taken from `obs`."""
    threats, fresh = nearby_threats(obs, last_near)
    warned = [s.pose for s in obs.sentinels if s.id in obs.warnings]
    return nav.step(mem, obs.pose, speed, threats, bool(obs.warnings) or fresh, obs.indoor, warned)


class IdlePolicy(Policy):
    """Never moves; used to build suites where nobody can gather."""
    kind = "idle"

    def act(self, obs: Observation) -> AgentAction:
        return Wait()


POLICIES: dict[str, type] = {}


def register(cls):
    POLICIES[cls.kind] = cls
    return cls


register(IdlePolicy)


def make_policy(kind: str, ctx: AgentContext) -> Policy:
    try:
        cls = POLICIES[kind]
    except KeyError:
        raise ValueError(f"unknown policy {kind!r}; choose from {sorted(POLICIES)}") from None
    return cls(ctx)
