"""Discrete-time simulator: motion, sentinel sweeps, capture countdowns,
the broadcast channel and gathering checks. One step is one simulated second."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .geometry import Pose2D, angle_diff, dist, segment_blocked
from .maptool import MapTool
from .protocol import Message, encode_message
from .scene import PATROLLING, SceneSpec, SentinelSpec

HORIZON = 1500
COUNTDOWN_START = 15.0
TRIGGER_FRACTION = 1.0 / 1000.0
AGENT_RADIUS = 0.5
CAMERA_FOV = math.pi / 2
FINE_CELL = 0.5
HOLDING_POSE = Pose2D(-1000.0, -1000.0)
AGENT_VIEW_RANGE = 100.0
# local geometry patch handed to agents each step (occupancy perception)
LOCAL_VIEW_RADIUS = 20.0
# apparent size an agent needs to recognise a sentinel without ground truth:
# about 20 pixels of a 512 x 512 frame, reached near 73 m
RECOGNITION_FRACTION = 20.0 / (512 * 512)
POSE_NOISE_PER_M = 0.02


class HorizonExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Move:
    vx: float
    vy: float


@dataclass(frozen=True)
class Speak:
    message: Message


@dataclass(frozen=True)
class QueryMap:
    variant: str
    args: tuple = ()


@dataclass(frozen=True)
class SignalComplete:
    place: str


@dataclass(frozen=True)
class Wait:
    pass


AgentAction = Union[Move, Speak, QueryMap, SignalComplete, Wait]


# ---------------------------------------------------------------------------
# state


def projected_fraction(d: float) -> float:
    """Share of the camera image covered by an agent at distance d."""
    if d <= 0.0:
        return 1.0
    return min(1.0, (2.0 * math.atan(AGENT_RADIUS / d) / CAMERA_FOV) ** 2)


class SentinelState:
    def __init__(self, spec: SentinelSpec):
        self.spec = spec
        self.countdowns: dict[str, float] = {}
        self.patrol_progress = 0.0
        if spec.kind == PATROLLING and len(spec.patrol_route) >= 2:
            pts = [p.xy for p in spec.patrol_route]
            if pts[0] != pts[-1]:
                pts.append(pts[0])
            self._loop = pts
            self._cum = [0.0]
            for a, b in zip(pts, pts[1:]):
                self._cum.append(self._cum[-1] + dist(a, b))
            self.pose = self._pose_at(0.0)
        else:
            self._loop = None
            self.pose = spec.initial_pose if spec.initial_pose.heading is not None \
                else spec.initial_pose.with_heading(0.0)

    @property
    def id(self) -> int:
        return self.spec.id

    @property
    def loop_length(self) -> float:
        return self._cum[-1] if self._loop else 0.0

    def _pose_at(self, s: float) -> Pose2D:
        k = bisect.bisect_right(self._cum, s) - 1
        k = max(0, min(k, len(self._loop) - 2))
        # skip zero-length segments so the heading stays defined
        while self._cum[k + 1] - self._cum[k] == 0.0 and k < len(self._loop) - 2:
            k += 1
        a, b = self._loop[k], self._loop[k + 1]
        seg = self._cum[k + 1] - self._cum[k]
        f = 0.0 if seg == 0.0 else (s - self._cum[k]) / seg
        return Pose2D(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]),
                      math.atan2(b[1] - a[1], b[0] - a[0]))

    def advance(self) -> None:
        if self._loop:
            L = self.loop_length
            self.patrol_progress = math.fmod(self.patrol_progress + self.spec.speed, L) if L > 0 else 0.0
            self.pose = self._pose_at(self.patrol_progress)
        else:
            self.pose = self.pose.with_heading(self.pose.heading + self.spec.angular_rate)


@dataclass
class AgentBody:
    name: str
    pose: Pose2D
    speed: float = 1.0
    indoor: bool = False
    alive: bool = True
    distance_traveled: float = 0.0
    completed_signal: str | None = None


@dataclass(frozen=True)
class Event:
    clock: int
    kind: str  # warning, capture, detection, delivery, or an agent-side note
    agent: str | None = None
    sentinel: int | None = None
    detail: str = ""

    def as_dict(self) -> dict:
        d: dict[str, Any] = {"t": self.clock, "kind": self.kind}
        if self.agent is not None:
            d["agent"] = self.agent
        if self.sentinel is not None:
            d["sentinel"] = self.sentinel
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass(frozen=True)
class SeenSentinel:
    id: int
    pose: Pose2D
    distance: float


@dataclass(frozen=True)
class MapResult:
    variant: str
    args: tuple
    value: Any = None
    error: str | None = None


@dataclass(frozen=True)
class LocalView:
    """Window of the true fine grid around the observer (row = y, col = x)."""
    row0: int
    col0: int
    obstacles: np.ndarray


@dataclass
class Observation:
    clock: int  # the clock at which the agent will act on this observation
    name: str
    pose: Pose2D
    indoor: bool
    alive: bool
    sentinels: list[SeenSentinel] = field(default_factory=list)
    agents: dict[str, Pose2D] = field(default_factory=dict)
    messages: list[Message] = field(default_factory=list)
    map_results: list[MapResult] = field(default_factory=list)
    warnings: list[int] = field(default_factory=list)
    view: LocalView | None = None


def refine_grid(coarse: np.ndarray, cell_size: float, fine: float = FINE_CELL) -> np.ndarray:
    k = cell_size / fine
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(f"coarse cell {cell_size} is not a multiple of {fine}")
    k = int(round(k))
    return np.repeat(np.repeat(coarse, k, axis=0), k, axis=1)


# ---------------------------------------------------------------------------
# visibility


def visibility_fraction(sentinel: SentinelState, agent: AgentBody, grid: np.ndarray,
                        cell_size: float) -> float:
    if agent.indoor or not agent.alive:
        return 0.0
    s, a = sentinel.pose, agent.pose
    d = s.dist(a)
    if d > sentinel.spec.view_range:
        return 0.0
    if d > 0.0:
        bearing = math.atan2(a.y - s.y, a.x - s.x)
        if abs(angle_diff(bearing, s.heading)) > sentinel.spec.fov_half_angle:
            return 0.0
    if segment_blocked(grid, cell_size, s.xy, a.xy):
        return 0.0
    return projected_fraction(d)


class World:
    """Authoritative state for one episode. `step` is the only mutator."""

    def __init__(self, scene: SceneSpec, horizon: int = HORIZON, seed: int = 0,
                 oracle_perception: bool = False, maptool: MapTool | None = None,
                 trace=None):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.scene = scene
        self.horizon = horizon
        self.clock = 0
        self.oracle_perception = oracle_perception
        self.maptool = maptool if maptool is not None else MapTool(scene)
        self.agents = [AgentBody(a.name, scene.place(a.initial_place).location.with_heading(0.0), a.speed)
                       for a in scene.agents]
        self.sentinels = [SentinelState(s) for s in scene.sentinels]
        self.channel: list[Message] = []
        self.event_log: list[Event] = []
        self.detected_steps = 0
        self.fine_grid = refine_grid(scene.obstacle_grid, scene.cell_size)
        self._indoor = [p.bounding_box for p in scene.places if p.indoor]
        # perception noise only; never touches sentinel mechanics
        self._perception_rng = np.random.default_rng([seed, 7919])
        self._trace = trace
        self._notes: list[Event] = []
        self._los_cache: dict = {}
        self._step_events: list[Event] = []
        for body in self.agents:
            body.indoor = self._is_indoor(body.pose)

    # -- helpers -------------------------------------------------------------

    def agent(self, name: str) -> AgentBody:
        for a in self.agents:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def roster(self) -> list[str]:
        return [a.name for a in self.agents]

    def _is_indoor(self, p: Pose2D) -> bool:
        return any(r.contains(p.x, p.y) for r in self._indoor)

    def note(self, kind: str, agent: str | None = None, detail: str = "") -> None:
        """Record an agent-side event (refinements, commitments) in the log."""
        ev = Event(self.clock, kind, agent, None, detail)
        self.event_log.append(ev)
        self._notes.append(ev)

    def free_at(self, x: float, y: float) -> bool:
        c, r = int(math.floor(x / FINE_CELL)), int(math.floor(y / FINE_CELL))
        h, w = self.fine_grid.shape
        return 0 <= r < h and 0 <= c < w and not self.fine_grid[r, c]

    def _move(self, body: AgentBody, vx: float, vy: float) -> None:
        if not (math.isfinite(vx) and math.isfinite(vy)):
            return
        n = math.hypot(vx, vy)
        if n > body.speed:
            vx, vy = vx * body.speed / n, vy * body.speed / n
        if vx == 0.0 and vy == 0.0:
            return
        p = body.pose
        for dx, dy in ((vx, vy), (vx, 0.0), (0.0, vy)):
            if dx == 0.0 and dy == 0.0:
                continue
            q = (p.x + dx, p.y + dy)
            if not segment_blocked(self.fine_grid, FINE_CELL, p.xy, q):
                body.pose = Pose2D(q[0], q[1], math.atan2(dy, dx))
                body.distance_traveled += math.hypot(dx, dy)
                body.indoor = self._is_indoor(body.pose)
                return

    def _capture(self, body: AgentBody, sentinel_id: int) -> None:
        body.alive = False
        body.pose = HOLDING_POSE
        body.indoor = False
        for s in self.sentinels:
            s.countdowns.pop(body.name, None)
        self._emit("capture", body.name, sentinel_id)

    def _emit(self, kind: str, agent=None, sentinel=None, detail: str = "") -> None:
        ev = Event(self.clock, kind, agent, sentinel, detail)
        self.event_log.append(ev)
        self._step_events.append(ev)

    # -- mechanics -----------------------------------------------------------

    def update_countdowns(self) -> list[Event]:
        start = len(self.event_log)
        grid, cs = self.scene.obstacle_grid, self.scene.cell_size
        for s in self.sentinels:
            for body in self.agents:
                if not body.alive:
                    continue
                f = 0.0
                # cheap distance gate before the ray cast; results are identical
                if not body.indoor and projected_fraction(s.pose.dist(body.pose)) > TRIGGER_FRACTION:
                    f = visibility_fraction(s, body, grid, cs)
                if f > TRIGGER_FRACTION:
                    if body.name not in s.countdowns:
                        s.countdowns[body.name] = COUNTDOWN_START
                        self._emit("warning", body.name, s.id)
                    else:
                        s.countdowns[body.name] -= 1000.0 * f
                        self._emit("detection", body.name, s.id, f"{s.countdowns[body.name]:.4f}")
                        if s.countdowns[body.name] <= 0.0:
                            self._capture(body, s.id)
                else:
                    s.countdowns.pop(body.name, None)
        return self.event_log[start:]

    def _sees(self, observer: Pose2D, target: Pose2D, rng: float) -> bool:
        d = observer.dist(target)
        if d > rng:
            return False
        # perception line of sight is resolved per pair of coarse cells
        cs = self.scene.cell_size
        a = (int(observer.x // cs), int(observer.y // cs))
        b = (int(target.x // cs), int(target.y // cs))
        key = (a, b) if a <= b else (b, a)
        hit = self._los_cache.get(key)
        if hit is None:
            hit = not segment_blocked(self.scene.obstacle_grid, cs, observer.xy, target.xy)
            if len(self._los_cache) > 200_000:
                self._los_cache.clear()
            self._los_cache[key] = hit
        return hit

    def _local_view(self, p: Pose2D) -> LocalView:
        h, w = self.fine_grid.shape
        r = int(LOCAL_VIEW_RADIUS / FINE_CELL)
        c0, r0 = int(math.floor(p.x / FINE_CELL)), int(math.floor(p.y / FINE_CELL))
        rows = slice(max(0, r0 - r), min(h, r0 + r + 1))
        cols = slice(max(0, c0 - r), min(w, c0 + r + 1))
        return LocalView(rows.start, cols.start, self.fine_grid[rows, cols])

    def _observe(self, body: AgentBody, clock: int) -> Observation:
        obs = Observation(clock, body.name, body.pose, body.indoor, body.alive)
        if not body.alive:
            return obs
        for s in self.sentinels:
            if not self._sees(body.pose, s.pose, AGENT_VIEW_RANGE):
                continue
            d = body.pose.dist(s.pose)
            if self.oracle_perception:
                obs.sentinels.append(SeenSentinel(s.id, s.pose, d))
            elif projected_fraction(d) >= RECOGNITION_FRACTION:
                nx, ny = self._perception_rng.normal(0.0, POSE_NOISE_PER_M * d, 2)
                obs.sentinels.append(SeenSentinel(s.id, Pose2D(s.pose.x + nx, s.pose.y + ny), d))
        for other in self.agents:
            if other is not body and other.alive and self._sees(body.pose, other.pose, AGENT_VIEW_RANGE):
                obs.agents[other.name] = other.pose
        obs.view = self._local_view(body.pose)
        return obs

    def observe_all(self) -> dict[str, Observation]:
        """Observations of the current state with nothing delivered (episode start)."""
        return {b.name: self._observe(b, self.clock) for b in self.agents}

    # -- the step ------------------------------------------------------------

    def step(self, actions: dict[str, AgentAction]) -> dict[str, Observation]:
        if self.clock >= self.horizon:
            raise HorizonExceeded(f"clock {self.clock} reached horizon {self.horizon}")
        self._step_events, self._notes = self._notes, []
        obs = {}
        for body in self.agents:
            obs[body.name] = Observation(self.clock, body.name, body.pose, body.indoor, body.alive)

        # (1) deliver what was spoken last step
        delivered, self.channel = self.channel, []
        for m in delivered:
            self._emit("delivery", m.sender, detail=encode_message(m))
        for body in self.agents:
            if body.alive:
                obs[body.name].messages = list(delivered)

        # (2) map queries, answered synchronously
        for body in self.agents:
            act = actions.get(body.name)
            if body.alive and isinstance(act, QueryMap):
                try:
                    val = self.maptool.answer(act.variant, tuple(act.args))
                    res = MapResult(act.variant, tuple(act.args), val)
                except Exception as e:  # reported back to the agent, not raised
                    res = MapResult(act.variant, tuple(act.args), None, f"{type(e).__name__}: {e}")
                obs[body.name].map_results.append(res)

        # (3) motion and the other world actions
        for body in self.agents:
            act = actions.get(body.name)
            if not body.alive or act is None:
                continue
            if isinstance(act, Move):
                self._move(body, act.vx, act.vy)
            elif isinstance(act, SignalComplete):
                body.completed_signal = act.place
            elif isinstance(act, Speak):
                self.channel.append(act.message)

        # (4) sentinels
        for s in self.sentinels:
            s.advance()

        # (5) countdowns
        self.update_countdowns()
        if any(s.countdowns for s in self.sentinels):
            self.detected_steps += 1

        # (6) observations
        for body in self.agents:
            o = self._observe(body, self.clock + 1)
            o.messages = obs[body.name].messages
            o.map_results = obs[body.name].map_results
            o.warnings = [e.sentinel for e in self._step_events if e.kind == "warning" and e.agent == body.name]
            obs[body.name] = o

        if self._trace is not None:
            self._trace.write(self.trace_record(delivered) + "\n")
        self.clock += 1
        return obs

    def trace_record(self, delivered: list[Message]) -> str:
        r = 3
        rec = {
            "t": self.clock,
            "agents": [[a.name, round(a.pose.x, r), round(a.pose.y, r), a.alive, a.indoor] for a in self.agents],
            "sentinels": [[s.id, round(s.pose.x, r), round(s.pose.y, r), round(s.pose.heading, r)]
                          for s in self.sentinels],
            "countdowns": [[s.id, name, round(v, 4)] for s in self.sentinels for name, v in s.countdowns.items()],
            "messages": [encode_message(m) for m in delivered],
            "events": [e.as_dict() for e in self._step_events if e.kind != "delivery"],
        }
        return json.dumps(rec, separators=(",", ":"))

    # -- outcome -------------------------------------------------------------

    @property
    def n_caught(self) -> int:
        return sum(not a.alive for a in self.agents)

    def is_gathered(self) -> str | None:
        if not self.agents or any(not a.alive for a in self.agents):
            return None
        target = self.agents[0].completed_signal
        if target is None or not self.scene.has_place(target):
            return None
        box = self.scene.place(target).bounding_box
        for a in self.agents:
            if a.completed_signal != target or not box.contains(a.pose.x, a.pose.y):
                return None
        return target


def is_gathered(world: World) -> str | None:
    return world.is_gathered()


def update_countdowns(world: World) -> list[Event]:
    return world.update_countdowns()
