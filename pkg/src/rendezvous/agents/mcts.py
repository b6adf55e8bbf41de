"""Monte Carlo tree search baseline: each agent picks the place that best
trades off closeness to teammates, travel and exposure, by UCT over the
candidate places with rollouts in its believed world."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose2D
from ..maptool import NoRoute, PlaceInfo, Route, WaypointGraph
from ..memory import Memory
from ..nav import Navigator, refine_route
from ..protocol import Message, PoseReport, extract_spatial_facts
from ..scene import DEFAULT_ANGULAR_RATE, DEFAULT_FOV_HALF_ANGLE, DEFAULT_VIEW_RANGE
from ..world import AGENT_RADIUS, CAMERA_FOV, TRIGGER_FRACTION, Observation, Speak, Wait
from .base import AgentContext, Navigate, Policy, drive, register

REDECIDE_PERIOD = 120
N_CANDIDATES = 8


@dataclass(frozen=True)
class MctsConfig:
    iterations: int = 100
    rollout_horizon: int = 200
    exploration: float = math.sqrt(2.0)
    alpha: float = 1.0  # mean final distance to teammates
    beta: float = 0.1  # rollout path length
    gamma: float = 10.0  # rollout steps with any detection

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rollout_horizon < 1:
            raise ValueError("rollout_horizon must be >= 1")
        if min(self.alpha, self.beta, self.gamma, self.exploration) < 0:
            raise ValueError("weights must be >= 0")


def sample_route(route: Route, horizon: int, speed: float = 1.0) -> np.ndarray:
    """Positions after each of `horizon` steps walking the route at `speed`."""
    pts = np.array([p.xy for p in route.waypoints], dtype=float)
    if len(pts) == 1:
        return np.repeat(pts, horizon, axis=0)
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.minimum(np.arange(1, horizon + 1) * speed, cum[-1])
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    f = np.where(seg[k] > 0, (s - cum[k]) / np.where(seg[k] > 0, seg[k], 1.0), 0.0)
    return pts[k] + f[:, None] * (pts[k + 1] - pts[k])


def detected_steps(path: np.ndarray, sentinels: np.ndarray, headings: np.ndarray,
                   rate: float = DEFAULT_ANGULAR_RATE, half_fov: float = DEFAULT_FOV_HALF_ANGLE,
                   view_range: float = DEFAULT_VIEW_RANGE, hidden: np.ndarray | None = None) -> int:
    """Steps on which some rotating sentinel would trigger on the path.

    Occlusion is ignored: the agent's belief holds no line-of-sight model.
    """
    if not len(sentinels) or not len(path):
        return 0
    t = np.arange(1, len(path) + 1)[:, None]
    dx = path[:, None, 0] - sentinels[None, :, 0]
    dy = path[:, None, 1] - sentinels[None, :, 1]
    d = np.hypot(dx, dy)
    h = headings[None, :] + rate * t
    off = np.abs((np.arctan2(dy, dx) - h + math.pi) % (2 * math.pi) - math.pi)
    with np.errstate(divide="ignore"):
        frac = np.minimum(1.0, (2.0 * np.arctan(AGENT_RADIUS / np.maximum(d, 1e-12)) / CAMERA_FOV) ** 2)
    seen = (d <= view_range) & ((off <= half_fov) | (d == 0)) & (frac > TRIGGER_FRACTION)
    hit = seen.any(axis=1)
    if hidden is not None:
        hit &= ~hidden
    return int(hit.sum())


def rollout_reward(path: np.ndarray, peers: np.ndarray, detected: int, cfg: MctsConfig,
                   start: np.ndarray | None = None) -> float:
    end = path[-1]
    spread = float(np.hypot(*(peers - end).T).mean()) if len(peers) else 0.0
    pts = path if start is None else np.vstack([start, path])
    length = float(np.hypot(*(pts[1:] - pts[:-1]).T).sum()) if len(pts) > 1 else 0.0
    return -cfg.alpha * spread - cfg.beta * length - cfg.gamma * detected


@dataclass
class _Child:
    place: str
    path: np.ndarray
    hidden: np.ndarray
    visits: int = 0
    total: float = 0.0

    @property
    def mean(self) -> float:
        return self.total / self.visits if self.visits else -math.inf


def mcts_decide(agent_id: str, mem: Memory, cfg: MctsConfig, candidates, *, pose: Pose2D,
                places: dict[str, PlaceInfo], graph: WaypointGraph, rng: np.random.Generator,
                speed: float = 1.0) -> Navigate:
    """UCT over candidate places as root actions; returns the best mean child.

    Rollouts walk the danger-refined route for `cfg.rollout_horizon` steps
    past believed sentinels with random headings; peers stay where they
    were last believed to be.
    """
    cands = list(candidates)
    if not cands:
        raise ValueError("need at least one candidate")
    if len(cands) == 1:
        return Navigate(cands[0], "only candidate")
    centers = mem.grid.danger_points()
    sentinels = np.array([c.xy for c in centers], dtype=float).reshape(-1, 2)
    peers = np.array([p.xy for a, (p, _) in sorted(mem.poses.agents.items())
                      if a != agent_id and a in mem.alive_agents], dtype=float).reshape(-1, 2)
    start = np.array([pose.xy])
    children = []
    for name in cands:
        info = places[name]
        try:
            route = refine_route(graph, centers, pose, info.location)
        except NoRoute:
            route = Route.through([pose, info.location])
        path = sample_route(route, cfg.rollout_horizon, speed)
        bb = info.bounding_box
        inside = (path[:, 0] >= bb.xmin) & (path[:, 0] <= bb.xmax) & (path[:, 1] >= bb.ymin) & (path[:, 1] <= bb.ymax)
        hidden = inside if info.indoor else np.zeros(len(path), dtype=bool)
        children.append(_Child(name, path, hidden))

    for it in range(cfg.iterations):
        n = it + 1
        unvisited = [c for c in children if c.visits == 0]
        if unvisited:
            child = unvisited[0]
        else:
            child = max(children, key=lambda c: c.mean + cfg.exploration * math.sqrt(math.log(n) / c.visits))
        headings = rng.uniform(0.0, 2 * math.pi, len(sentinels))
        det = detected_steps(child.path, sentinels, headings, hidden=child.hidden)
        child.visits += 1
        child.total += rollout_reward(child.path, peers, det, cfg, start)

    best = max(children, key=lambda c: c.mean)  # first of the maxima: candidate order breaks ties
    return Navigate(best.place, f"best mean rollout reward {best.mean:.1f} over {best.visits} visits")


@register
class MctsAgent(Policy):
    kind = "mcts"

    def __init__(self, ctx: AgentContext, cfg: MctsConfig | None = None):
        super().__init__(ctx)
        self.cfg = cfg or MctsConfig()
        self.nav = Navigator(ctx.name, ctx.graph, ctx.rng, use_danger=True, note=ctx.note)
        self.target: str | None = None
        self.last_report = -10**9
        self.last_decision = -10**9
        self._near: dict[int, int] = {}

    def candidates(self) -> list[str]:
        poses = [p for a, (p, _) in self.mem.poses.agents.items() if a in self.mem.alive_agents]
        cx = sum(p.x for p in poses) / len(poses)
        cy = sum(p.y for p in poses) / len(poses)
        c = Pose2D(cx, cy)
        ranked = sorted(self.ctx.known_places.values(), key=lambda i: (i.location.dist(c), i.name))
        return [i.name for i in ranked[:N_CANDIDATES]]

    def act(self, obs: Observation):
        if not obs.alive:
            return Wait()
        self.perceive(obs)
        if obs.messages:
            self.mem.update_pose_registry(extract_spatial_facts(obs.messages))
        if obs.clock - self.last_report >= REDECIDE_PERIOD:
            self.last_report = obs.clock
            return Speak(Message(obs.clock, self.name, PoseReport(obs.pose.xy)))
        # decide once the reports of this round have come back
        if obs.clock - self.last_decision >= REDECIDE_PERIOD and obs.clock - self.last_report >= 2:
            self.last_decision = obs.clock
            plan = mcts_decide(self.name, self.mem, self.cfg, self.candidates(), pose=obs.pose,
                               places=self.ctx.known_places, graph=self.ctx.graph,
                               rng=self.ctx.rng, speed=self.ctx.speed)
            if plan.place != self.target:
                self.target = plan.place
                self.ctx.note("plan", f"navigate <{plan.place}>: {plan.justification}")
                self.nav.set_destination(self.mem, obs.pose, self.ctx.known_places[plan.place].location)
        if self.target is not None:
            done = self.signal_if_inside(obs, self.target)
            if done is not None:
                return done
        return drive(self.nav, self.mem, obs, self.ctx.speed, self._near)
