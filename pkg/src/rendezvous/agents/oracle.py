"""Oracle Centered baselines: walk to the place nearest the agents' true
starting centroid, with or without danger-zone avoidance."""

from __future__ import annotations

import math
from dataclasses import replace

from ..geometry import Pose2D
from ..nav import Navigator
from ..scene import SceneSpec
from ..world import Observation, Wait
from .base import AgentContext, Navigate, Policy, drive, place_info, register


def nearest_place_to_centroid(scene: SceneSpec, poses) -> str:
    pts = list(poses)
    cx = sum(p.x for p in pts) / len(pts)
    cy = sum(p.y for p in pts) / len(pts)
    return min(scene.places, key=lambda p: (math.hypot(p.location.x - cx, p.location.y - cy), p.name)).name


def oracle_centered_decide(agent_id: str, true_poses: dict[str, Pose2D], scene: SceneSpec,
                           use_danger_zones: bool) -> Navigate:
    place = nearest_place_to_centroid(scene, true_poses.values())
    how = "danger-aware route" if use_danger_zones else "direct route"
    return Navigate(place, f"nearest place to the true centroid, {how}")


@register
class OracleCentered(Policy):
    kind = "oracle"
    use_danger = False

    def __init__(self, ctx: AgentContext):
        super().__init__(ctx)
        if ctx.true_initial_poses is None:
            raise ValueError("oracle policies need ground-truth start poses")
        plan = oracle_centered_decide(ctx.name, ctx.true_initial_poses, ctx.scene, self.use_danger)
        self.target = plan.place
        ctx.known_places.setdefault(self.target, place_info(ctx.scene, self.target))
        ctx.note("plan", f"navigate <{self.target}>: {plan.justification}")
        self.nav = Navigator(ctx.name, ctx.graph, ctx.rng, use_danger=self.use_danger,
                             note=ctx.note)
        self._seen: dict[int, int] = {}

    def perceive(self, obs: Observation) -> None:
        if self.use_danger:
            super().perceive(obs)
        else:
            # blind to sentinels: no danger zones at all
            self.mem.integrate_observation(replace(obs, sentinels=[]), obs.pose)

    def act(self, obs: Observation):
        if not obs.alive:
            return Wait()
        self.perceive(obs)
        if self.nav.destination is None:
            self.nav.set_destination(self.mem, obs.pose, self.ctx.known_places[self.target].location)
        done = self.signal_if_inside(obs, self.target)
        if done is not None:
            return done
        return drive(self.nav, self.mem, obs, self.ctx.speed, self._seen)


@register
class OracleCenteredDZ(OracleCentered):
    kind = "oracle_dz"
    use_danger = True
