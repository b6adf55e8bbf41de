"""The cooperative reasoning agent: a rule cascade standing in for the
language-model reasoner, wired to memory, navigation and the protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..geometry import Pose2D
from ..maptool import NoRoute, PlaceInfo, Route, WaypointGraph
from ..memory import DANGER_RADIUS, Memory, NoViableCandidate, select_from_table
from ..nav import Navigator, assess_route_safety, refine_route_detailed
from ..protocol import (BROADCAST, IMPOSSIBLE, SILENCE_LIMIT, AskEta, AskPose, Arrived, EtaReport,
                        Finalize, Message, OpinionState, Oppose, PoseReport, PRESUMED_CAUGHT,
                        Propose, SentinelReport, Support, analyze_transcript, extract_spatial_facts)
from ..world import Observation, QueryMap, Speak, Wait
from .base import (AgentContext, Communicate, Navigate, Policy, Query, ReasonerPlan, WaitPlan,
                   drive, register)

REASON_PERIOD = 120  # periodic re-invocation, seconds
ETA_DEGRADATION = 600  # reopen when the committed ETA grows by more than this
ETA_REFRESH = 120  # own ETA entries older than this are recomputed
ASK_ETA_DELAY = 15  # how long to wait for volunteered ETAs before asking
REPORT_SHIFT = 15.0  # a sentinel that moved this far is worth reporting again
NEARBY_RADIUS = 120.0
DETOUR_FACTOR = 1.3  # straight-line to route length, for rough proposals
OUTDOOR_PENALTY = 120.0
PLACE_THREAT = DANGER_RADIUS + 10.0  # outdoor places this close to a sentinel are avoided
FINALIZE_AFTER = 20  # seconds of stable majority before finalizing
COMMITTED_REFRESH = 30  # re-check the committed route this often
SELF_MARGIN = 2.0


@dataclass
class CosarState:
    """Per-agent working state read and written by the cascade."""
    name: str
    roster: list[str]
    graph: WaypointGraph
    horizon: int
    speed: float = 1.0
    pose: Pose2D = Pose2D(0.0, 0.0)
    known_places: dict[str, PlaceInfo] = field(default_factory=dict)
    history: list[Message] = field(default_factory=list)
    sightings: dict[int, Pose2D] = field(default_factory=dict)  # own, current step
    reported: dict[int, tuple[Pose2D, int]] = field(default_factory=dict)
    asks: dict[tuple, int] = field(default_factory=dict)  # (kind, target, place) -> sent at
    answered: set = field(default_factory=set)
    eta_time: dict[str, int] = field(default_factory=dict)  # own ETA computed at
    eta_sent: dict[str, object] = field(default_factory=dict)
    route_pending: str | None = None
    place_pending: str | None = None
    nearby_asked: bool = False
    stance: tuple | None = None  # (kind, place) of my last stance message
    opposed: set = field(default_factory=set)
    stable_since: int = 0
    signature: tuple | None = None
    arrived_sent: str | None = None
    signaled: str | None = None


def _msg(st: CosarState, clock: int, kind) -> Message:
    return Message(clock, st.name, kind)


def _on_table(opinions: OpinionState) -> list[str]:
    return sorted({o.place for o in opinions.opinions.values()
                   if o.place is not None and o.stance != PRESUMED_CAUGHT})


def _unsafe_place(info: PlaceInfo, mem: Memory) -> bool:
    if info.indoor:
        return False
    return any(info.location.dist(c) <= PLACE_THREAT for c in mem.grid.danger_points())


def _believed_poses(st: CosarState, mem: Memory) -> dict[str, Pose2D]:
    out = {}
    for a in mem.alive_agents:
        rec = mem.poses.agents.get(a)
        if rec is not None:
            out[a] = rec[0]
    return out


def rough_score(info: PlaceInfo, poses) -> float:
    worst = max(p.dist(info.location) for p in poses) * DETOUR_FACTOR
    return worst + (0.0 if info.indoor else OUTDOOR_PENALTY)


def own_eta(st: CosarState, mem: Memory, place: str, route: Route | None = None):
    """Seconds to reach `place` along a route that stays out of known danger,
    or Impossible when no such route exists."""
    info = st.known_places[place]
    # a zone we are already standing in is the avoidance layer's problem
    centers = [c for c in mem.grid.danger_points() if c.dist(st.pose) > DANGER_RADIUS + SELF_MARGIN]
    try:
        if route is None or not assess_route_safety(route, centers).safe:
            ref = refine_route_detailed(st.graph, centers, st.pose, info.location)
            if ref.fallback:
                return IMPOSSIBLE
            route = ref.route
    except NoRoute:
        return IMPOSSIBLE
    return int(math.ceil(route.length / st.speed))


def _dead(place: str, st: CosarState, mem: Memory) -> bool:
    """Out of the running: opposed by me, unsafe, or impossible for someone."""
    if place in st.opposed:
        return True
    info = st.known_places.get(place)
    if info is not None and _unsafe_place(info, mem):
        return True
    return any(mem.etas.get(place, a) == IMPOSSIBLE for a in mem.alive_agents)


def _ask_open(st: CosarState, key: tuple, clock: int) -> bool:
    t = st.asks.get(key)
    return t is not None and clock - t <= SILENCE_LIMIT


def cosar_decide(agent_id: str, mem: Memory, opinions: OpinionState, inbox: list[Message],
                 clock: int, st: CosarState | None = None) -> ReasonerPlan:
    """One reasoner invocation. Returns exactly one plan.

    `st` carries what a prompt would have shown the model: the transcript,
    known places, own pose and bookkeeping about what was already said.
    """
    if st is None:
        raise ValueError("cosar_decide needs the agent's working state")
    me = agent_id
    committed = mem.plan.place if mem.plan.committed else None

    # (a) sentinel sightings nobody has heard about yet
    fresh = []
    for sid, p in sorted(st.sightings.items()):
        last = st.reported.get(sid)
        if last is None or last[0].dist(p) > REPORT_SHIFT or clock - last[1] >= REASON_PERIOD:
            fresh.append((sid, p))
    if fresh:
        for sid, p in fresh:
            st.reported[sid] = (p, clock)
        return Communicate(_msg(st, clock, SentinelReport(tuple(p.xy for _, p in fresh))),
                           "report new sentinel sightings")

    # (b) reopen a committed place that went bad
    if committed is not None and committed not in st.opposed and committed in st.known_places:
        eta = mem.etas.get(committed, me)
        reason = None
        if eta == IMPOSSIBLE:
            reason = "impossible"
        elif eta is not None:
            if clock + eta > st.horizon:
                reason = "deadline"
            elif any(eta - e > ETA_DEGRADATION for _, e in mem.plan.eta_history):
                reason = "eta_worsened"
        if reason is None and _unsafe_place(st.known_places[committed], mem):
            reason = "sentinel"
        if reason is not None:
            st.opposed.add(committed)
            st.stance = ("oppose", committed)
            mem.plan.release()
            return Communicate(_msg(st, clock, Oppose(committed, reason, eta)),
                               f"reopen <{committed}>: {reason}")

    # (b2) answer what was asked of me
    for m in st.history:
        k = m.kind
        if m.sender == me or (m.timestamp, m.sender) in st.answered:
            continue
        if isinstance(k, AskPose) and k.target in (me, BROADCAST):
            st.answered.add((m.timestamp, m.sender))
            return Communicate(_msg(st, clock, PoseReport(st.pose.xy)), f"answer {m.sender}'s pose request")
        if isinstance(k, AskEta) and k.target == me:
            if k.place not in st.known_places:
                if st.place_pending != k.place:
                    st.place_pending = k.place
                    return Query("place", (k.place,), f"locate <{k.place}> to answer {m.sender}")
                st.answered.add((m.timestamp, m.sender))
                continue
            eta = mem.etas.get(k.place, me)
            if eta is None or clock - st.eta_time.get(k.place, -10**9) > ETA_REFRESH:
                eta = own_eta(st, mem, k.place)
                _store_eta(st, mem, k.place, eta, clock)
            st.answered.add((m.timestamp, m.sender))
            st.eta_sent[k.place] = eta
            return Communicate(_msg(st, clock, EtaReport(k.place, eta)), f"answer {m.sender}'s ETA request")

    # (c) find out where everybody is
    poses = _believed_poses(st, mem)
    missing = [a for a in mem.alive_agents if a not in poses]
    if missing:
        others_asked = any(isinstance(m.kind, AskPose) and clock - m.timestamp <= SILENCE_LIMIT
                           for m in st.history)
        if not others_asked and not _ask_open(st, ("pose", BROADCAST, None), clock):
            st.asks[("pose", BROADCAST, None)] = clock
            return Communicate(_msg(st, clock, AskPose(BROADCAST)), "positions of teammates unknown")

    table = _on_table(opinions)
    considered = [p for p in table if p not in st.opposed]

    # (d) own ETA for every place under serious consideration
    for place in considered + ([committed] if committed and committed not in considered else []):
        if place not in st.known_places:
            if st.place_pending != place:
                st.place_pending = place
                return Query("place", (place,), f"locate <{place}>")
            continue
        if mem.etas.get(place, me) is None or clock - st.eta_time.get(place, -10**9) > ETA_REFRESH:
            if st.route_pending != place:
                st.route_pending = place
                return Query("route", (st.pose.xy, st.known_places[place].location.xy),
                             f"route to <{place}> for an ETA")
        eta = mem.etas.get(place, me)
        if eta is not None and st.eta_sent.get(place) != eta and place in table:
            st.eta_sent[place] = eta
            return Communicate(_msg(st, clock, EtaReport(place, eta)), f"share my ETA to <{place}>")

    # (e) agreement: go
    if opinions.reached and opinions.place is not None:
        place = opinions.place
        if committed != place:
            return Navigate(place, f"agreement reached on <{place}>")
        if st.arrived_sent != place and st.signaled == place:
            st.arrived_sent = place
            return Communicate(_msg(st, clock, Arrived(place)), "arrived and signaled")
        return WaitPlan("agreement holds, keep going")

    # ask peers for the ETAs that are still missing
    alive = mem.alive_agents
    if clock - min((m.timestamp for m in st.history if isinstance(m.kind, Propose)), default=clock) >= ASK_ETA_DELAY:
        for place in considered:
            for a in alive:
                if a == me or mem.etas.get(place, a) is not None:
                    continue
                key = ("eta", a, place)
                if key in st.asks:
                    continue  # asked once already; silence is handled by the analyzer
                st.asks[key] = clock
                return Communicate(_msg(st, clock, AskEta(a, place)), f"missing {a}'s ETA to <{place}>")

    # (f) back the min-max best of the fully known candidates
    acceptable = [p for p in considered if p in st.known_places and not _dead(p, st, mem)]
    full = {p: mem.etas.row(p, alive) for p in acceptable}
    full = {p: r for p, r in full.items()
            if all(v is not None for v in r.values()) and not any(v == IMPOSSIBLE for v in r.values())}
    full = {p: r for p, r in full.items() if clock + max(r.values()) <= st.horizon}
    if full:
        try:
            best, worst = select_from_table(full)
        except NoViableCandidate:
            best = None
        if best is not None:
            mine = mem.etas.get(best, me)
            if st.stance != ("support", best) and st.stance != ("finalize", best):
                st.stance = ("support", best)
                return Communicate(_msg(st, clock, Support(best, mine)),
                                   f"<{best}> has the lowest worst-case ETA ({worst:.0f} s)")
            backers = opinions.supporters(best)
            if (st.stance == ("support", best) and len(backers) * 2 > len(opinions.active)
                    and clock - st.stable_since >= FINALIZE_AFTER):
                st.stance = ("finalize", best)
                return Communicate(_msg(st, clock, Finalize(best)), f"majority backs <{best}>, settle it")
            return WaitPlan(f"backing <{best}>")

    # (f') nothing workable on the table: put a place forward
    if not full and poses:
        if not st.nearby_asked and len(poses) == len(alive):
            st.nearby_asked = True
            cx = sum(p.x for p in poses.values()) / len(poses)
            cy = sum(p.y for p in poses.values()) / len(poses)
            return Query("nearby", ((cx, cy), NEARBY_RADIUS), "places around the team's centroid")
        if len(poses) == len(alive) or clock >= 2 * SILENCE_LIMIT:
            pool = [i for n, i in st.known_places.items() if not _dead(n, st, mem)]
            if pool:
                pick = min(pool, key=lambda i: (rough_score(i, poses.values()), i.name))
                if st.stance != ("propose", pick.name):
                    st.stance = ("propose", pick.name)
                    return Communicate(_msg(st, clock, Propose(pick.name)),
                                       f"<{pick.name}> looks closest for everyone")

    return WaitPlan("nothing new to act on")


def _store_eta(st: CosarState, mem: Memory, place: str, eta, clock: int) -> None:
    mem.etas.update(place, st.name, eta, clock)
    st.eta_time[place] = clock
    if mem.plan.committed and mem.plan.place == place and eta != IMPOSSIBLE:
        mem.plan.record_eta(clock, eta)


@register
class CosarAgent(Policy):
    kind = "cosar"

    def __init__(self, ctx: AgentContext):
        super().__init__(ctx)
        self.st = CosarState(ctx.name, list(ctx.roster), ctx.graph, ctx.horizon, ctx.speed,
                             known_places=ctx.known_places)
        self.nav = Navigator(ctx.name, ctx.graph, ctx.rng, use_danger=True, note=ctx.note)
        self.last_invoked = -10**9
        self._near: dict[int, int] = {}
        self._danger_count = 0

    def _absorb(self, obs: Observation) -> bool:
        """Fold messages and query results into memory; True if anything arrived."""
        st, mem = self.st, self.mem
        news = bool(obs.messages) or bool(obs.map_results)
        if obs.messages:
            st.history.extend(obs.messages)
            facts = extract_spatial_facts(obs.messages)
            mem.update_pose_registry(facts)
            mem.update_eta_map(facts)
            others = extract_spatial_facts([m for m in obs.messages if m.sender != self.name])
            mem.add_reported_sentinels(others, obs.pose, obs.clock)
        for r in obs.map_results:
            if r.error is not None:
                self.ctx.note("query_error", f"{r.variant}: {r.error}")
                if r.variant == "place" and r.args:
                    st.place_pending = None
                continue
            if r.variant == "place":
                st.known_places[r.value.name] = r.value
                st.place_pending = None
            elif r.variant == "nearby":
                for p in r.value:
                    st.known_places.setdefault(p.name, PlaceInfo(p.name, p.location, p.bounding_box, p.indoor))
            elif r.variant == "route" and st.route_pending is not None:
                place = st.route_pending
                st.route_pending = None
                _store_eta(st, mem, place, own_eta(st, mem, place, r.value), obs.clock)
        return news

    def act(self, obs: Observation):
        if not obs.alive:
            return Wait()
        st, mem = self.st, self.mem
        st.pose = obs.pose
        self.perceive(obs)
        news = self._absorb(obs)
        st.sightings = {s.id: s.pose for s in obs.sentinels}
        opinions = analyze_transcript(st.history, st.roster, obs.clock)
        mem.presumed_caught = {a for a, o in opinions.opinions.items() if o.stance == PRESUMED_CAUGHT}
        sig = opinions.signature()
        changed = sig != st.signature
        if changed:
            st.signature = sig
            st.stable_since = obs.clock

        # refresh the committed ETA sample now and then
        danger = len(mem.grid.centers)
        if mem.plan.committed and (obs.clock - st.eta_time.get(mem.plan.place, -10**9) >= COMMITTED_REFRESH
                                   or danger != self._danger_count):
            _store_eta(st, mem, mem.plan.place, own_eta(st, mem, mem.plan.place), obs.clock)
        self._danger_count = danger

        unreported = any(sid not in st.reported or st.reported[sid][0].dist(p) > REPORT_SHIFT
                         for sid, p in st.sightings.items())
        trigger = (news or changed or unreported or obs.clock - self.last_invoked >= REASON_PERIOD
                   or obs.clock - st.stable_since == FINALIZE_AFTER)
        plan = WaitPlan("no trigger")
        if trigger:
            self.last_invoked = obs.clock
            plan = cosar_decide(self.name, mem, opinions, obs.messages, obs.clock, st)
            if not isinstance(plan, WaitPlan):
                self.ctx.note("plan", f"{type(plan).__name__}: {plan.justification}")

        if isinstance(plan, Communicate):
            return Speak(plan.message)
        if isinstance(plan, Query):
            return QueryMap(plan.variant, plan.args)
        if isinstance(plan, Navigate):
            info = st.known_places[plan.place]
            route = self.nav.set_destination(mem, obs.pose, info.location)
            mem.plan.commit(plan.place, route)
            eta = int(math.ceil(route.length / st.speed))
            _store_eta(st, mem, plan.place, eta, obs.clock)

        # otherwise keep doing what we were doing
        place = mem.plan.place if mem.plan.committed else None
        if place is not None:
            done = self.signal_if_inside(obs, place)
            if done is not None:
                st.signaled = place
                return done
        return drive(self.nav, self.mem, obs, self.ctx.speed, self._near)
