"""Per-agent spatial memory: occupancy grid with danger zones, pose registry,
ETA table and meeting plan, plus min-max meeting-place selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose2D
from .maptool import Route
from .protocol import IMPOSSIBLE, Eta, SpatialFacts

UNKNOWN, FREE, OBSTACLE, DANGER = 0, 1, 2, 3
_GLYPH = {UNKNOWN: "?", FREE: ".", OBSTACLE: "#", DANGER: "!"}

DANGER_RADIUS = 10.0
TAU_FACTOR = 0.8
# a centre re-reported within this distance replaces the old one
CENTER_MERGE = 5.0
# a tracked sentinel that shifts less than this keeps its zone
MOVE_SHIFT = 3.0
# a sighting replaces the zone when its range is below this share of the old one
BETTER_SIGHTING = 0.7
DANGER_TTL = 180
PERCEPTION_RADIUS = 20.0
ETA_SAMPLE_PERIOD = 120


class NoViableCandidate(Exception):
    pass


def in_danger_zone(p, s, a, r: float = DANGER_RADIUS, tau_factor: float = TAU_FACTOR) -> bool:
    """The two zone inequalities for one point."""
    ds = math.hypot(p[0] - s[0], p[1] - s[1])
    da = math.hypot(p[0] - a[0], p[1] - a[1])
    return ds <= r and ds - da < tau_factor * math.hypot(a[0] - s[0], a[1] - s[1])


@dataclass
class DangerCenter:
    sentinel: Pose2D
    agent: Pose2D  # observer pose used for the hyperbolic cut
    timestamp: int
    key: object = None  # tracking identity, when the observer has one
    quality: float = math.inf  # sighting range; smaller is better


def _ray_template(radius_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell offsets along rays from the origin cell, shape (n_rays, n_samples)."""
    n_rays = int(2 * math.pi * radius_cells)
    ang = np.linspace(0.0, 2 * math.pi, n_rays, endpoint=False)
    t = np.arange(0.0, radius_cells + 0.5, 0.75)
    # rays start at the cell centre
    dx = 0.5 + np.outer(np.cos(ang), t)
    dy = 0.5 + np.outer(np.sin(ang), t)
    return np.floor(dy).astype(np.int64), np.floor(dx).astype(np.int64)


class OccupancyGrid:
    """Edge-aligned grid over the scene extent (row = y, col = x).

    Static knowledge (Unknown / Free / Obstacle) lives in `base`; danger is a
    separate layer rebuilt from the recorded centres, so clearing one zone
    never erases another.
    """

    def __init__(self, extent: tuple[float, float], cell_size: float = 0.5, origin=(0.0, 0.0)):
        self.cell_size = cell_size
        self.origin = origin
        self.shape = (int(math.ceil(extent[1] / cell_size)), int(math.ceil(extent[0] / cell_size)))
        self.base = np.full(self.shape, UNKNOWN, dtype=np.int8)
        self.danger = np.zeros(self.shape, dtype=bool)
        self.centers: list[DangerCenter] = []
        self._rays = None

    # -- coordinates ---------------------------------------------------------

    def cell_of(self, p) -> tuple[int, int]:
        x, y = (p.x, p.y) if isinstance(p, Pose2D) else p
        return (int(math.floor((y - self.origin[1]) / self.cell_size)),
                int(math.floor((x - self.origin[0]) / self.cell_size)))

    def center_of(self, cell) -> tuple[float, float]:
        r, c = cell
        return (self.origin[0] + (c + 0.5) * self.cell_size, self.origin[1] + (r + 0.5) * self.cell_size)

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    @property
    def cells(self) -> np.ndarray:
        out = self.base.copy()
        out[self.danger & (self.base != OBSTACLE)] = DANGER
        return out

    def state(self, cell) -> int:
        r, c = cell
        if self.danger[r, c] and self.base[r, c] != OBSTACLE:
            return DANGER
        return int(self.base[r, c])

    # -- static layer --------------------------------------------------------

    def load_schematic(self, grid: np.ndarray, cell_size: float) -> None:
        """Seed the static layer from a coarse map image (True = obstacle)."""
        k = cell_size / self.cell_size
        if abs(k - round(k)) > 1e-9:
            raise ValueError("schematic cell size must be a multiple of the grid cell size")
        k = int(round(k))
        fine = np.repeat(np.repeat(np.asarray(grid, bool), k, axis=0), k, axis=1)
        h, w = min(fine.shape[0], self.shape[0]), min(fine.shape[1], self.shape[1])
        self.base[:h, :w] = np.where(fine[:h, :w], OBSTACLE, FREE)

    def observe(self, row0: int, col0: int, obstacles: np.ndarray, at) -> np.ndarray:
        """Ray-cast a local patch of true geometry from `at`.

        Cells up to and including the first obstacle on each ray become
        Free/Obstacle. Returns a boolean mask of visible cells over the grid.
        """
        if self._rays is None:
            self._rays = _ray_template(int(PERCEPTION_RADIUS / self.cell_size))
        dr, dc = self._rays
        r0, c0 = self.cell_of(at)
        rr, cc = r0 + dr - row0, c0 + dc - col0
        h, w = obstacles.shape
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        blk = np.ones(rr.shape, dtype=bool)
        blk[inside] = obstacles[rr[inside], cc[inside]]
        # a ray sees up to and including its first obstacle; stop at the patch edge
        stop = blk | ~inside
        before = np.zeros(rr.shape, dtype=bool)
        before[:, 1:] = np.logical_or.accumulate(stop, axis=1)[:, :-1]
        vis = inside & ~before
        vr, vc = rr[vis] + row0, cc[vis] + col0
        ok = (vr >= 0) & (vr < self.shape[0]) & (vc >= 0) & (vc < self.shape[1])
        vr, vc, vb = vr[ok], vc[ok], blk[vis][ok]
        self.base[vr, vc] = np.where(vb, OBSTACLE, FREE)
        mask = np.zeros(self.shape, dtype=bool)
        mask[vr, vc] = True
        return mask

    # -- danger layer --------------------------------------------------------

    def _zone_cells(self, s: Pose2D, a: Pose2D):
        cs = self.cell_size
        r_lo, c_lo = self.cell_of((s.x - DANGER_RADIUS, s.y - DANGER_RADIUS))
        r_hi, c_hi = self.cell_of((s.x + DANGER_RADIUS, s.y + DANGER_RADIUS))
        r_lo, c_lo = max(0, r_lo), max(0, c_lo)
        r_hi, c_hi = min(self.shape[0] - 1, r_hi), min(self.shape[1] - 1, c_hi)
        if r_lo > r_hi or c_lo > c_hi:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        rows, cols = np.mgrid[r_lo:r_hi + 1, c_lo:c_hi + 1]
        px = self.origin[0] + (cols + 0.5) * cs
        py = self.origin[1] + (rows + 0.5) * cs
        ds = np.hypot(px - s.x, py - s.y)
        da = np.hypot(px - a.x, py - a.y)
        m = (ds <= DANGER_RADIUS) & (ds - da < TAU_FACTOR * s.dist(a))
        own = self.cell_of(a)
        m &= ~((rows == own[0]) & (cols == own[1]))
        return rows[m], cols[m]

    def _paint(self, idx: int) -> None:
        c = self.centers[idx]
        rows, cols = self._zone_cells(c.sentinel, c.agent)
        self.danger[rows, cols] = True

    def _zone_box(self, s: Pose2D) -> tuple[int, int, int, int]:
        r_lo, c_lo = self.cell_of((s.x - DANGER_RADIUS, s.y - DANGER_RADIUS))
        r_hi, c_hi = self.cell_of((s.x + DANGER_RADIUS, s.y + DANGER_RADIUS))
        return r_lo, r_hi, c_lo, c_hi

    def rebuild_danger(self, around: Sequence[Pose2D] | None = None) -> None:
        """Repaint the danger layer from the centres, optionally only in the
        boxes of the zones around the given points."""
        if around is None:
            self.danger[:] = False
            for i in range(len(self.centers)):
                self._paint(i)
            return
        for p in around:
            r_lo, r_hi, c_lo, c_hi = self._zone_box(p)
            r_lo, c_lo = max(0, r_lo), max(0, c_lo)
            self.danger[r_lo:r_hi + 1, c_lo:c_hi + 1] = False
            for c in self.centers:
                if c.sentinel.dist(p) <= 2 * DANGER_RADIUS + 2 * self.cell_size:
                    rows, cols = self._zone_cells(c.sentinel, c.agent)
                    m = (rows >= r_lo) & (rows <= r_hi) & (cols >= c_lo) & (cols <= c_hi)
                    self.danger[rows[m], cols[m]] = True

    def mark_danger_zone(self, s: Pose2D, a: Pose2D, t: int = 0, key=None,
                         quality: float = math.inf) -> None:
        """Record a zone for a sentinel at s seen from a.

        A sighting matching an existing centre (same tracking key, or within
        CENTER_MERGE of it) only refreshes that centre unless the sentinel
        moved or the new sighting is clearly better (closer range).
        """
        for i, c in enumerate(self.centers):
            same = (key is not None and c.key == key) or c.sentinel.dist(s) <= CENTER_MERGE
            if not same:
                continue
            if c.sentinel.dist(s) <= MOVE_SHIFT and quality >= BETTER_SIGHTING * c.quality:
                self.centers[i] = replace(c, timestamp=max(t, c.timestamp))
                return
            old = c.sentinel
            self.centers[i] = DangerCenter(s, a, t, key if key is not None else c.key, quality)
            self.rebuild_danger([old, s])
            return
        self.centers.append(DangerCenter(s, a, t, key, quality))
        self._paint(len(self.centers) - 1)

    def drop_centers(self, keep) -> bool:
        """Remove centres for which keep(center) is false. True if any went."""
        kept = [c for c in self.centers if keep(c)]
        if len(kept) == len(self.centers):
            return False
        gone = [c.sentinel for c in self.centers if c not in kept]
        self.centers = kept
        self.rebuild_danger(gone)
        return True

    def danger_source(self, cell) -> DangerCenter | None:
        """The recorded centre whose zone covers a Danger cell."""
        if not self.danger[cell[0], cell[1]]:
            return None
        p = self.center_of(cell)
        own = tuple(cell)
        for c in reversed(self.centers):
            if self.cell_of(c.agent) != own and in_danger_zone(p, c.sentinel.xy, c.agent.xy):
                return c
        return None

    def danger_points(self) -> list[Pose2D]:
        return [c.sentinel for c in self.centers]

    # -- debug ---------------------------------------------------------------

    def dumps(self) -> str:
        cells = self.cells
        return "\n".join("".join(_GLYPH[int(v)] for v in row) for row in cells) + "\n"


def mark_danger_zone(mem: "Memory", s: Pose2D, a: Pose2D, t: int = 0) -> "Memory":
    mem.grid.mark_danger_zone(s, a, t)
    return mem


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class EtaEntry:
    eta: Eta
    timestamp: int


class EtaMap:
    def __init__(self):
        self.entries: dict[tuple[str, str], EtaEntry] = {}

    def update(self, place: str, agent: str, eta: Eta, timestamp: int) -> bool:
        old = self.entries.get((place, agent))
        if old is not None and old.timestamp > timestamp:
            return False
        self.entries[(place, agent)] = EtaEntry(eta, timestamp)
        return True

    def get(self, place: str, agent: str) -> Eta | None:
        e = self.entries.get((place, agent))
        return None if e is None else e.eta

    def places(self) -> list[str]:
        return sorted({p for p, _ in self.entries})

    def row(self, place: str, agents: Sequence[str]) -> dict[str, Eta | None]:
        return {a: self.get(place, a) for a in agents}


@dataclass
class PoseRegistry:
    agents: dict[str, tuple[Pose2D, int]] = field(default_factory=dict)
    sentinels: dict[tuple[float, float], int] = field(default_factory=dict)

    def update_agent(self, name: str, pose: Pose2D, t: int) -> None:
        old = self.agents.get(name)
        if old is None or old[1] <= t:
            self.agents[name] = (pose, t)

    def update_sentinel(self, pose: Pose2D, t: int) -> None:
        key = (round(pose.x, 2), round(pose.y, 2))
        if self.sentinels.get(key, -1) <= t:
            self.sentinels[key] = t


@dataclass
class MeetingPlan:
    place: str | None = None
    reference_route: Route | None = None
    committed: bool = False
    eta_history: list[tuple[int, float]] = field(default_factory=list)

    def commit(self, place: str, route: Route | None) -> None:
        if place != self.place:
            self.eta_history = []
        self.place, self.reference_route, self.committed = place, route, True

    def release(self) -> None:
        self.place, self.reference_route, self.committed = None, None, False
        self.eta_history = []

    def record_eta(self, t: int, eta: float) -> bool:
        if self.eta_history and t - self.eta_history[-1][0] < ETA_SAMPLE_PERIOD:
            return False
        self.eta_history.append((t, eta))
        return True


class Memory:
    """Everything one agent remembers about the world."""

    def __init__(self, owner: str, roster: Sequence[str], extent, cell_size: float = 0.5):
        self.owner = owner
        self.roster = list(roster)
        self.grid = OccupancyGrid(extent, cell_size)
        self.etas = EtaMap()
        self.poses = PoseRegistry()
        self.plan = MeetingPlan()
        self.presumed_caught: set[str] = set()
        self._last_view_cell = None
        self._last_visible = None

    @property
    def alive_agents(self) -> list[str]:
        return [a for a in self.roster if a not in self.presumed_caught]

    def integrate_observation(self, obs, self_pose: Pose2D) -> None:
        """Fold one step of perception into the grid and the registries."""
        t = obs.clock
        self.poses.update_agent(self.owner, self_pose, t)
        for name, pose in obs.agents.items():
            self.poses.update_agent(name, pose, t)
        seen = [s.pose for s in obs.sentinels]
        visible = None
        cell = self.grid.cell_of(self_pose)
        if obs.view is not None:
            if cell != self._last_view_cell or self._last_visible is None:
                self._last_visible = self.grid.observe(obs.view.row0, obs.view.col0,
                                                       obs.view.obstacles, self_pose)
                self._last_view_cell = cell
            visible = self._last_visible
        for s in obs.sentinels:
            self.poses.update_sentinel(s.pose, t)
            self.grid.mark_danger_zone(s.pose, self_pose, t, key=s.id, quality=s.distance)

        def keep(c: DangerCenter) -> bool:
            if t - c.timestamp > DANGER_TTL:
                return False
            if visible is None:
                return True
            cell = self.grid.cell_of(c.sentinel)
            if not self.grid.in_bounds(cell) or not visible[cell]:
                return True
            # centre in plain sight with nobody there: cleared
            return any(c.sentinel.dist(s) <= DANGER_RADIUS for s in seen)

        self.grid.drop_centers(keep)

    def update_pose_registry(self, facts: SpatialFacts) -> None:
        for name, (pose, t) in facts.agent_poses.items():
            self.poses.update_agent(name, pose, t)
        for pose, t in facts.sentinel_poses:
            self.poses.update_sentinel(pose, t)

    def update_eta_map(self, facts: SpatialFacts) -> None:
        for (place, agent), f in facts.etas.items():
            if agent != self.owner:  # own entries come from map-tool routes only
                self.etas.update(place, agent, f.eta, f.timestamp)

    def add_reported_sentinels(self, facts: SpatialFacts, self_pose: Pose2D, now: int) -> None:
        """Danger zones for sentinels heard about over the channel."""
        for pose, t in facts.sentinel_poses:
            if now - t > DANGER_TTL:
                continue
            self.grid.mark_danger_zone(pose, self_pose, t)


def integrate_observation(mem: Memory, obs, self_pose: Pose2D) -> Memory:
    mem.integrate_observation(obs, self_pose)
    return mem


def update_pose_registry(mem: Memory, facts: SpatialFacts) -> Memory:
    mem.update_pose_registry(facts)
    return mem


def update_eta_map(mem: Memory, facts: SpatialFacts) -> Memory:
    mem.update_eta_map(facts)
    return mem


# ---------------------------------------------------------------------------
# selection


def select_from_table(table: dict[str, dict[str, Eta | None]]) -> tuple[str, float]:
    """Min-max over a {place: {agent: eta}} table.

    Places with a missing or Impossible entry are out; if every place is out,
    the one with the fewest gaps wins (then lowest worst case, then name).
    """
    if not table:
        raise NoViableCandidate("no candidates")
    full = []
    partial = []
    for place, row in table.items():
        vals = [v for v in row.values() if v is not None and v != IMPOSSIBLE]
        gaps = len(row) - len(vals)
        if not vals:
            continue
        worst = float(max(vals))
        (full if gaps == 0 else partial).append((gaps, worst, place))
    if full:
        _, worst, place = min(full, key=lambda r: (r[1], r[2]))
        return place, worst
    if not partial:
        raise NoViableCandidate("no candidate has any ETA data")
    gaps, worst, place = min(partial)
    return place, worst


def select_meeting_place(mem: Memory, candidates: Iterable[str],
                         agents: Sequence[str] | None = None) -> tuple[str, float]:
    cands = sorted(set(candidates))
    if not cands:
        raise NoViableCandidate("no candidates")
    agents = mem.alive_agents if agents is None else list(agents)
    return select_from_table({p: mem.etas.row(p, agents) for p in cands})
