"""Hazard-aware navigation: route safety checks, danger-avoiding route
refinement, local A* over the occupancy grid and emergency avoidance."""

from __future__ import annotations

import heapq
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Pose2D, point_segment_distance
from .maptool import NoRoute, Route, WaypointGraph, query_refined_route, query_route
from .memory import DANGER, DANGER_RADIUS, FREE, OBSTACLE, UNKNOWN, Memory, OccupancyGrid

MAX_RETRIES = 3
THREAT_RADIUS = 40.0
COMMIT_STEPS = 10
AVOID_WINDOW = 80  # cells per side
SCORE_DEN_GUARD = 0.5
SCORE_EPS = 1e-6
ARRIVAL_TOL = 1.5
# after a warning the sentinel gets this much clearance (about where the
# visibility proxy first crosses its trigger threshold) for a while
CAUTION_RADIUS = 20.0
CAUTION_STEPS = 180
CENTER_MATCH = 5.0  # a warned sentinel within this of a zone centre is that centre
COST = {FREE: 1.0, UNKNOWN: 1.5, DANGER: 20.0}
SQRT2 = math.sqrt(2.0)
# A* search box margin around start and goal, in cells
SEARCH_MARGIN = 30


class NoLocalPath(Exception):
    pass


class StayPut(Exception):
    pass


# ---------------------------------------------------------------------------
# route safety


@dataclass(frozen=True)
class SafetyReport:
    safe: bool
    intersections: tuple[tuple[int, Pose2D], ...] = ()


def _radii(centers, r) -> list[float]:
    return [float(r)] * len(centers) if np.isscalar(r) else [float(x) for x in r]


def assess_route_safety(route: Route | Sequence[Pose2D], danger_centers: Sequence[Pose2D],
                        r: float | Sequence[float] = DANGER_RADIUS) -> SafetyReport:
    """Segment k (waypoint k to k+1) is unsafe when it comes within r of a centre.

    `r` is one radius for all centres or one per centre.
    """
    pts = route.waypoints if isinstance(route, Route) else tuple(route)
    radii = _radii(danger_centers, r)
    hits = []
    if len(pts) == 1:
        segs = [(pts[0].xy, pts[0].xy)]
    else:
        segs = [(a.xy, b.xy) for a, b in zip(pts, pts[1:])]
    for k, (a, b) in enumerate(segs):
        for c, rc in zip(danger_centers, radii):
            if point_segment_distance(c.xy, a, b) <= rc:
                hits.append((k, c))
    return SafetyReport(not hits, tuple(hits))


def _edge_clearance_mask(g: WaypointGraph, centers: Sequence[Pose2D], r) -> np.ndarray:
    """Boolean mask over g.edge_index(): edges that come within r of any centre
    (r scalar or per centre)."""
    e = g.edge_index()
    bad = np.zeros(len(e), dtype=bool)
    if not len(e) or not centers:
        return bad
    nodes = getattr(g, "_node_array", None)
    if nodes is None:
        nodes = g._node_array = np.array(g.nodes)
    a, b = nodes[e[:, 0]], nodes[e[:, 1]]
    d = b - a
    seg2 = np.maximum((d ** 2).sum(axis=1), 1e-12)
    for c, rc in zip(centers, _radii(centers, r)):
        p = np.array(c.xy)
        t = np.clip(((p - a) * d).sum(axis=1) / seg2, 0.0, 1.0)
        q = a + t[:, None] * d
        bad |= np.hypot(*(q - p).T) <= rc
    return bad


# ---------------------------------------------------------------------------
# refinement


class RouteRefiner(ABC):
    """Proposes a candidate waypoint list; the caller verifies it."""

    @abstractmethod
    def refine(self, schematic, self_pose: Pose2D, destination: Pose2D,
               danger_centers: Sequence[Pose2D], reference: Route, attempt: int,
               radii: Sequence[float] | None = None) -> list[Pose2D]:
        ...


class PrunedGraphRefiner(RouteRefiner):
    """Dijkstra on the waypoint graph with every danger-crossing edge removed.

    Later attempts widen the pruning margin so a retry is not a repeat.
    """

    margins = (0.0, 2.0, 5.0)

    def __init__(self, graph: WaypointGraph):
        self.graph = graph
        self._cache: dict = {}

    def refine(self, schematic, self_pose, destination, danger_centers, reference, attempt, radii=None):
        margin = self.margins[min(attempt, len(self.margins) - 1)]
        radii = _radii(danger_centers, DANGER_RADIUS if radii is None else radii)
        key = (tuple((round(c.x, 1), round(c.y, 1), r) for c, r in zip(danger_centers, radii)), margin)
        pruned = self._cache.get(key)
        if pruned is None:
            bad = _edge_clearance_mask(self.graph, danger_centers, [r + margin for r in radii])
            pruned = self.graph.without_pairs(self.graph.edge_index()[bad])
            if len(self._cache) > 32:
                self._cache.clear()
            self._cache[key] = pruned
        s, t = pruned.nearest(self_pose), pruned.nearest(destination)
        path, _ = pruned.shortest_path(s, t)
        return [self_pose] + [pruned.pose(i) for i in path] + [destination]


@dataclass(frozen=True)
class Refinement:
    route: Route
    attempts: int
    fallback: bool


def refine_route_detailed(g: WaypointGraph, danger_centers: Sequence[Pose2D], self_pose: Pose2D,
                          destination: Pose2D, max_retries: int = MAX_RETRIES,
                          refiner: RouteRefiner | None = None,
                          radii: Sequence[float] | None = None) -> Refinement:
    original = query_route(g, self_pose, destination)
    centers = list(danger_centers)
    radii = _radii(centers, DANGER_RADIUS if radii is None else radii)
    if assess_route_safety(original, centers, radii).safe:
        return Refinement(original, 1, False)
    refiner = refiner if refiner is not None else PrunedGraphRefiner(g)
    for attempt in range(max_retries):
        try:
            pts = refiner.refine(None, self_pose, destination, centers, original, attempt, radii)
            cand = query_refined_route(g, pts)
        except (NoRoute, ValueError):
            continue
        if assess_route_safety(cand, centers, radii).safe:
            return Refinement(cand, attempt + 1, False)
    # fallback: keep the original route minus the waypoints inside a zone
    wps = original.waypoints
    kept = [wps[0]] + [p for p in wps[1:-1]
                       if all(p.dist(c) > r for c, r in zip(centers, radii))] + [wps[-1]]
    return Refinement(Route.through(kept), max_retries, True)


def refine_route(g: WaypointGraph, mem: Memory | Sequence[Pose2D], self_pose: Pose2D,
                 destination: Pose2D, max_retries: int = MAX_RETRIES,
                 refiner: RouteRefiner | None = None) -> Route:
    centers = mem.grid.danger_points() if isinstance(mem, Memory) else mem
    return refine_route_detailed(g, centers, self_pose, destination, max_retries, refiner).route


# ---------------------------------------------------------------------------
# local planning


def _window(grid, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    """Cell states for rows r0..r1, cols c0..c1 of a grid or a raw state array."""
    if isinstance(grid, OccupancyGrid):
        base = grid.base[r0:r1 + 1, c0:c1 + 1]
        out = base.copy()
        out[grid.danger[r0:r1 + 1, c0:c1 + 1] & (base != OBSTACLE)] = DANGER
        return out
    return np.asarray(grid)[r0:r1 + 1, c0:c1 + 1]


def _octile(a, b) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (max(dr, dc) - min(dr, dc)) + SQRT2 * min(dr, dc)


def plan_local_path(grid: OccupancyGrid | np.ndarray, start: tuple[int, int], goal: tuple[int, int],
                    bound: tuple[int, int, int, int] | None = None) -> tuple[list[tuple[int, int]], float]:
    """8-connected A* over cell states; returns (cells, cost).

    Entering a cell costs 1 (straight) or sqrt(2) (diagonal) times the cell's
    multiplier. Diagonals may not cut an Obstacle corner. `bound` limits the
    search to rows r0..r1, cols c0..c1 inclusive.
    """
    h, w = grid.shape
    r0, r1, c0, c1 = bound if bound is not None else (0, h - 1, 0, w - 1)
    r0, c0, r1, c1 = max(0, r0), max(0, c0), min(h - 1, r1), min(w - 1, c1)
    start, goal = tuple(start), tuple(goal)
    for cell in (start, goal):
        if not (r0 <= cell[0] <= r1 and c0 <= cell[1] <= c1):
            raise NoLocalPath(f"cell {cell} outside the search area")
    sub = _window(grid, r0, r1, c0, c1)
    if sub[goal[0] - r0, goal[1] - c0] == OBSTACLE:
        raise NoLocalPath("goal is an obstacle")
    mult = np.full(sub.shape, math.inf)
    for state, m in COST.items():
        mult[sub == state] = m
    mult = mult.tolist()
    H, W = len(mult), len(mult[0]) if mult else 0

    s = (start[0] - r0, start[1] - c0)
    t = (goal[0] - r0, goal[1] - c0)
    gbest = {s: 0.0}
    parent = {s: None}
    heap = [(_octile(s, t), 0.0, s)]
    closed = set()
    while heap:
        _, gu, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == t:
            break
        closed.add(u)
        ur, uc = u
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                vr, vc = ur + dr, uc + dc
                if not (0 <= vr < H and 0 <= vc < W):
                    continue
                m = mult[vr][vc]
                if m == math.inf:
                    continue
                if dr and dc:
                    if mult[ur][vc] == math.inf or mult[vr][uc] == math.inf:
                        continue
                    step = SQRT2 * m
                else:
                    step = m
                v = (vr, vc)
                ng = gu + step
                if ng < gbest.get(v, math.inf):
                    gbest[v] = ng
                    parent[v] = u
                    heapq.heappush(heap, (ng + _octile(v, t), ng, v))
    if t not in gbest:
        raise NoLocalPath(f"no path from {start} to {goal}")
    path = []
    u = t
    while u is not None:
        path.append((u[0] + r0, u[1] + c0))
        u = parent[u]
    path.reverse()
    return path, gbest[t]


# ---------------------------------------------------------------------------
# emergency avoidance


def avoidance_score(p, a, threats: Sequence) -> float:
    s_total = 0.0
    for s in threats:
        sx, sy = (s.x, s.y) if isinstance(s, Pose2D) else s
        dx, dy = sx - a[0], sy - a[1]
        if abs(dx) >= SCORE_DEN_GUARD:
            s_total += (p[0] - a[0]) / dx
        if abs(dy) >= SCORE_DEN_GUARD:
            s_total += (p[1] - a[1]) / dy
    return s_total


def _scores(px: np.ndarray, py: np.ndarray, a, threats) -> np.ndarray:
    S = np.zeros(px.shape)
    for s in threats:
        sx, sy = (s.x, s.y) if isinstance(s, Pose2D) else s
        dx, dy = sx - a[0], sy - a[1]
        if abs(dx) >= SCORE_DEN_GUARD:
            S += (px - a[0]) / dx
        if abs(dy) >= SCORE_DEN_GUARD:
            S += (py - a[1]) / dy
    return S


def select_avoidance_target(grid: OccupancyGrid, a: Pose2D, threats: Sequence[Pose2D],
                            planned_route: Route | None, rng: np.random.Generator) -> Pose2D:
    if not threats:
        raise ValueError("no threats to avoid")
    ar, ac = grid.cell_of(a)
    half = AVOID_WINDOW // 2
    r_lo, r_hi = ar - half, ar + half - 1
    c_lo, c_hi = ac - half, ac + half - 1

    def valid(cell) -> bool:
        return grid.in_bounds(cell) and grid.state(cell) not in (OBSTACLE, DANGER)

    if planned_route is not None:
        best = None
        for wp in planned_route.waypoints:
            cell = grid.cell_of(wp)
            if not (r_lo <= cell[0] <= r_hi and c_lo <= cell[1] <= c_hi) or not valid(cell):
                continue
            sc = avoidance_score(wp.xy, a.xy, threats)
            if sc < 0 and (best is None or sc < best[0]):
                best = (sc, wp)
        if best is not None:
            return Pose2D(best[1].x, best[1].y)

    rlo, rhi = max(0, r_lo), min(grid.shape[0] - 1, r_hi)
    clo, chi = max(0, c_lo), min(grid.shape[1] - 1, c_hi)
    rows, cols = np.mgrid[rlo:rhi + 1, clo:chi + 1]
    states = _window(grid, rlo, rhi, clo, chi)
    ok = (states != OBSTACLE) & (states != DANGER)
    px = grid.origin[0] + (cols + 0.5) * grid.cell_size
    py = grid.origin[1] + (rows + 0.5) * grid.cell_size
    S = _scores(px, py, a.xy, threats)
    for limit in (0.0, 1.0):
        keep = ok & (S < limit)
        if keep.any():
            break
    else:
        raise StayPut("no admissible avoidance target")
    ks = S[keep]
    sigma = float(ks.std())
    w = np.exp(-(ks - ks.min()) / (sigma + SCORE_EPS))
    w /= w.sum()
    i = int(rng.choice(len(ks), p=w))
    return Pose2D(float(px[keep][i]), float(py[keep][i]))


@dataclass
class AvoidanceCommitment:
    target: Pose2D
    steps_remaining: int = COMMIT_STEPS


# ---------------------------------------------------------------------------
# per-agent navigator


def _line_clear(grid: OccupancyGrid, p: Pose2D, q: Pose2D) -> bool:
    """True when the straight line p-q crosses only Free/Unknown cells."""
    n = int(p.dist(q) / (grid.cell_size * 0.5)) + 2
    t = np.linspace(0.0, 1.0, n)
    xs = p.x + (q.x - p.x) * t
    ys = p.y + (q.y - p.y) * t
    rows = np.floor((ys - grid.origin[1]) / grid.cell_size).astype(np.int64)
    cols = np.floor((xs - grid.origin[0]) / grid.cell_size).astype(np.int64)
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= grid.shape[0] or cols.max() >= grid.shape[1]:
        return False
    b = grid.base[rows, cols]
    if (b == OBSTACLE).any():
        return False
    # crossing danger we are already standing in is fine; new danger is not
    d = grid.danger[rows, cols]
    return not d[1:].any() or bool(d[0])


class Navigator:
    """Follows a reference route with local A*, re-refining when the route
    turns unsafe and running 10-step avoidance commitments on threats."""

    def __init__(self, name: str, graph: WaypointGraph, rng: np.random.Generator,
                 use_danger: bool = True, note: Callable[[str, str], None] | None = None,
                 max_retries: int = MAX_RETRIES):
        self.name = name
        self.graph = graph
        self.rng = rng
        self.use_danger = use_danger
        self.note = note or (lambda kind, detail: None)
        self.max_retries = max_retries
        self.refiner = PrunedGraphRefiner(graph)
        self.route: Route | None = None
        self.destination: Pose2D | None = None
        self.index = 0
        self.commitment: AvoidanceCommitment | None = None
        self.moves_in_commitment = 0
        self._danger_sig = None
        self._path: list[tuple[int, int]] = []
        self._path_goal = None
        self.refinements = 0
        self.caution: list[list] = []  # [sentinel pose, steps left]

    # -- planning ------------------------------------------------------------

    def _hazards(self, mem: Memory) -> tuple[list[Pose2D], list[float]]:
        if not self.use_danger:
            return [], []
        centers = mem.grid.danger_points()
        radii = [DANGER_RADIUS] * len(centers)
        for p, _ in self.caution:
            near = [k for k, c in enumerate(centers) if c.dist(p) <= CENTER_MATCH]
            if near:
                for k in near:
                    radii[k] = CAUTION_RADIUS
            else:
                centers.append(p)
                radii.append(CAUTION_RADIUS)
        return centers, radii

    def _plan(self, mem: Memory, pose: Pose2D) -> None:
        centers, radii = self._hazards(mem)
        ref = refine_route_detailed(self.graph, centers, pose, self.destination,
                                    self.max_retries, self.refiner, radii)
        if ref.fallback and self.caution:
            # the wide berth is a preference; fall back to the plain zones
            plain = mem.grid.danger_points()
            ref = refine_route_detailed(self.graph, plain, pose, self.destination,
                                        self.max_retries, self.refiner)
        self.route, self.index = ref.route, 0
        self._danger_sig = self._signature(mem)
        self._path = []
        self.refinements += 1
        if ref.fallback:
            self.note("refine_fallback", f"attempts={ref.attempts}")
        elif ref.attempts > 1 or centers:
            self.note("refine", f"attempts={ref.attempts} length={ref.route.length:.1f}")

    def _signature(self, mem: Memory):
        # coarse on purpose: jitter in reported poses should not trigger replanning
        return tuple(sorted((round(c.sentinel.x / 5.0), round(c.sentinel.y / 5.0)) for c in mem.grid.centers))

    def set_destination(self, mem: Memory, pose: Pose2D, destination: Pose2D) -> Route:
        self.destination = Pose2D(destination.x, destination.y)
        self._plan(mem, pose)
        return self.route

    def clear(self) -> None:
        self.route, self.destination, self.index = None, None, 0
        self._path = []

    @property
    def arrived(self) -> bool:
        return self.route is not None and self.index >= len(self.route.waypoints)

    def remaining(self, pose: Pose2D) -> Route | None:
        if self.route is None:
            return None
        return Route.through([pose] + list(self.route.waypoints[self.index:]))

    # -- stepping ------------------------------------------------------------

    def _toward(self, mem: Memory, pose: Pose2D, goal: Pose2D, speed: float):
        from .world import Move, Wait

        if pose.dist(goal) < 1e-9:
            return Wait()
        if _line_clear(mem.grid, pose, goal):
            d = pose.dist(goal)
            k = min(speed, d) / d
            return Move((goal.x - pose.x) * k, (goal.y - pose.y) * k)
        g = mem.grid
        start, gcell = g.cell_of(pose), g.cell_of(goal)
        if self._path_goal != gcell or start not in self._path:
            bound = (min(start[0], gcell[0]) - SEARCH_MARGIN, max(start[0], gcell[0]) + SEARCH_MARGIN,
                     min(start[1], gcell[1]) - SEARCH_MARGIN, max(start[1], gcell[1]) + SEARCH_MARGIN)
            try:
                self._path, _ = plan_local_path(g, start, gcell, bound)
            except NoLocalPath as e:
                self._path, self._path_goal = [], None
                self.note("no_local_path", str(e))
                return Wait()
            self._path_goal = gcell
        i = self._path.index(start)
        # aim about one metre down the path, or at the goal itself at the end
        j = min(i + int(round(speed / g.cell_size)), len(self._path) - 1)
        if j == len(self._path) - 1:
            tgt = goal
        else:
            tgt = Pose2D(*g.center_of(self._path[j]))
        d = pose.dist(tgt)
        if d < 1e-9:
            return Wait()
        k = min(speed, d) / d
        return Move((tgt.x - pose.x) * k, (tgt.y - pose.y) * k)

    def _remember_warnings(self, warned: Sequence[Pose2D]) -> None:
        for entry in self.caution:
            entry[1] -= 1
        self.caution = [e for e in self.caution if e[1] > 0]
        for p in warned:
            for entry in self.caution:
                if entry[0].dist(p) <= CENTER_MATCH:
                    entry[0], entry[1] = p, CAUTION_STEPS
                    break
            else:
                self.caution.append([p, CAUTION_STEPS])

    def step(self, mem: Memory, pose: Pose2D, speed: float, threats: Sequence[Pose2D],
             triggered: bool, indoor: bool = False, warned: Sequence[Pose2D] = ()):
        """One navigation action.

        `threats` are sentinel poses within the threat radius; `triggered` is
        true on a warning or a freshly detected nearby sentinel; `warned` are
        the poses of sentinels that issued a warning this step.
        """
        from .world import Wait

        if self.use_danger:
            self._remember_warnings(warned)

        if self.use_danger and self.commitment is None and not indoor:
            # the trigger is re-evaluated every step, so an expired commitment
            # is followed by another only while the threat persists
            if triggered and threats:
                try:
                    tgt = select_avoidance_target(mem.grid, pose, threats, self.remaining(pose), self.rng)
                    self.commitment = AvoidanceCommitment(tgt)
                    self.moves_in_commitment = 0
                    self.note("commit", f"[{tgt.x:.2f},{tgt.y:.2f}]")
                except StayPut:
                    self.note("stay_put")

        if self.commitment is not None:
            c = self.commitment
            act = self._toward(mem, pose, c.target, speed)
            if isinstance(act, Wait):
                from .world import Move
                act = Move(0.0, 0.0)
            c.steps_remaining -= 1
            self.moves_in_commitment += 1
            if c.steps_remaining <= 0:
                self.commitment = None
                self._path = []
                # the detour may have pushed the way ahead into danger; replan if so
                if self.destination is not None:
                    rest = self.remaining(pose)
                    centers, radii = self._hazards(mem)
                    if rest is None or not assess_route_safety(rest, centers, radii).safe:
                        self._plan(mem, pose)
            return act

        if self.route is None:
            return Wait()

        if self.use_danger:
            sig = self._signature(mem)
            if sig != self._danger_sig:
                self._danger_sig = sig
                if not assess_route_safety(self.remaining(pose), mem.grid.danger_points()).safe:
                    self._plan(mem, pose)

        wps = self.route.waypoints
        while self.index < len(wps) and pose.dist(wps[self.index]) <= ARRIVAL_TOL:
            self.index += 1
        if self.index >= len(wps):
            final = wps[-1]
            if pose.dist(final) > 0.25:
                return self._toward(mem, pose, final, speed)
            return Wait()
        return self._toward(mem, pose, wps[self.index], speed)
