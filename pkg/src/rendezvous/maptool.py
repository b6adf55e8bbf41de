"""Waypoint graph over the road network and the five map-tool queries."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2D, Rect, dist
from .scene import Place, SceneSpec

WAYPOINT_SPACING = 7.0
EPS_GEOM = 1e-6
_TIE_TOL = 1e-9


class NoRoute(Exception):
    pass


class UnknownPlace(KeyError):
    def __str__(self) -> str:
        return f"unknown place {self.args[0]!r}"


@dataclass(frozen=True)
class Route:
    waypoints: tuple[Pose2D, ...]
    length: float

    @classmethod
    def through(cls, points: Sequence[Pose2D]) -> "Route":
        pts = _dedupe(points)
        return cls(tuple(pts), polyline_length(pts))

    def __len__(self) -> int:
        return len(self.waypoints)


def polyline_length(points: Sequence[Pose2D]) -> float:
    return sum(a.dist(b) for a, b in zip(points, points[1:]))


def _dedupe(points: Iterable[Pose2D]) -> list[Pose2D]:
    out: list[Pose2D] = []
    for p in points:
        if not out or (out[-1].x, out[-1].y) != (p.x, p.y):
            out.append(p)
    return out


class WaypointGraph:
    """Undirected graph over road waypoints. Immutable once built."""

    def __init__(self, nodes: Sequence[tuple[float, float]],
                 edges: Iterable[tuple[int, int, float]]):
        self.nodes = [(float(x), float(y)) for x, y in nodes]
        adj: list[dict[int, float]] = [dict() for _ in self.nodes]
        for i, j, w in edges:
            if i == j:
                continue
            if not w > 0:
                raise ValueError(f"edge ({i}, {j}) weight must be positive")
            adj[i][j] = w
            adj[j][i] = w
        self.adj: list[list[tuple[int, float]]] = [sorted(a.items()) for a in adj]
        self._tree = cKDTree(np.array(self.nodes)) if self.nodes else None

    @classmethod
    def from_edges(cls, nodes, pairs, weights=None) -> "WaypointGraph":
        """Graph with the given edges; weights default to Euclidean length."""
        edges = []
        for k, (i, j) in enumerate(pairs):
            w = dist(nodes[i], nodes[j]) if weights is None else weights[k]
            edges.append((i, j, w))
        return cls(nodes, edges)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(i, j, w) for i, nbrs in enumerate(self.adj) for j, w in nbrs if i < j]

    def __len__(self) -> int:
        return len(self.nodes)

    def pose(self, i: int) -> Pose2D:
        return Pose2D(*self.nodes[i])

    def nearest(self, p) -> int:
        """Nearest node by Euclidean distance, ties broken by lower index."""
        if self._tree is None:
            raise NoRoute("empty waypoint graph")
        xy = (p.x, p.y) if isinstance(p, Pose2D) else p
        d, _ = self._tree.query(xy)
        cands = self._tree.query_ball_point(xy, d + 1e-9)
        best = min(cands, key=lambda i: (dist(xy, self.nodes[i]), i))
        return best

    def components(self) -> list[list[int]]:
        seen = [False] * len(self.nodes)
        comps = []
        for s in range(len(self.nodes)):
            if seen[s]:
                continue
            stack, comp = [s], []
            seen[s] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, _ in self.adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def connectivity_report(self) -> dict:
        comps = self.components()
        return {"nodes": len(self.nodes), "edges": len(self.edges),
                "components": len(comps), "largest": max((len(c) for c in comps), default=0)}

    def edge_index(self) -> np.ndarray:
        """(E, 2) array of the edges with i < j, cached."""
        e = getattr(self, "_edge_index", None)
        if e is None:
            e = np.array([(i, j) for i, j, _ in self.edges], dtype=np.int64).reshape(-1, 2)
            self._edge_index = e
        return e

    def without_edges(self, drop) -> "WaypointGraph":
        """Copy with every edge (i, j) for which drop(min, max) is true removed."""
        return self.without_pairs([(i, j) for i, j, _ in self.edges if drop(i, j)])

    def without_pairs(self, pairs) -> "WaypointGraph":
        """Copy with the given undirected edges removed."""
        g = WaypointGraph.__new__(WaypointGraph)
        g.nodes = self.nodes
        g._tree = self._tree  # same nodes, so the snapping index is shared
        cut: dict[int, set[int]] = {}
        for i, j in pairs:
            cut.setdefault(int(i), set()).add(int(j))
            cut.setdefault(int(j), set()).add(int(i))
        g.adj = list(self.adj)
        for u, vs in cut.items():
            g.adj[u] = [(v, w) for v, w in self.adj[u] if v not in vs]
        return g

    # -- shortest paths -----------------------------------------------------

    def distances(self, source: int) -> list[float]:
        d = [math.inf] * len(self.nodes)
        d[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > d[u]:
                continue
            for v, w in self.adj[u]:
                nd = du + w
                if nd < d[v]:
                    d[v] = nd
                    heapq.heappush(heap, (nd, v))
        return d

    def _bounded(self, source: int, target: int | None = None, limit: float = math.inf) -> dict[int, float]:
        """Dijkstra that stops once every node within `limit` (or within the
        target's distance, when a target is given) is settled."""
        d = {source: 0.0}
        done = set()
        heap = [(0.0, source)]
        while heap:
            du, u = heapq.heappop(heap)
            if u in done:
                continue
            if du > limit:
                break
            done.add(u)
            if u == target:
                limit = min(limit, du + _TIE_TOL * max(1.0, du))
            for v, w in self.adj[u]:
                nd = du + w
                if nd < d.get(v, math.inf):
                    d[v] = nd
                    heapq.heappush(heap, (nd, v))
        return {u: d[u] for u in done}

    def shortest_path(self, s: int, t: int) -> tuple[list[int], float]:
        """Minimum-weight node path; among equal-cost paths the lexicographically
        smallest index sequence wins."""
        if s == t:
            return [s], 0.0
        ds = self._bounded(s, target=t)
        if t not in ds:
            raise NoRoute(f"nodes {s} and {t} are in different components")
        total = ds[t]
        tol = _TIE_TOL * max(1.0, total)
        dt = self._bounded(t, limit=total + tol)
        inf = math.inf
        path = [s]
        u = s
        while u != t:
            for v, w in self.adj[u]:  # sorted by index
                if abs(ds[u] + w - ds.get(v, inf)) <= tol and abs(ds.get(v, inf) + dt.get(v, inf) - total) <= tol:
                    u = v
                    break
            else:  # pragma: no cover - float drift guard
                raise NoRoute("shortest path reconstruction failed")
            path.append(u)
        return path, total

    # -- dump -----------------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"N {i} {x:.6f} {y:.6f}" for i, (x, y) in enumerate(self.nodes)]
        lines += [f"E {i} {j} {w:.6f}" for i, j, w in self.edges]
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def sample_polyline(points: Sequence[tuple[float, float]], spacing: float = WAYPOINT_SPACING):
    """Points every `spacing` meters of arc length from the start; both ends kept."""
    cum = [0.0]
    for a, b in zip(points, points[1:]):
        cum.append(cum[-1] + dist(a, b))
    total = cum[-1]
    out = []
    k = 0
    n = int(math.floor(total / spacing + 1e-9))
    for m in range(n + 1):
        s = m * spacing
        while k < len(points) - 2 and cum[k + 1] < s:
            k += 1
        seg = cum[k + 1] - cum[k] if len(points) > 1 else 0.0
        f = 0.0 if seg == 0.0 else (s - cum[k]) / seg
        a, b = points[k], points[min(k + 1, len(points) - 1)]
        out.append((a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])))
    last = (float(points[-1][0]), float(points[-1][1]))
    if dist(out[-1], last) > 1e-9:
        out.append(last)
    else:
        out[-1] = last
    return out


def build_waypoint_graph(scene_or_roads) -> WaypointGraph:
    roads = scene_or_roads.road_segments if isinstance(scene_or_roads, SceneSpec) else scene_or_roads
    if not roads:
        raise ValueError("scene has no road segments")
    pts = set()
    for seg in roads:
        for x, y in sample_polyline(seg):
            pts.add((round(x, 6), round(y, 6)))
    nodes = sorted(pts)
    tree = cKDTree(np.array(nodes))
    pairs = sorted(tree.query_pairs(WAYPOINT_SPACING + EPS_GEOM))
    return WaypointGraph.from_edges(nodes, pairs)


# ---------------------------------------------------------------------------
# queries


def _as_pose(p) -> Pose2D:
    return p if isinstance(p, Pose2D) else Pose2D(float(p[0]), float(p[1]))


def query_route(g: WaypointGraph, p1, p2) -> Route:
    p1, p2 = _as_pose(p1), _as_pose(p2)
    if (p1.x, p1.y) == (p2.x, p2.y):
        return Route((Pose2D(p1.x, p1.y),), 0.0)
    s, t = g.nearest(p1), g.nearest(p2)
    path, _ = g.shortest_path(s, t)
    pts = [Pose2D(p1.x, p1.y)] + [g.pose(i) for i in path] + [Pose2D(p2.x, p2.y)]
    return Route.through(pts)


def query_refined_route(g: WaypointGraph, points: Sequence) -> Route:
    if len(points) < 2:
        raise ValueError("need at least two points")
    pts = [_as_pose(p) for p in points]
    snapped = [g.nearest(p) for p in pts]
    nodes: list[int] = [snapped[0]]
    for k, (a, b) in enumerate(zip(snapped, snapped[1:])):
        try:
            path, _ = g.shortest_path(a, b)
        except NoRoute:
            raise NoRoute(f"no route between points {k} and {k + 1}") from None
        nodes.extend(path[1:])
    first, last = pts[0], pts[-1]
    if len(pts) == 2 and (first.x, first.y) == (last.x, last.y):
        return Route((Pose2D(first.x, first.y),), 0.0)
    out = [Pose2D(first.x, first.y)] + [g.pose(i) for i in nodes] + [Pose2D(last.x, last.y)]
    return Route.through(out)


def query_nearby(scene: SceneSpec, g: WaypointGraph | None, p1, radius: float) -> list[Place]:
    if not radius > 0:
        raise ValueError("radius must be > 0")
    p1 = _as_pose(p1)
    hits = [(p.location.dist(p1), p.name, p) for p in scene.places if p.location.dist(p1) <= radius]
    hits.sort(key=lambda h: (h[0], h[1]))
    return [h[2] for h in hits]


@dataclass(frozen=True)
class PlaceInfo:
    name: str
    location: Pose2D
    bounding_box: Rect
    indoor: bool


def strip_brackets(name: str) -> str:
    if len(name) >= 2 and name[0] == "<" and name[-1] == ">":
        return name[1:-1]
    return name


def query_place(scene: SceneSpec, name: str) -> PlaceInfo:
    key = strip_brackets(name)
    if not scene.has_place(key):
        raise UnknownPlace(name)
    p = scene.place(key)
    return PlaceInfo(p.name, p.location, p.bounding_box, p.indoor)


@dataclass(frozen=True)
class MapImage:
    """Binary occupancy image: True = obstacle. A coarse approximation of the scene."""
    grid: np.ndarray
    cell_size: float

    def tobytes(self) -> bytes:
        return self.grid.tobytes()


def query_map(scene: SceneSpec) -> MapImage:
    g = scene.obstacle_grid.copy()
    g.setflags(write=False)
    return MapImage(g, scene.cell_size)


class MapTool:
    """The navigation app: one scene, one waypoint graph, five queries."""

    def __init__(self, scene: SceneSpec, graph: WaypointGraph | None = None):
        self.scene = scene
        self.graph = graph if graph is not None else build_waypoint_graph(scene)

    def route(self, p1, p2) -> Route:
        return query_route(self.graph, p1, p2)

    def nearby(self, p1, radius: float = 50.0) -> list[Place]:
        return query_nearby(self.scene, self.graph, p1, radius)

    def place(self, name: str) -> PlaceInfo:
        return query_place(self.scene, name)

    def map(self) -> MapImage:
        return query_map(self.scene)

    def refined_route(self, points) -> Route:
        return query_refined_route(self.graph, points)

    def answer(self, variant: str, args: tuple):
        try:
            fn = {"route": self.route, "nearby": self.nearby, "place": self.place,
                  "map": self.map, "refined_route": self.refined_route}[variant]
        except KeyError:
            raise ValueError(f"unknown map query {variant!r}") from None
        return fn(*args)
