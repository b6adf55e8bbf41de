"""Small hand-built scenes and independent oracles shared by the tests."""

import heapq
import math

import numpy as np

from rendezvous.geometry import Pose2D, Rect
from rendezvous.scene import STATIONARY, AgentSpec, Place, SceneSpec, SentinelSpec


def box(x, y, half=4.0):
    return Rect(x - half, y - half, x + half, y + half)


def place(name, x, y, indoor=True, half=4.0):
    return Place(name, Pose2D(x, y), box(x, y, half), indoor)


def open_scene(places, agents, sentinels=(), extent=(200.0, 200.0), walls=(), roads=None,
               name="test"):
    """A flat field with optional wall rectangles (cell size 1 m).

    `agents` is a list of (name, initial place) pairs; everybody knows every place.
    """
    w, h = int(extent[0]), int(extent[1])
    grid = np.zeros((h, w), dtype=bool)
    for r in walls:
        grid[int(r.ymin):int(r.ymax), int(r.xmin):int(r.xmax)] = True
    names = frozenset(p.name for p in places)
    specs = tuple(AgentSpec(n, p, names) for n, p in agents)
    if roads is None:
        roads = (((5.0, 5.0), (extent[0] - 5.0, 5.0)),)
    return SceneSpec(name, extent, tuple(roads), grid, 1.0, tuple(places), specs, tuple(sentinels))


def rotator(sid, x, y, heading=0.0, rate=0.314, **kw):
    return SentinelSpec(sid, STATIONARY, Pose2D(x, y, heading), (), rate, **kw)


# ---------------------------------------------------------------------------
# oracles


def floyd_warshall(n, edges):
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0.0)
    for i, j, w in edges:
        if w < d[i, j]:
            d[i, j] = d[j, i] = w
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def uniform_cost(cells, start, goal, mult):
    """Plain Dijkstra over 8-connected cells with the same move rules as the
    planner: entering a cell costs its multiplier (times sqrt 2 diagonally)
    and diagonal moves may not cut a blocked corner."""
    h, w = cells.shape
    blocked = lambda r, c: math.isinf(mult[cells[r, c]])  # noqa: E731
    if blocked(*goal):
        return None
    best = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == goal:
            return d
        if d > best[u]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if not (dr or dc):
                    continue
                r, c = u[0] + dr, u[1] + dc
                if not (0 <= r < h and 0 <= c < w) or blocked(r, c):
                    continue
                if dr and dc and (blocked(u[0], c) or blocked(r, u[1])):
                    continue
                nd = d + mult[cells[r, c]] * (math.sqrt(2) if dr and dc else 1.0)
                if nd < best.get((r, c), math.inf):
                    best[(r, c)] = nd
                    heapq.heappush(heap, (nd, (r, c)))
    return None


def brute_min_max(table):
    """Min-max over rows with every entry present and numeric; ties by name."""
    best = None
    for p in sorted(table):
        vals = list(table[p].values())
        if any(v is None or v == "Impossible" for v in vals):
            continue
        worst = max(vals)
        if best is None or worst < best[1]:
            best = (p, worst)
    return best
