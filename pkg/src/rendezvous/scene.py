"""Scene data model, synthetic grid-city generation and scene file I/O."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import Pose2D, Rect, dist

log = logging.getLogger(__name__)

STATIONARY = "stationary"
PATROLLING = "patrolling"
SENTINEL_KINDS = (STATIONARY, PATROLLING)

MAX_AGENTS = 15
MAX_SENTINELS = 20
MIN_PLACES = 50
MAX_PLACES = 150

CENTER_SENTINELS = 5
CENTER_RADIUS = 60.0
# keeps freshly placed sentinels from sitting on an agent's doorstep
SPAWN_CLEARANCE = 15.0

DEFAULT_AGENT_SPEED = 1.0
DEFAULT_PATROL_SPEED = 1.0
DEFAULT_ANGULAR_RATE = 0.314
DEFAULT_FOV_HALF_ANGLE = math.pi / 4
DEFAULT_VIEW_RANGE = 100.0
PLACE_SIZE = 8.0

AGENT_NAMES = (
    "Adam", "Brycer", "Kate", "Alex", "Ethan", "Maya", "Lena", "Omar",
    "Priya", "Jonas", "Sofia", "Tariq", "Wen", "Ines", "Rafael",
)
_ADJECTIVES = (
    "Cedar", "Maple", "Harbor", "Granite", "Willow", "Summit", "Copper",
    "Juniper", "Aspen", "Pioneer", "Union", "Larimer", "Sterling", "Bluebird",
    "Riverside", "Crescent", "Highland", "Lantern", "Marble", "Orchard",
)
_INDOOR_NOUNS = (
    "Museum", "Hotel", "Library", "Cafe", "Gallery", "Bakery", "Theater",
    "Bookstore", "Pharmacy", "Clinic", "Bistro", "Studio", "Firehouse",
)
_OUTDOOR_NOUNS = (
    "Park", "Plaza", "Square", "Fountain", "Garden", "Corner", "Court",
    "Green", "Memorial", "Pavilion", "Market", "Overlook",
)


class SceneError(Exception):
    """Base class for scene problems."""


class GenerationError(SceneError):
    pass


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


@dataclass(frozen=True)
class Place:
    name: str
    location: Pose2D
    bounding_box: Rect
    indoor: bool


@dataclass(frozen=True)
class AgentSpec:
    name: str
    initial_place: str
    known_places: frozenset[str]
    speed: float = DEFAULT_AGENT_SPEED


@dataclass(frozen=True)
class SentinelSpec:
    id: int
    kind: str
    initial_pose: Pose2D
    patrol_route: tuple[Pose2D, ...] = ()
    angular_rate: float = DEFAULT_ANGULAR_RATE
    speed: float = DEFAULT_PATROL_SPEED
    fov_half_angle: float = DEFAULT_FOV_HALF_ANGLE
    view_range: float = DEFAULT_VIEW_RANGE


@dataclass(eq=False)
class SceneSpec:
    name: str
    extent: tuple[float, float]
    road_segments: tuple[tuple[tuple[float, float], ...], ...]
    obstacle_grid: np.ndarray  # bool, row = y, col = x
    cell_size: float
    places: tuple[Place, ...]
    agents: tuple[AgentSpec, ...]
    sentinels: tuple[SentinelSpec, ...]
    seed: int = 0
    _place_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.obstacle_grid = np.asarray(self.obstacle_grid, dtype=bool)
        self.obstacle_grid.setflags(write=False)
        self._place_index = {p.name: p for p in self.places}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneSpec):
            return NotImplemented
        return scene_to_dict(self) == scene_to_dict(other)

    def place(self, name: str) -> Place:
        return self._place_index[name]

    def has_place(self, name: str) -> bool:
        return name in self._place_index

    @property
    def place_names(self) -> list[str]:
        return [p.name for p in self.places]

    def indoor_place_at(self, x: float, y: float) -> Place | None:
        for p in self.places:
            if p.indoor and p.bounding_box.contains(x, y):
                return p
        return None

    def with_roster(self, n_agents: int | None = None, n_sentinels: int | None = None) -> "SceneSpec":
        """Copy with the first n agents / sentinels active."""
        agents = self.agents if n_agents is None else self.agents[:n_agents]
        sentinels = self.sentinels if n_sentinels is None else self.sentinels[:n_sentinels]
        return SceneSpec(
            self.name, self.extent, self.road_segments, self.obstacle_grid,
            self.cell_size, self.places, agents, sentinels, self.seed,
        )


@dataclass(frozen=True)
class Profile:
    blocks_x: int = 11
    blocks_y: int = 11
    block_size_m: float = 70.0
    n_places: int = 100
    n_agents: int = 5
    n_sentinels: int = 10
    sentinel_kind: str = STATIONARY
    street_half_width: float = 5.0
    border: float = 15.0
    cell_size: float = 1.0


PROFILES = {
    # ~800 m x 800 m
    "standard": Profile(),
    "small": Profile(blocks_x=2, blocks_y=2, n_places=50, n_agents=3, n_sentinels=5),
    "bench": Profile(blocks_x=5, blocks_y=5, n_places=80, n_agents=5, n_sentinels=10),
}


# ---------------------------------------------------------------------------
# generation


def _street_lines(profile: Profile) -> tuple[list[float], list[float]]:
    xs = [profile.border + i * profile.block_size_m for i in range(profile.blocks_x + 1)]
    ys = [profile.border + j * profile.block_size_m for j in range(profile.blocks_y + 1)]
    return xs, ys


def scene_extent(profile: Profile) -> tuple[float, float]:
    return (
        2 * profile.border + profile.blocks_x * profile.block_size_m,
        2 * profile.border + profile.blocks_y * profile.block_size_m,
    )


def building_footprints(profile: Profile) -> list[Rect]:
    """Block interiors, one building per block."""
    xs, ys = _street_lines(profile)
    hw = profile.street_half_width
    out = []
    for j in range(profile.blocks_y):
        for i in range(profile.blocks_x):
            out.append(Rect(xs[i] + hw, ys[j] + hw, xs[i + 1] - hw, ys[j + 1] - hw))
    return out


def _indoor_slots(profile: Profile) -> list[Rect]:
    """Alcoves cut into building facades, opening onto the street."""
    s = PLACE_SIZE
    slots = []
    for b in building_footprints(profile):
        length = b.xmax - b.xmin
        offsets = []
        o = 10.0
        while o + s <= length - 10.0:
            offsets.append(o)
            o += 14.0
        for o in offsets:
            slots.append(Rect(b.xmin + o, b.ymin, b.xmin + o + s, b.ymin + s))  # south
            slots.append(Rect(b.xmin + o, b.ymax - s, b.xmin + o + s, b.ymax))  # north
            slots.append(Rect(b.xmin, b.ymin + o, b.xmin + s, b.ymin + o + s))  # west
            slots.append(Rect(b.xmax - s, b.ymin + o, b.xmax, b.ymin + o + s))  # east
    return slots


def _road_segments(profile: Profile) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    xs, ys = _street_lines(profile)
    segs = []
    for y in ys:
        for i in range(len(xs) - 1):
            segs.append(((xs[i], y), (xs[i + 1], y)))
    for x in xs:
        for j in range(len(ys) - 1):
            segs.append(((x, ys[j]), (x, ys[j + 1])))
    return segs


def _outdoor_slots(profile: Profile) -> list[Rect]:
    h = PLACE_SIZE / 2
    slots = []
    for a, b in _road_segments(profile):
        length = dist(a, b)
        t = 14.0
        while t <= length - 14.0 + 1e-9:
            f = t / length
            cx = a[0] + f * (b[0] - a[0])
            cy = a[1] + f * (b[1] - a[1])
            slots.append(Rect(cx - h, cy - h, cx + h, cy + h))
            t += 14.0
    return slots


def rasterize(extent: tuple[float, float], cell_size: float, obstacles: Iterable[Rect],
              holes: Iterable[Rect] = ()) -> np.ndarray:
    """Boolean grid; a cell is occupied if it intersects an obstacle and no hole covers it."""
    w = int(math.ceil(extent[0] / cell_size - 1e-9))
    h = int(math.ceil(extent[1] / cell_size - 1e-9))
    grid = np.zeros((h, w), dtype=bool)
    for r in obstacles:
        c0 = max(0, int(math.floor(r.xmin / cell_size + 1e-9)))
        c1 = min(w, int(math.ceil(r.xmax / cell_size - 1e-9)))
        r0 = max(0, int(math.floor(r.ymin / cell_size + 1e-9)))
        r1 = min(h, int(math.ceil(r.ymax / cell_size - 1e-9)))
        grid[r0:r1, c0:c1] = True
    for r in holes:
        # only cells fully inside the hole are cleared
        c0 = max(0, int(math.ceil(r.xmin / cell_size - 1e-9)))
        c1 = min(w, int(math.floor(r.xmax / cell_size + 1e-9)))
        r0 = max(0, int(math.ceil(r.ymin / cell_size - 1e-9)))
        r1 = min(h, int(math.floor(r.ymax / cell_size + 1e-9)))
        grid[r0:r1, c0:c1] = False
    return grid


def _unique_names(rng: random.Random, nouns: tuple[str, ...], n: int, taken: set[str]) -> list[str]:
    combos = [f"{a} {b}" for a in _ADJECTIVES for b in nouns]
    rng.shuffle(combos)
    out = []
    k = 0
    while len(out) < n:
        base = combos[k % len(combos)]
        name = base if k < len(combos) else f"{base} {k // len(combos) + 1}"
        k += 1
        if name not in taken:
            taken.add(name)
            out.append(name)
    return out


def _road_points(segments, spacing: float = 1.0) -> list[tuple[float, float]]:
    seen = set()
    pts = []
    for a, b in segments:
        length = dist(a, b)
        n = int(round(length / spacing))
        for k in range(n + 1):
            f = k / n if n else 0.0
            p = (round(a[0] + f * (b[0] - a[0]), 6), round(a[1] + f * (b[1] - a[1]), 6))
            if p not in seen:
                seen.add(p)
                pts.append(p)
    return pts


def _block_loop(profile: Profile, p: tuple[float, float], seg) -> tuple[Pose2D, ...]:
    """Patrol loop around a block adjacent to segment seg, starting at p."""
    xs, ys = _street_lines(profile)
    (ax, ay), (bx, by) = seg
    if ay == by:  # horizontal
        i = xs.index(min(ax, bx))
        j = ys.index(ay)
        jb = j if j < profile.blocks_y else j - 1
        x0, x1, y0, y1 = xs[i], xs[i + 1], ys[jb], ys[jb + 1]
    else:
        j = ys.index(min(ay, by))
        i = xs.index(ax)
        ib = i if i < profile.blocks_x else i - 1
        x0, x1, y0, y1 = xs[ib], xs[ib + 1], ys[j], ys[j + 1]
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    # counter-clockwise loop; find the edge holding p and start after it
    for k in range(4):
        c0, c1 = corners[k], corners[(k + 1) % 4]
        on_x = c0[1] == c1[1] == p[1] and min(c0[0], c1[0]) <= p[0] <= max(c0[0], c1[0])
        on_y = c0[0] == c1[0] == p[0] and min(c0[1], c1[1]) <= p[1] <= max(c0[1], c1[1])
        if on_x or on_y:
            order = [corners[(k + 1 + m) % 4] for m in range(4)]
            pts = [p] + [c for c in order if c != p]
            return tuple(Pose2D(x, y) for x, y in pts)
    raise GenerationError("patrol start not on block loop")


def generate_scene(profile: Profile, seed: int, name: str | None = None) -> SceneSpec:
    """Build a reproducible synthetic grid city for (profile, seed)."""
    if profile.blocks_x < 2 or profile.blocks_y < 2:
        raise GenerationError("blocks_x and blocks_y must be >= 2")
    if not MIN_PLACES <= profile.n_places <= MAX_PLACES:
        raise GenerationError(f"n_places must be in [{MIN_PLACES}, {MAX_PLACES}]")
    if not 1 <= profile.n_agents <= MAX_AGENTS:
        raise GenerationError(f"n_agents must be in [1, {MAX_AGENTS}]")
    if not 0 <= profile.n_sentinels <= MAX_SENTINELS:
        raise GenerationError(f"n_sentinels must be in [0, {MAX_SENTINELS}]")
    if profile.sentinel_kind not in SENTINEL_KINDS:
        raise GenerationError(f"unknown sentinel kind {profile.sentinel_kind!r}")

    rng = random.Random(seed)
    extent = scene_extent(profile)
    segments = _road_segments(profile)

    indoor_slots = _indoor_slots(profile)
    outdoor_slots = _outdoor_slots(profile)
    total_slots = len(indoor_slots) + len(outdoor_slots)
    if profile.n_places > total_slots:
        raise GenerationError(
            f"n_places={profile.n_places} exceeds the {total_slots} place slots of a "
            f"{profile.blocks_x}x{profile.blocks_y} block road network"
        )
    n_in = max(profile.n_agents, profile.n_places // 2)
    n_in = min(n_in, len(indoor_slots))
    n_out = profile.n_places - n_in
    if n_out > len(outdoor_slots):
        n_out = len(outdoor_slots)
        n_in = profile.n_places - n_out
    if n_in < profile.n_agents:
        raise GenerationError("not enough indoor places for the agent roster")

    chosen_in = rng.sample(indoor_slots, n_in)
    chosen_out = rng.sample(outdoor_slots, n_out)
    taken: set[str] = set()
    in_names = _unique_names(rng, _INDOOR_NOUNS, n_in, taken)
    out_names = _unique_names(rng, _OUTDOOR_NOUNS, n_out, taken)
    places = []
    for nm, r in zip(in_names, chosen_in):
        places.append(Place(nm, Pose2D(*r.center), r, True))
    for nm, r in zip(out_names, chosen_out):
        places.append(Place(nm, Pose2D(*r.center), r, False))
    places.sort(key=lambda p: p.name)

    grid = rasterize(extent, profile.cell_size, building_footprints(profile), chosen_in)

    indoor = [p for p in places if p.indoor]
    starts = rng.sample(indoor, profile.n_agents)
    all_names = [p.name for p in places]
    agents = []
    for k, start in enumerate(starts):
        known = {start.name}
        known.update(rng.sample(all_names, max(1, len(all_names) // 4)))
        agents.append(AgentSpec(AGENT_NAMES[k], start.name, frozenset(known), DEFAULT_AGENT_SPEED))

    sentinels = _place_sentinels(profile, rng, segments, [s.location for s in starts])

    return SceneSpec(
        name=name or f"grid{profile.blocks_x}x{profile.blocks_y}-s{seed}",
        extent=extent,
        road_segments=tuple((a, b) for a, b in segments),
        obstacle_grid=grid,
        cell_size=profile.cell_size,
        places=tuple(places),
        agents=tuple(agents),
        sentinels=tuple(sentinels),
        seed=seed,
    )


def _place_sentinels(profile: Profile, rng: random.Random, segments, starts: list[Pose2D]) -> list[SentinelSpec]:
    if profile.n_sentinels == 0:
        return []
    cx = sum(p.x for p in starts) / len(starts)
    cy = sum(p.y for p in starts) / len(starts)
    seg_of = {}
    for seg in segments:
        for p in _road_points([seg]):
            seg_of.setdefault(p, seg)
    points = list(seg_of)

    def clear(p):
        return all(dist(p, (s.x, s.y)) >= SPAWN_CLEARANCE for s in starts)

    near = [p for p in points if dist(p, (cx, cy)) <= CENTER_RADIUS - 1e-6]
    near_ok = [p for p in near if clear(p)] or near
    if not near_ok:
        raise GenerationError("no road point within the center radius of the agents")
    far_ok = [p for p in points if clear(p)] or points

    used: set = set()
    out = []
    for k in range(profile.n_sentinels):
        pool = near_ok if k < CENTER_SENTINELS else far_ok
        choices = [p for p in pool if p not in used] or pool
        p = rng.choice(choices)
        used.add(p)
        if profile.sentinel_kind == STATIONARY:
            out.append(SentinelSpec(
                id=k, kind=STATIONARY,
                initial_pose=Pose2D(p[0], p[1], rng.uniform(0.0, 2 * math.pi)),
                angular_rate=DEFAULT_ANGULAR_RATE, speed=0.0,
            ))
        else:
            route = _block_loop(profile, p, seg_of[p])
            nxt = route[1]
            heading = math.atan2(nxt.y - p[1], nxt.x - p[0])
            out.append(SentinelSpec(
                id=k, kind=PATROLLING,
                initial_pose=Pose2D(p[0], p[1], heading),
                patrol_route=route, angular_rate=0.0, speed=DEFAULT_PATROL_SPEED,
            ))
    return out


# ---------------------------------------------------------------------------
# validation


def _sample_segment(a, b, step: float = 0.5):
    n = max(1, int(math.ceil(dist(a, b) / step)))
    for k in range(n + 1):
        f = k / n
        yield (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))


def _free_at(scene: SceneSpec, x: float, y: float) -> bool:
    c = int(math.floor(x / scene.cell_size))
    r = int(math.floor(y / scene.cell_size))
    h, w = scene.obstacle_grid.shape
    if not (0 <= r < h and 0 <= c < w):
        return False
    return not scene.obstacle_grid[r, c]


def validate_scene(scene: SceneSpec) -> list[Violation]:
    """Every broken invariant, as (entity, rule) pairs. Empty means valid."""
    v: list[Violation] = []
    n = len(scene.places)
    if not MIN_PLACES <= n <= MAX_PLACES:
        v.append(Violation("scene", f"place count {n} must be in [{MIN_PLACES}, {MAX_PLACES}]"))
    if len(scene.agents) > MAX_AGENTS:
        v.append(Violation("scene", f"at most {MAX_AGENTS} agents"))
    if len(scene.sentinels) > MAX_SENTINELS:
        v.append(Violation("scene", f"at most {MAX_SENTINELS} sentinels"))

    seen: set[str] = set()
    for p in scene.places:
        ent = f"place {p.name!r}"
        if p.name in seen:
            v.append(Violation(ent, "place names must be unique"))
        seen.add(p.name)
        if p.bounding_box.area <= 0:
            v.append(Violation(ent, "bounding_box area must be > 0"))
        if not p.bounding_box.contains(p.location.x, p.location.y):
            v.append(Violation(ent, "location must lie inside bounding_box"))

    names = {p.name for p in scene.places}
    seen_agents: set[str] = set()
    for a in scene.agents:
        ent = f"agent {a.name!r}"
        if a.name in seen_agents:
            v.append(Violation(ent, "agent names must be unique"))
        seen_agents.add(a.name)
        if a.initial_place not in names:
            v.append(Violation(ent, "initial_place must exist"))
        elif not scene.place(a.initial_place).indoor:
            v.append(Violation(ent, "initial_place must be indoor"))
        missing = sorted(set(a.known_places) - names)
        if missing:
            v.append(Violation(ent, f"known_places not in scene: {missing}"))
        if not a.speed > 0:
            v.append(Violation(ent, "speed must be > 0"))

    for s in scene.sentinels:
        ent = f"sentinel {s.id}"
        if s.kind not in SENTINEL_KINDS:
            v.append(Violation(ent, f"kind must be one of {SENTINEL_KINDS}"))
        if s.kind == STATIONARY:
            if s.patrol_route:
                v.append(Violation(ent, "stationary sentinel must have an empty patrol_route"))
            if not s.angular_rate > 0:
                v.append(Violation(ent, "stationary sentinel angular_rate must be > 0"))
        elif s.kind == PATROLLING:
            if len(s.patrol_route) < 2:
                v.append(Violation(ent, "patrol_route length ≥ 2"))
            if not s.speed > 0:
                v.append(Violation(ent, "patrolling sentinel speed must be > 0"))
        if not 0 < s.fov_half_angle < math.pi:
            v.append(Violation(ent, "fov_half_angle must be in (0, pi)"))
        if not s.view_range > 0:
            v.append(Violation(ent, "view_range must be > 0"))
        for q in (s.initial_pose, *s.patrol_route):
            if scene.indoor_place_at(q.x, q.y) is not None or not _free_at(scene, q.x, q.y):
                v.append(Violation(ent, f"sentinel point ({q.x:.2f}, {q.y:.2f}) must be outdoors on a free cell"))
                break

    for k, seg in enumerate(scene.road_segments):
        for a, b in zip(seg, seg[1:]):
            if not all(_free_at(scene, x, y) for x, y in _sample_segment(a, b)):
                v.append(Violation(f"road {k}", "road segment must lie in free cells"))
                break
    return v


def scene_warnings(scene: SceneSpec) -> list[str]:
    """Non-fatal oddities: overlapping places."""
    out = []
    ps = scene.places
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            if ps[i].bounding_box.overlaps(ps[j].bounding_box):
                out.append(f"places {ps[i].name!r} and {ps[j].name!r} overlap")
    return out


# ---------------------------------------------------------------------------
# serialization


def _pose_list(p: Pose2D) -> list[float]:
    return [p.x, p.y] if p.heading is None else [p.x, p.y, p.heading]


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "name": scene.name,
        "extent": list(scene.extent),
        "roads": [[list(pt) for pt in seg] for seg in scene.road_segments],
        "obstacle_grid": {
            "cell_size": scene.cell_size,
            "rows": ["".join("#" if c else "." for c in row) for row in scene.obstacle_grid],
        },
        "places": [
            {
                "name": p.name,
                "location": [p.location.x, p.location.y],
                "bounding_box": p.bounding_box.as_list(),
                "indoor": p.indoor,
            }
            for p in scene.places
        ],
        "agents": [
            {
                "name": a.name,
                "initial_place": a.initial_place,
                "known_places": sorted(a.known_places),
                "speed": a.speed,
            }
            for a in scene.agents
        ],
        "sentinels": [
            {
                "id": s.id,
                "kind": s.kind,
                "initial_pose": _pose_list(s.initial_pose),
                "patrol_route": [_pose_list(q) for q in s.patrol_route],
                "angular_rate": s.angular_rate,
                "speed": s.speed,
                "fov_half_angle": s.fov_half_angle,
                "view_range": s.view_range,
            }
            for s in scene.sentinels
        ],
        "seed": scene.seed,
    }


def dumps_scene(scene: SceneSpec) -> str:
    return json.dumps(scene_to_dict(scene), indent=1) + "\n"


def _get(d: dict, key: str, path: str):
    if not isinstance(d, dict) or key not in d:
        raise SceneParseError(f"missing field '{path}{key}'")
    return d[key]


def _pose(v, path: str) -> Pose2D:
    if not isinstance(v, list) or len(v) not in (2, 3):
        raise SceneParseError(f"field '{path}' must be [x, y] or [x, y, heading]")
    try:
        return Pose2D(*(float(c) for c in v))
    except (TypeError, ValueError) as e:
        raise SceneParseError(f"field '{path}': {e}") from None


def scene_from_dict(d: dict) -> SceneSpec:
    grid_d = _get(d, "obstacle_grid", "")
    rows = _get(grid_d, "rows", "obstacle_grid.")
    cell_size = float(_get(grid_d, "cell_size", "obstacle_grid."))
    if rows and len({len(r) for r in rows}) != 1:
        raise SceneParseError("field 'obstacle_grid.rows': rows must have equal length")
    for k, r in enumerate(rows):
        bad = set(r) - {".", "#"}
        if bad:
            raise SceneParseError(f"field 'obstacle_grid.rows[{k}]': unexpected characters {sorted(bad)}")
    grid = np.array([[c == "#" for c in r] for r in rows], dtype=bool).reshape(len(rows), -1)

    places = []
    for k, p in enumerate(_get(d, "places", "")):
        pre = f"places[{k}]."
        bb = _get(p, "bounding_box", pre)
        if not isinstance(bb, list) or len(bb) != 4:
            raise SceneParseError(f"field '{pre}bounding_box' must be [xmin, ymin, xmax, ymax]")
        places.append(Place(
            str(_get(p, "name", pre)),
            _pose(_get(p, "location", pre), pre + "location"),
            Rect(*(float(c) for c in bb)),
            bool(_get(p, "indoor", pre)),
        ))
    agents = []
    for k, a in enumerate(_get(d, "agents", "")):
        pre = f"agents[{k}]."
        agents.append(AgentSpec(
            str(_get(a, "name", pre)),
            str(_get(a, "initial_place", pre)),
            frozenset(_get(a, "known_places", pre)),
            float(a.get("speed", DEFAULT_AGENT_SPEED)),
        ))
    sentinels = []
    for k, s in enumerate(_get(d, "sentinels", "")):
        pre = f"sentinels[{k}]."
        sentinels.append(SentinelSpec(
            id=int(_get(s, "id", pre)),
            kind=str(_get(s, "kind", pre)),
            initial_pose=_pose(_get(s, "initial_pose", pre), pre + "initial_pose"),
            patrol_route=tuple(_pose(q, f"{pre}patrol_route[{i}]") for i, q in enumerate(s.get("patrol_route", []))),
            angular_rate=float(s.get("angular_rate", DEFAULT_ANGULAR_RATE)),
            speed=float(s.get("speed", DEFAULT_PATROL_SPEED)),
            fov_half_angle=float(s.get("fov_half_angle", DEFAULT_FOV_HALF_ANGLE)),
            view_range=float(s.get("view_range", DEFAULT_VIEW_RANGE)),
        ))
    roads = tuple(
        tuple((float(pt[0]), float(pt[1])) for pt in seg) for seg in _get(d, "roads", "")
    )
    extent = _get(d, "extent", "")
    return SceneSpec(
        name=str(_get(d, "name", "")),
        extent=(float(extent[0]), float(extent[1])),
        road_segments=roads,
        obstacle_grid=grid,
        cell_size=cell_size,
        places=tuple(places),
        agents=tuple(agents),
        sentinels=tuple(sentinels),
        seed=int(d.get("seed", 0)),
    )


def loads_scene(text: str, validate: bool = True) -> SceneSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    scene = scene_from_dict(d)
    if validate:
        violations = validate_scene(scene)
        if violations:
            raise SceneValidationError(violations)
        for w in scene_warnings(scene):
            log.warning(w)
    return scene


def save_scene(scene: SceneSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path: str | Path, validate: bool = True) -> SceneSpec:
    return loads_scene(Path(path).read_text(), validate=validate)
