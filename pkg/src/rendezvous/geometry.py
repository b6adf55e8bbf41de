"""Small planar geometry helpers shared by the simulator and the agents."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod can return exactly 2*pi after the correction for tiny negatives
    if t >= TWO_PI:
        t = 0.0
    return t


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a - b, in (-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d <= -math.pi:
        d += TWO_PI
    return d


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y})")
        if self.heading is not None:
            if not math.isfinite(self.heading):
                raise ValueError("non-finite heading")
            object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def dist(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def with_heading(self, heading: float | None) -> "Pose2D":
        return Pose2D(self.x, self.y, heading)


def dist(p: tuple[float, float], q: tuple[float, float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def point_segment_distance(p, a, b) -> float:
    """Minimum distance from point p to the closed segment a-b."""
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def area(self) -> float:
        return max(0.0, self.xmax - self.xmin) * max(0.0, self.ymax - self.ymin)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def overlaps(self, other: "Rect") -> bool:
        """True when the interiors intersect (shared edges do not count)."""
        return (
            self.xmin < other.xmax
            and other.xmin < self.xmax
            and self.ymin < other.ymax
            and other.ymin < self.ymax
        )

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


def segment_blocked(grid: np.ndarray, cell_size: float, p, q, origin=(0.0, 0.0)) -> bool:
    """Ray cast p -> q over a boolean obstacle grid (row = y, col = x).

    Samples the segment at a quarter-cell spacing; a sample outside the grid
    counts as blocked. Endpoint cells are included.
    """
    x0 = (p[0] - origin[0]) / cell_size
    y0 = (p[1] - origin[1]) / cell_size
    x1 = (q[0] - origin[0]) / cell_size
    y1 = (q[1] - origin[1]) / cell_size
    n = int(max(abs(x1 - x0), abs(y1 - y0)) * 4.0) + 2
    t = np.linspace(0.0, 1.0, n)
    cols = np.floor(x0 + (x1 - x0) * t).astype(np.int64)
    rows = np.floor(y0 + (y1 - y0) * t).astype(np.int64)
    h, w = grid.shape
    if cols.min() < 0 or rows.min() < 0 or cols.max() >= w or rows.max() >= h:
        return True
    return bool(grid[rows, cols].any())
