"""Uniform grids, walking domains and the geometric queries used by perception.

Arrays on a :class:`Grid` are indexed ``[i, j]`` with ``i`` running along x1
and ``j`` along x2.  A 1D domain is a grid with ``n2 == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EDGES = ("left", "right", "bottom", "top")
SEGMENT_KINDS = ("wall", "inlet", "exit")

# neighbour classification codes used by the transport kernels
FREE = 0
OBSTACLE = 1
WALL = 2
INLET = 3
EXIT_BASE = 4

# direction order for per-cell neighbour tables: +x, -x, +y, -y
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n1: int
    n2: int
    dx: float

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise GeometryError(f"grid needs at least one cell per axis, got {self.n1}x{self.n2}")
        if not self.dx > 0:
            raise GeometryError(f"grid spacing must be positive, got {self.dx}")

    @classmethod
    def line(cls, n: int, length: float = 1.0) -> "Grid":
        return cls(n, 1, length / n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def is_1d(self) -> bool:
        return self.n2 == 1

    @property
    def length1(self) -> float:
        return self.n1 * self.dx

    @property
    def length2(self) -> float:
        return self.n2 * self.dx

    @property
    def cell_measure(self) -> float:
        """Length of a cell in 1D, area in 2D."""
        return self.dx if self.is_1d else self.dx * self.dx

    @property
    def x1(self) -> np.ndarray:
        return (np.arange(self.n1) + 0.5) * self.dx

    @property
    def x2(self) -> np.ndarray:
        return (np.arange(self.n2) + 0.5) * self.dx

    def centres(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate arrays of shape ``(n1, n2)``."""
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def centre(self, i: int, j: int = 0) -> np.ndarray:
        return np.array([(i + 0.5) * self.dx, (j + 0.5) * self.dx])

    def locate(self, point: Sequence[float]) -> tuple[int, int]:
        """Index of the cell containing ``point`` (no bounds check)."""
        return (int(math.floor(point[0] / self.dx)), int(math.floor(point[1] / self.dx)))

    def contains(self, point: Sequence[float]) -> bool:
        return 0.0 <= point[0] <= self.length1 and 0.0 <= point[1] <= self.length2


@dataclass(frozen=True)
class BoundarySegment:
    """Interval ``[start, end]`` of an outer edge, measured along that edge."""

    kind: str
    edge: str
    start: float
    end: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise GeometryError(f"segment kind must be one of {SEGMENT_KINDS}, got {self.kind!r}")
        if self.edge not in EDGES:
            raise GeometryError(f"segment edge must be one of {EDGES}, got {self.edge!r}")
        if not self.end > self.start:
            raise GeometryError(f"segment {self.name or self.edge!r} has end <= start")

    def cells(self, grid: Grid) -> list[tuple[int, int]]:
        """Boundary cells whose outer face lies on this segment."""
        eps = 1e-9 * grid.dx
        if self.edge in ("left", "right"):
            i = 0 if self.edge == "left" else grid.n1 - 1
            js = [j for j, c in enumerate(grid.x2) if self.start - eps <= c <= self.end + eps]
            return [(i, j) for j in js]
        j = 0 if self.edge == "bottom" else grid.n2 - 1
        iis = [i for i, c in enumerate(grid.x1) if self.start - eps <= c <= self.end + eps]
        return [(i, j) for i in iis]


@dataclass
class WalkingDomain:
    grid: Grid
    obstacle: np.ndarray
    segments: list[BoundarySegment] = field(default_factory=list)
    require_exit: bool = True

    def __post_init__(self):
        self.obstacle = np.asarray(self.obstacle, dtype=bool)
        if self.obstacle.shape != self.grid.shape:
            raise GeometryError(f"obstacle mask shape {self.obstacle.shape} != grid {self.grid.shape}")
        seen: dict[tuple[str, int, int], str] = {}
        for seg in self.segments:
            cells = seg.cells(self.grid)
            if not cells:
                raise GeometryError(f"segment {seg.name or seg.edge!r} covers no boundary cell")
            for c in cells:
                key = (seg.edge, *c)
                if key in seen:
                    raise GeometryError(
                        f"boundary segments {seen[key]!r} and {seg.name or seg.kind!r} overlap on the {seg.edge} edge"
                    )
                seen[key] = seg.name or seg.kind
        if self.require_exit and not self.exits:
            raise GeometryError("walking domain needs at least one exit segment")
        self._edge_kind: np.ndarray | None = None

    @classmethod
    def from_rectangles(
        cls,
        grid: Grid,
        obstacles: Iterable[Sequence[float]] = (),
        segments: Iterable[BoundarySegment] = (),
        require_exit: bool = True,
    ) -> "WalkingDomain":
        """Rasterise axis-aligned ``(x1_min, x1_max, x2_min, x2_max)`` blocks.

        A cell belongs to a block when its centre lies inside it, so blocks
        should be aligned to grid lines to avoid surprises.
        """
        X1, X2 = grid.centres()
        mask = np.zeros(grid.shape, dtype=bool)
        for a, b, c, d in obstacles:
            mask |= (X1 > a) & (X1 < b) & (X2 > c) & (X2 < d)
        return cls(grid, mask, list(segments), require_exit=require_exit)

    @classmethod
    def interval(cls, n: int, length: float = 1.0) -> "WalkingDomain":
        """1D walkway with an inlet at x=0 and an exit at x=L."""
        grid = Grid.line(n, length)
        segs = [
            BoundarySegment("inlet", "left", 0.0, grid.length2, "inlet"),
            BoundarySegment("exit", "right", 0.0, grid.length2, "exit"),
        ]
        return cls(grid, np.zeros(grid.shape, dtype=bool), segs)

    @property
    def free(self) -> np.ndarray:
        return ~self.obstacle

    @property
    def exits(self) -> list[BoundarySegment]:
        return [s for s in self.segments if s.kind == "exit"]

    @property
    def inlets(self) -> list[BoundarySegment]:
        return [s for s in self.segments if s.kind == "inlet"]

    def segment_mask(self, kind: str) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        for seg in self.segments:
            if seg.kind == kind:
                for i, j in seg.cells(self.grid):
                    mask[i, j] = True
        return mask & self.free

    def edge_kind(self) -> np.ndarray:
        """Classification of the four neighbours of every cell.

        Shape ``(n1, n2, 4)`` in :data:`DIRECTIONS` order.  Outer faces not
        covered by a segment are walls; exit faces carry ``EXIT_BASE + k``
        where ``k`` indexes :attr:`exits`.
        """
        if self._edge_kind is not None:
            return self._edge_kind
        g = self.grid
        out = np.full((g.n1, g.n2, 4), FREE, dtype=np.int64)
        for d, (di, dj) in enumerate(DIRECTIONS):
            for i in range(g.n1):
                for j in range(g.n2):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < g.n1 and 0 <= jj < g.n2:
                        out[i, j, d] = OBSTACLE if self.obstacle[ii, jj] else FREE
                    else:
                        out[i, j, d] = WALL
        edge_dir = {"right": 0, "left": 1, "top": 2, "bottom": 3}
        exit_index = {id(s): k for k, s in enumerate(self.exits)}
        for seg in self.segments:
            code = {"wall": WALL, "inlet": INLET}.get(seg.kind)
            if code is None:
                code = EXIT_BASE + exit_index[id(seg)]
            for i, j in seg.cells(g):
                out[i, j, edge_dir[seg.edge]] = code
        self._edge_kind = out
        return out

    def check_query(self, point: Sequence[float]) -> tuple[int, int]:
        i, j = self.grid.locate(point)
        if not (0 <= i < self.grid.n1 and 0 <= j < self.grid.n2):
            raise GeometryError("query point outside the walking domain")
        if self.obstacle[i, j]:
            raise GeometryError("query inside obstacle")
        return i, j


def _blocked(domain: WalkingDomain, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    g = domain.grid
    outside = (p1 < 0.0) | (p1 > g.length1) | (p2 < 0.0) | (p2 > g.length2)
    i = np.clip(np.floor(p1 / g.dx).astype(np.int64), 0, g.n1 - 1)
    j = np.clip(np.floor(p2 / g.dx).astype(np.int64), 0, g.n2 - 1)
    return outside | domain.obstacle[i, j]


def ray_depth_many(
    domain: WalkingDomain, points: np.ndarray, directions: np.ndarray, step: float | None = None
) -> np.ndarray:
    """Free distance along each direction, marched at ``step`` (default dx/4).

    The first blocked sample is assumed to lie half a step past the true
    crossing, so the error is at most ``step / 2``.  Results are clamped to the
    domain diagonal.
    """
    g = domain.grid
    h = g.dx / 4.0 if step is None else step
    diag = math.hypot(g.length1, g.length2)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    depth = np.full(len(pts), diag)
    active = np.ones(len(pts), dtype=bool)
    n_steps = int(math.ceil(diag / h)) + 1
    for k in range(1, n_steps + 1):
        if not active.any():
            break
        s = k * h
        idx = np.flatnonzero(active)
        hit = _blocked(domain, pts[idx, 0] + s * dirs[idx, 0], pts[idx, 1] + s * dirs[idx, 1])
        if hit.any():
            done = idx[hit]
            depth[done] = np.minimum(s - 0.5 * h, diag)
            active[done] = False
    return depth


def ray_depth(
    domain: WalkingDomain, x: Sequence[float], e_d: Sequence[float], step: float | None = None
) -> float:
    """Distance from ``x`` along ``e_d`` to the first obstacle cell or the boundary."""
    domain.check_query(x)
    return float(ray_depth_many(domain, np.asarray([x], float), np.asarray([e_d], float), step)[0])


def visual_depth_field(domain: WalkingDomain, e_d: np.ndarray) -> np.ndarray:
    """Maximum visual depth along ``e_d`` from every free cell centre (0 on obstacles)."""
    g = domain.grid
    X1, X2 = g.centres()
    free = domain.free
    pts = np.stack([X1[free], X2[free]], axis=1)
    out = np.zeros(g.shape)
    out[free] = ray_depth_many(domain, pts, e_d[free])
    return out


def angle_to(e_d: Sequence[float], offset: Sequence[float]) -> float:
    """Angle in ``[0, pi]`` between ``offset`` and the unit vector ``e_d``.

    Evaluated as ``atan2(|cross|, dot)``, which equals ``arccos`` of the
    normalised dot product but keeps full precision near 0 and pi.
    """
    ox, oy = float(offset[0]), float(offset[1])
    if ox == 0.0 and oy == 0.0:
        raise GeometryError("degenerate offset")
    ex, ey = float(e_d[0]), float(e_d[1])
    return math.atan2(abs(ex * oy - ey * ox), ex * ox + ey * oy)
