"""Static environment: occupancy grid, collision queries, global paths.

The world is a boolean occupancy grid (True = occupied) with a closed
boundary: any query outside the grid reports occupied, so rollouts can
never escape the map. Grids are immutable after construction and are
shared read-only across planner workers.

Footprint collision checks test a lattice of sample points over the
oriented vessel rectangle at a spacing of at most half the grid
resolution, which cannot miss an occupied cell that the rectangle
interior overlaps by a full cell. A distance-transform fast path skips
the lattice when the outcome is already decided; its bounds are
conservative, so the result is always identical to the plain lattice
test.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


class MapLoadError(Exception):
    """Raised when a map image or its metadata cannot be read."""


class PlanningError(Exception):
    """Raised when no global path exists between start and goal."""


@dataclass
class Footprint:
    """Axis-aligned rectangle in the body frame, centered on the vessel origin."""

    length: float  # [m] along body x
    width: float   # [m] along body y

    def __post_init__(self):
        if self.length < 0 or self.width < 0:
            raise ValueError("footprint dimensions must be non-negative")

    @property
    def circumradius(self) -> float:
        return math.hypot(self.length / 2.0, self.width / 2.0)


@dataclass
class GlobalPath:
    """Ordered world waypoints from start to goal."""

    waypoints: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if len(self.waypoints) < 1:
            raise ValueError("path needs at least one waypoint")
        d = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        if len(d) and (d == 0).any():
            raise ValueError("consecutive waypoints must be distinct")

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]

    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


@dataclass
class OccupancyGrid:
    """Boolean occupancy raster. cells[iy, ix], True = occupied."""

    cells: np.ndarray
    resolution: float                    # [m/cell]
    origin: tuple[float, float] = (0.0, 0.0)  # world coords of cell (0, 0) corner

    _clearance: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise MapLoadError("grid must be a non-empty 2D array")
        if self.resolution <= 0:
            raise MapLoadError("resolution must be positive")
        self.cells.setflags(write=False)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def world_extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) covered by the grid."""
        x0, y0 = self.origin
        return (x0, x0 + self.width * self.resolution,
                y0, y0 + self.height * self.resolution)

    def cell_index(self, x, y):
        """Floor indexing; points exactly on a boundary land in the upper cell."""
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(int)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(int)
        return ix, iy

    def cell_center(self, ix, iy):
        x = self.origin[0] + (np.asarray(ix) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(iy) + 0.5) * self.resolution
        return x, y

    def occupied(self, x, y):
        """Vectorized occupancy lookup; out-of-grid counts as occupied."""
        ix, iy = self.cell_index(x, y)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.ones(np.broadcast(ix, iy).shape, dtype=bool)
        if out.ndim == 0:
            return bool(not inside or self.cells[iy, ix])
        out[inside] = self.cells[iy[inside], ix[inside]]
        return out

    def clearance_map(self) -> np.ndarray:
        """Distance [m] from each cell center to the nearest occupied cell center."""
        if self._clearance is None:
            if self.cells.all():
                dist = np.zeros_like(self.cells, dtype=float)
            else:
                dist = ndimage.distance_transform_edt(~self.cells) * self.resolution
            dist.setflags(write=False)
            object.__setattr__(self, "_clearance", dist)
        return self._clearance

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64([self.resolution, *self.origin]).tobytes())
        h.update(self.cells.tobytes())
        return h.hexdigest()


def point_occupied(grid: OccupancyGrid, point) -> bool:
    """True iff the point maps to an occupied cell or lies outside the grid."""
    x, y = point
    return bool(grid.occupied(float(x), float(y)))


def load_map(image: np.ndarray, resolution: float, origin=(0.0, 0.0),
             threshold: int = 128) -> OccupancyGrid:
    """Build a grid from a grayscale raster: pixel < threshold means occupied."""
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise MapLoadError("map image must be a non-empty 2D grayscale raster")
    if resolution <= 0:
        raise MapLoadError("resolution must be positive")
    return OccupancyGrid(cells=image < threshold, resolution=resolution,
                         origin=(float(origin[0]), float(origin[1])))


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) portable graymap with maxval <= 255."""
    data = Path(path).read_bytes()
    try:
        tokens = []
        pos = 0
        while len(tokens) < 4:
            # skip whitespace and '#' comments between header tokens
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        pos += 1  # single whitespace after maxval
        magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    except (ValueError, IndexError) as exc:
        raise MapLoadError(f"malformed PGM header in {path}") from exc
    if magic != b"P5":
        raise MapLoadError(f"{path}: only binary (P5) PGM is supported")
    if maxval <= 0 or maxval > 255:
        raise MapLoadError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos, count=width * height)
    if pixels.size != width * height:
        raise MapLoadError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + image.tobytes())


def load_map_file(pgm_path, sidecar_path=None) -> OccupancyGrid:
    """Load a PGM map plus its metadata sidecar (resolution, origin, threshold)."""
    import yaml

    pgm_path = Path(pgm_path)
    sidecar = Path(sidecar_path) if sidecar_path else pgm_path.with_suffix(".yaml")
    if not sidecar.exists():
        raise MapLoadError(f"missing map metadata sidecar {sidecar}")
    meta = yaml.safe_load(sidecar.read_text())
    if not isinstance(meta, dict) or "resolution" not in meta:
        raise MapLoadError(f"{sidecar}: expected mapping with a 'resolution' key")
    image = read_pgm(pgm_path)
    return load_map(
        image,
        resolution=float(meta["resolution"]),
        origin=(float(meta.get("origin_x", 0.0)), float(meta.get("origin_y", 0.0))),
        threshold=int(meta.get("threshold", 128)),
    )


def save_map_file(grid: OccupancyGrid, pgm_path, threshold: int = 128) -> None:
    import yaml

    pgm_path = Path(pgm_path)
    image = np.where(grid.cells, 0, 255).astype(np.uint8)
    write_pgm(pgm_path, image)
    meta = {
        "resolution": float(grid.resolution),
        "origin_x": float(grid.origin[0]),
        "origin_y": float(grid.origin[1]),
        "threshold": threshold,
    }
    pgm_path.with_suffix(".yaml").write_text(yaml.safe_dump(meta, sort_keys=True))


# ---------------------------------------------------------------------------
# footprint collision checking

_LATTICE_CACHE: dict[tuple[float, float, float], tuple[np.ndarray, np.ndarray]] = {}


def _lattice_offsets(fp: Footprint, resolution: float):
    """Body-frame sample offsets covering the rectangle at spacing <= res/2."""
    key = (fp.length, fp.width, resolution)
    cached = _LATTICE_CACHE.get(key)
    if cached is not None:
        return cached
    spacing = resolution / 2.0

    def axis(extent):
        n = int(math.ceil(extent / spacing)) + 1 if extent > 0 else 1
        return np.linspace(-extent / 2.0, extent / 2.0, n)

    ox, oy = np.meshgrid(axis(fp.length), axis(fp.width), indexing="ij")
    offsets = (ox.ravel(), oy.ravel())
    _LATTICE_CACHE[key] = offsets
    return offsets


def _lattice_collides(grid: OccupancyGrid, x, y, cos_h, sin_h, fp: Footprint) -> np.ndarray:
    """Plain lattice test for poses given as equal-length arrays."""
    ox, oy = _lattice_offsets(fp, grid.resolution)
    px = x[:, None] + cos_h[:, None] * ox - sin_h[:, None] * oy
    py = y[:, None] + sin_h[:, None] * ox + cos_h[:, None] * oy
    return grid.occupied(px, py).any(axis=1)


def footprints_collide_batch(grid: OccupancyGrid, x, y, heading, fp: Footprint,
                             cos_h=None, sin_h=None) -> np.ndarray:
    """Vectorized footprint-vs-grid test for a batch of poses.

    Uses the clearance map to decide clear-cut poses without sampling:
    a pose whose cell clearance exceeds the footprint circumradius plus
    a cell diagonal cannot touch any occupied cell, and one whose
    clearance is far below the inscribed radius must overlap one. Both
    bounds are conservative, so results match the lattice test exactly.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if cos_h is None:
        heading = np.atleast_1d(np.asarray(heading, dtype=float))
        cos_h, sin_h = np.cos(heading), np.sin(heading)
    else:
        cos_h = np.atleast_1d(np.asarray(cos_h, dtype=float))
        sin_h = np.atleast_1d(np.asarray(sin_h, dtype=float))

    res = grid.resolution
    diag = res * math.sqrt(2.0)
    rc = fp.circumradius
    x_min, x_max, y_min, y_max = grid.world_extent()

    out = np.zeros(x.shape, dtype=bool)

    # centers outside the grid always collide (some lattice point is outside)
    outside = (x < x_min) | (x >= x_max) | (y < y_min) | (y >= y_max)
    out[outside] = True

    inside = ~outside
    if not inside.any():
        return out
    ix, iy = grid.cell_index(x[inside], y[inside])
    clear = grid.clearance_map()[iy, ix]
    edge = np.minimum.reduce([x[inside] - x_min, x_max - x[inside],
                              y[inside] - y_min, y_max - y[inside]])

    definitely_free = (clear > rc + diag + 1e-9) & (edge > rc + 1e-9)
    definitely_hit = clear < fp.width / 2.0 - 0.75 * diag - 1e-9

    sub = np.where(inside)[0]
    out[sub[definitely_hit]] = True
    maybe = sub[~definitely_free & ~definitely_hit]
    if maybe.size:
        out[maybe] = _lattice_collides(grid, x[maybe], y[maybe],
                                       cos_h[maybe], sin_h[maybe], fp)
    return out


def footprint_collides(grid: OccupancyGrid, pose, fp: Footprint) -> bool:
    """True iff any occupied cell intersects the oriented vessel rectangle."""
    x, y, heading = pose
    return bool(footprints_collide_batch(grid, [x], [y], [heading], fp)[0])


def project_to_free(grid: OccupancyGrid, target, anchor) -> np.ndarray:
    """Walk from target toward anchor and return the first free point.

    The anchor must be in free space; it is returned in the worst case.
    Step size is half the grid resolution.
    """
    target = np.asarray(target, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    if not point_occupied(grid, target):
        return target
    span = np.linalg.norm(anchor - target)
    if span == 0.0:
        return anchor
    steps = int(math.ceil(span / (grid.resolution / 2.0)))
    for i in range(1, steps + 1):
        p = target + (anchor - target) * (i / steps)
        if not point_occupied(grid, p):
            return p
    return anchor


# ---------------------------------------------------------------------------
# global planning

_SQRT2 = math.sqrt(2.0)
_NEIGHBORS = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2), (-1, -1, _SQRT2)]


def inflate(grid: OccupancyGrid, radius: float) -> np.ndarray:
    """Occupancy dilated by a disk of the given radius [m]."""
    if radius <= 0:
        return grid.cells
    r_cells = int(math.floor(radius / grid.resolution))
    if r_cells == 0:
        return grid.cells
    span = np.arange(-r_cells, r_cells + 1)
    dx, dy = np.meshgrid(span, span)
    disk = (dx ** 2 + dy ** 2) * grid.resolution ** 2 <= radius ** 2 + 1e-12
    return ndimage.binary_dilation(grid.cells, structure=disk)


def _octile(ax, ay, bx, by):
    dx, dy = abs(ax - bx), abs(ay - by)
    return max(dx, dy) + (_SQRT2 - 1.0) * min(dx, dy)


def astar_grid(occ: np.ndarray, start_cell, goal_cell):
    """8-connected A* over a boolean occupancy array; returns cell list."""
    height, width = occ.shape
    sx, sy = start_cell
    gx, gy = goal_cell
    open_heap = [(0.0, 0, (sx, sy))]
    g_cost = {(sx, sy): 0.0}
    parent = {}
    counter = 0
    while open_heap:
        _, _, cell = heapq.heappop(open_heap)
        if cell == (gx, gy):
            path = [cell]
            while cell in parent:
                cell = parent[cell]
                path.append(cell)
            return path[::-1]
        cx, cy = cell
        base = g_cost[cell]
        for dx, dy, w in _NEIGHBORS:
            nx, ny = cx + dx, cy + dy
            if nx < 0 or nx >= width or ny < 0 or ny >= height or occ[ny, nx]:
                continue
            cand = base + w
            if cand < g_cost.get((nx, ny), math.inf):
                g_cost[(nx, ny)] = cand
                parent[(nx, ny)] = cell
                counter += 1
                heapq.heappush(open_heap, (cand + _octile(nx, ny, gx, gy), counter, (nx, ny)))
    return None


def _segment_free(grid: OccupancyGrid, occ: np.ndarray, a, b) -> bool:
    span = np.linalg.norm(b - a)
    n = max(int(math.ceil(span / (grid.resolution / 2.0))), 1)
    ts = np.linspace(0.0, 1.0, n + 1)
    px = a[0] + (b[0] - a[0]) * ts
    py = a[1] + (b[1] - a[1]) * ts
    ix, iy = grid.cell_index(px, py)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    if not inside.all():
        return False
    return not occ[iy, ix].any()


def plan_global_path(grid: OccupancyGrid, start, goal, inflation: float = 0.0) -> GlobalPath:
    """Shortest 8-connected grid path, waypoint-decimated by line of sight.

    Obstacles are inflated by `inflation` meters before planning; raises
    PlanningError when start or goal is blocked or no path exists.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    occ = inflate(grid, inflation)

    def cell_of(p, name):
        ix, iy = grid.cell_index(p[0], p[1])
        if ix < 0 or ix >= grid.width or iy < 0 or iy >= grid.height or occ[iy, ix]:
            raise PlanningError(f"{name} {tuple(p)} is not in free space after inflation")
        return int(ix), int(iy)

    start_cell = cell_of(start, "start")
    goal_cell = cell_of(goal, "goal")
    if start_cell == goal_cell:
        if np.array_equal(start, goal):
            return GlobalPath(np.array([start]))
        return GlobalPath(np.array([start, goal]))

    cells = astar_grid(occ, start_cell, goal_cell)
    if cells is None:
        raise PlanningError(f"no path from {tuple(start)} to {tuple(goal)}")

    pts = [start]
    for ix, iy in cells[1:-1]:
        cx, cy = grid.cell_center(ix, iy)
        pts.append(np.array([cx, cy]))
    pts.append(goal)

    # greedy line-of-sight decimation
    waypoints = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _segment_free(grid, occ, pts[i], pts[j]):
            j -= 1
        waypoints.append(pts[j])
        i = j
    return GlobalPath(np.array(waypoints))


# ---------------------------------------------------------------------------
# synthetic maps for fixtures and demos

def _carve(cells: np.ndarray, grid_origin, resolution, x0, x1, y0, y1):
    """Mark the world-frame box [x0,x1) x [y0,y1) as free."""
    ix0 = int(round((x0 - grid_origin[0]) / resolution))
    ix1 = int(round((x1 - grid_origin[0]) / resolution))
    iy0 = int(round((y0 - grid_origin[1]) / resolution))
    iy1 = int(round((y1 - grid_origin[1]) / resolution))
    cells[max(iy0, 0):iy1, max(ix0, 0):ix1] = False


def straight_canal(length_m: float = 100.0, width_m: float = 20.0,
                   resolution_m: float = 0.25, wall_m: float = 3.0) -> OccupancyGrid:
    """Closed straight canal; free interior spans [0,length] x [0,width]."""
    origin = (-wall_m, -wall_m)
    nx = int(round((length_m + 2 * wall_m) / resolution_m))
    ny = int(round((width_m + 2 * wall_m) / resolution_m))
    cells = np.ones((ny, nx), dtype=bool)
    _carve(cells, origin, resolution_m, 0.0, length_m, 0.0, width_m)
    return OccupancyGrid(cells=cells, resolution=resolution_m, origin=origin)


def crossing_canals(arm_m: float = 40.0, width_m: float = 16.0,
                    resolution_m: float = 0.25, wall_m: float = 3.0) -> OccupancyGrid:
    """Two perpendicular canals crossing at the center of a square map."""
    side = 2 * arm_m + width_m
    origin = (-wall_m, -wall_m)
    n = int(round((side + 2 * wall_m) / resolution_m))
    cells = np.ones((n, n), dtype=bool)
    c = side / 2.0
    _carve(cells, origin, resolution_m, 0.0, side, c - width_m / 2.0, c + width_m / 2.0)
    _carve(cells, origin, resolution_m, c - width_m / 2.0, c + width_m / 2.0, 0.0, side)
    return OccupancyGrid(cells=cells, resolution=resolution_m, origin=origin)


def open_basin(length_m: float = 60.0, width_m: float = 60.0,
               resolution_m: float = 0.25, wall_m: float = 3.0) -> OccupancyGrid:
    """Open rectangular basin bounded by walls."""
    origin = (-wall_m, -wall_m)
    nx = int(round((length_m + 2 * wall_m) / resolution_m))
    ny = int(round((width_m + 2 * wall_m) / resolution_m))
    cells = np.ones((ny, nx), dtype=bool)
    _carve(cells, origin, resolution_m, 0.0, length_m, 0.0, width_m)
    return OccupancyGrid(cells=cells, resolution=resolution_m, origin=origin)


SYNTHETIC_BUILDERS = {
    "straight_canal": straight_canal,
    "crossing_canals": crossing_canals,
    "open_basin": open_basin,
}
