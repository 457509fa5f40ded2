"""Floor-plan geometry: passage regions, occupancy and the 0.1 m occupancy raster."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from shapely.geometry import LineString, Point as ShapelyPoint, box as shapely_box

from .domain import BBox, Layout, ObjectRecord, PassageAttributes, Point, distance

RESOLUTION_M = 0.1
EPS = 1e-9


@lru_cache(maxsize=4096)
def _passage_region(width: float, polyline: tuple[Point, ...]):
    if len(polyline) == 1:
        return ShapelyPoint(polyline[0]).buffer(width / 2.0)
    return LineString(polyline).buffer(width / 2.0, cap_style="flat", join_style="mitre")


def passage_region(passage: PassageAttributes):
    """Corridor polygon: the centerline swept by half the passage width, flat ends."""
    return _passage_region(passage.width_m, tuple(passage.polyline_m))


def box_in_passage(bbox: BBox, passage: PassageAttributes) -> bool:
    """True when the box overlaps the passage with positive area."""
    region = passage_region(passage)
    rx0, ry0, rx1, ry1 = region.bounds
    if bbox[2] <= rx0 + EPS or bbox[0] >= rx1 - EPS or bbox[3] <= ry0 + EPS or bbox[1] >= ry1 - EPS:
        return False
    return region.intersection(shapely_box(*bbox)).area > EPS


def occupancy(passage: PassageAttributes, objects: Iterable[ObjectRecord]) -> tuple[str, ...]:
    """Ids of objects whose footprint overlaps the passage, in input order."""
    return tuple(o.id for o in objects if box_in_passage(o.bbox_m, passage))


def boxes_overlap(a: BBox, b: BBox) -> bool:
    return a[0] < b[2] - EPS and b[0] < a[2] - EPS and a[1] < b[3] - EPS and b[1] < a[3] - EPS


def box_circle_distance(bbox: BBox, center: Point) -> float:
    """Distance from ``center`` to the nearest point of ``bbox`` (0 if inside)."""
    dx = max(bbox[0] - center[0], 0.0, center[0] - bbox[2])
    dy = max(bbox[1] - center[1], 0.0, center[1] - bbox[3])
    return math.hypot(dx, dy)


def box_around(center: Point, width: float, depth: float) -> BBox:
    return (center[0] - width / 2, center[1] - depth / 2, center[0] + width / 2, center[1] + depth / 2)


@dataclass
class Raster:
    """Boolean occupancy grid; ``free[j, i]`` is the cell at column i, row j."""

    origin: Point
    resolution: float
    free: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.free.shape

    def centers_x(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.free.shape[1]) + 0.5) * self.resolution

    def centers_y(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.free.shape[0]) + 0.5) * self.resolution

    def cell_of(self, point: Point) -> tuple[int, int]:
        ny, nx = self.free.shape
        i = int(math.floor((point[0] - self.origin[0]) / self.resolution + EPS))
        j = int(math.floor((point[1] - self.origin[1]) / self.resolution + EPS))
        return min(max(j, 0), ny - 1), min(max(i, 0), nx - 1)

    def center_of(self, cell: tuple[int, int]) -> Point:
        j, i = cell
        return (
            round(self.origin[0] + (i + 0.5) * self.resolution, 9),
            round(self.origin[1] + (j + 0.5) * self.resolution, 9),
        )


def rasterize(layout: Layout, blockers: Sequence[BBox], resolution: float = RESOLUTION_M) -> Raster:
    x0, y0, x1, y1 = layout.bounds_m
    nx = max(1, int(round((x1 - x0) / resolution)))
    ny = max(1, int(round((y1 - y0) / resolution)))
    raster = Raster(origin=(x0, y0), resolution=resolution, free=np.ones((ny, nx), dtype=bool))
    cx = raster.centers_x()
    cy = raster.centers_y()
    for bx0, by0, bx1, by1 in list(layout.walls) + list(blockers):
        cols = (cx >= bx0 - EPS) & (cx < bx1 - EPS)
        rows = (cy >= by0 - EPS) & (cy < by1 - EPS)
        if cols.any() and rows.any():
            raster.free[np.ix_(rows, cols)] = False
    return raster


def _runs_along_rows(free: np.ndarray) -> np.ndarray:
    out = np.zeros(free.shape, dtype=np.int32)
    for j in range(free.shape[0]):
        row = free[j]
        padded = np.concatenate(([False], row, [False])).astype(np.int8)
        edges = np.diff(padded)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        for s, e in zip(starts, ends):
            out[j, s:e] = e - s
    return out


def clearance_map(raster: Raster) -> np.ndarray:
    """Local free width per cell: the shorter of the horizontal and vertical free runs, in meters."""
    run_x = _runs_along_rows(raster.free)
    run_y = _runs_along_rows(raster.free.T).T
    return np.minimum(run_x, run_y) * raster.resolution


def _neighbors(cell: tuple[int, int], shape: tuple[int, int]):
    j, i = cell
    ny, nx = shape
    if j > 0:
        yield j - 1, i
    if j + 1 < ny:
        yield j + 1, i
    if i > 0:
        yield j, i - 1
    if i + 1 < nx:
        yield j, i + 1


def bfs_reachable(passable: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> bool:
    """Breadth-first search over 4-connected passable cells."""
    if not (passable[start] and passable[goal]):
        return False
    if start == goal:
        return True
    seen = np.zeros(passable.shape, dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for nb in _neighbors(cell, passable.shape):
            if passable[nb] and not seen[nb]:
                if nb == goal:
                    return True
                seen[nb] = True
                queue.append(nb)
    return False


@dataclass(frozen=True)
class RouteCheck:
    feasible: bool
    bottleneck_m: Optional[float]


def route_check(raster: Raster, start: Point, goal: Point, min_width: float) -> RouteCheck:
    """Reachability for a body of width ``min_width`` plus the widest-route bottleneck.

    The bottleneck is the largest clearance level at which the two cells stay
    connected; it is reported only when the route is feasible.
    """
    clearance = clearance_map(raster)
    s = raster.cell_of(start)
    g = raster.cell_of(goal)
    feasible = bfs_reachable(clearance >= min_width - EPS, s, g)
    if not feasible:
        return RouteCheck(False, None)
    levels = np.unique(clearance[clearance >= min_width - EPS])
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if bfs_reachable(clearance >= levels[mid] - EPS, s, g):
            lo = mid
        else:
            hi = mid - 1
    return RouteCheck(True, round(float(levels[lo]), 9))


def nearest(points: Sequence[Point], target: Point) -> Point:
    return min(points, key=lambda p: (distance(p, target), p[0], p[1]))
