"""Low-level polygon math: area, containment, rasterization, simplification.

Polygons are sequences of (x, y) vertices in pixel coordinates, implicitly
closed. Rasterization uses pixel-center sampling: pixel (i, j) is covered
iff its center (i + 0.5, j + 0.5) lies inside the polygon, so an
axis-aligned rectangle (0,0)-(W,H) covers exactly W*H pixels.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DegeneratePolygonError

Point = tuple[float, float]
Polygon = tuple[Point, ...]


def as_polygon(vertices: Sequence[Sequence[float]]) -> Polygon:
    return tuple((float(x), float(y)) for x, y in vertices)


def polygon_area(polygon: Sequence[Point]) -> float:
    """Unsigned shoelace area."""
    n = len(polygon)
    acc = 0.0
    for k in range(n):
        x1, y1 = polygon[k]
        x2, y2 = polygon[(k + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def polygon_perimeter(polygon: Sequence[Point]) -> float:
    n = len(polygon)
    return sum(
        math.dist(polygon[k], polygon[(k + 1) % n]) for k in range(n)
    )


def polygon_bbox(polygon: Sequence[Point]) -> tuple[float, float, float, float]:
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    return min(xs), min(ys), max(xs), max(ys)


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, polygon: Sequence[Point]) -> np.ndarray:
    """Even-odd (crossing number) containment test, vectorized over points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(polygon)
    for k in range(n):
        x1, y1 = polygon[k]
        x2, y2 = polygon[(k + 1) % n]
        crosses = (y1 > ys) != (y2 > ys)
        if not crosses.any():
            continue
        x_int = np.full(xs.shape, np.inf)
        np.divide(
            (ys - y1) * (x2 - x1),
            (y2 - y1) if y2 != y1 else 1.0,
            out=x_int,
            where=crosses,
        )
        x_int = np.where(crosses, x1 + x_int, np.inf)
        inside ^= crosses & (xs < x_int)
    return inside


def rasterize(
    polygon: Sequence[Point],
    width: int | None = None,
    height: int | None = None,
    origin: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Boolean raster of the polygon over an integer pixel grid.

    The grid spans ``origin`` to ``origin + (width, height)``; when dims are
    omitted they are taken from the polygon bounding box (ceil).
    """
    x0, y0 = origin
    if width is None or height is None:
        _, _, mx, my = polygon_bbox(polygon)
        width = int(math.ceil(mx)) - x0 if width is None else width
        height = int(math.ceil(my)) - y0 if height is None else height
    width = max(int(width), 0)
    height = max(int(height), 0)
    if width == 0 or height == 0:
        return np.zeros((height, width), dtype=bool)
    cx = np.arange(x0, x0 + width, dtype=float) + 0.5
    cy = np.arange(y0, y0 + height, dtype=float) + 0.5
    gx, gy = np.meshgrid(cx, cy)
    return points_in_polygon(gx, gy, polygon).reshape(height, width)


def raster_iou(
    a: Sequence[Point],
    b: Sequence[Point],
    width: int | None = None,
    height: int | None = None,
) -> float:
    """Intersection-over-union of rasterized polygons on a shared grid.

    Restricting the grid to the joint bounding box is exact: pixels outside
    it belong to neither polygon.
    """
    ax0, ay0, ax1, ay1 = polygon_bbox(a)
    bx0, by0, bx1, by1 = polygon_bbox(b)
    lo_x = int(math.floor(min(ax0, bx0)))
    lo_y = int(math.floor(min(ay0, by0)))
    hi_x = int(math.ceil(max(ax1, bx1)))
    hi_y = int(math.ceil(max(ay1, by1)))
    if width is not None:
        lo_x = max(lo_x, 0)
        hi_x = min(hi_x, int(width))
    if height is not None:
        lo_y = max(lo_y, 0)
        hi_y = min(hi_y, int(height))
    w = hi_x - lo_x
    h = hi_y - lo_y
    if w <= 0 or h <= 0:
        return 0.0
    ra = rasterize(a, w, h, origin=(lo_x, lo_y))
    rb = rasterize(b, w, h, origin=(lo_x, lo_y))
    union = np.logical_or(ra, rb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(ra, rb).sum()
    return float(inter) / float(union)


def _perpendicular_distances(chain: np.ndarray) -> np.ndarray:
    """Distance of each interior chain point to the chord between its ends."""
    start, end = chain[0], chain[-1]
    d = end - start
    norm = np.hypot(*d)
    if norm == 0.0:
        return np.hypot(*(chain[1:-1] - start).T)
    rel = chain[1:-1] - start
    return np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / norm


def _dp_keep(chain: np.ndarray, epsilon: float, offset: int, keep: set[int]) -> None:
    if len(chain) <= 2:
        return
    dists = _perpendicular_distances(chain)
    k = int(np.argmax(dists))
    if dists[k] <= epsilon:
        return
    keep.add(offset + k + 1)
    _dp_keep(chain[: k + 2], epsilon, offset, keep)
    _dp_keep(chain[k + 1 :], epsilon, offset + k + 1, keep)


def simplify_polygon(polygon: Sequence[Point], epsilon_frac: float = 0.02) -> Polygon:
    """Douglas-Peucker on a closed ring, tolerance = epsilon_frac * perimeter.

    Anchored at the polygon's diameter pair so no strictly-interior collinear
    vertex can be pinned. Falls back to the input when simplification would
    drop below 3 vertices or lose more than 20% of the enclosed area.
    """
    poly = as_polygon(polygon)
    if len(poly) < 3:
        raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {len(poly)}")
    pts = np.asarray(poly, dtype=float)
    n = len(pts)
    epsilon = epsilon_frac * polygon_perimeter(poly)

    # diameter pair (farthest two vertices), first-index tie-break
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff**2).sum(axis=2)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    a, b = (i, j) if i < j else (j, i)
    if a == b:
        return poly

    keep: set[int] = {a, b}
    chain1 = pts[a : b + 1]
    _dp_keep(chain1, epsilon, a, keep)
    chain2 = np.vstack([pts[b:], pts[: a + 1]])
    keep2: set[int] = set()
    _dp_keep(chain2, epsilon, 0, keep2)
    keep |= {(b + k) % n for k in keep2}

    kept = tuple(poly[k] for k in sorted(keep))
    if len(kept) < 3 or polygon_area(kept) < 0.8 * polygon_area(poly):
        return poly
    return kept


def polygon_is_simple(polygon: Sequence[Point]) -> bool:
    """True when no two non-adjacent edges intersect."""
    poly = as_polygon(polygon)
    n = len(poly)
    if n < 3:
        return False

    def seg(k: int) -> tuple[Point, Point]:
        return poly[k], poly[(k + 1) % n]

    def orient(p: Point, q: Point, r: Point) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    def intersects(s1: tuple[Point, Point], s2: tuple[Point, Point]) -> bool:
        p1, p2 = s1
        p3, p4 = s2
        d1 = orient(p3, p4, p1)
        d2 = orient(p3, p4, p2)
        d3 = orient(p1, p2, p3)
        d4 = orient(p1, p2, p4)
        return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))

    for k in range(n):
        for m in range(k + 1, n):
            if m == k or (m + 1) % n == k or (k + 1) % n == m:
                continue
            if intersects(seg(k), seg(m)):
                return False
    return True
