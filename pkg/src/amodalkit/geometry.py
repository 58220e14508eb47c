"""Integer convex-hull helpers used by shape rasterization and amodal completion.

All vertex coordinates are integer pixel centers, so hull construction and
point-in-polygon tests are exact (no floating-point epsilons).
"""
from __future__ import annotations

import math

import numpy as np


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain on integer (x, y) points.

    Returns hull vertices in counter-clockwise order (y axis pointing down,
    so "counter-clockwise" follows image convention). Collinear inputs
    reduce to the two extreme points; a single point stays a single point.
    """
    pts = np.unique(np.asarray(points, dtype=np.int64), axis=0)
    if pts.shape[0] <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def fill_convex_polygon(width: int, height: int, vertices: np.ndarray) -> np.ndarray:
    """Bitmap of integer points inside or on a convex polygon.

    ``vertices`` must be hull output from :func:`convex_hull`. Degenerate
    hulls (a point or a segment) fill exactly the integer points they touch.
    """
    verts = np.asarray(vertices, dtype=np.int64)
    out = np.zeros((height, width), dtype=bool)
    if verts.shape[0] == 0:
        return out
    if verts.shape[0] == 1:
        x, y = verts[0]
        if 0 <= x < width and 0 <= y < height:
            out[y, x] = True
        return out
    if verts.shape[0] == 2:
        for x, y in _segment_points(verts[0], verts[1]):
            if 0 <= x < width and 0 <= y < height:
                out[y, x] = True
        return out

    x0, y0 = verts.min(axis=0)
    x1, y1 = verts.max(axis=0)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, width - 1), min(y1, height - 1)
    if x0 > x1 or y0 > y1:
        return out
    xs = np.arange(x0, x1 + 1, dtype=np.int64)
    ys = np.arange(y0, y1 + 1, dtype=np.int64)
    gx, gy = np.meshgrid(xs, ys)
    inside = np.ones(gx.shape, dtype=bool)
    n = verts.shape[0]
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        # half-plane test; hull orientation from convex_hull puts the
        # interior on the non-negative side of every edge
        inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= 0
    out[y0 : y1 + 1, x0 : x1 + 1] = inside
    return out


def _segment_points(a: np.ndarray, b: np.ndarray):
    """Integer points on the segment a-b inclusive (the degenerate hull fill)."""
    dx = int(b[0] - a[0])
    dy = int(b[1] - a[1])
    steps = math.gcd(abs(dx), abs(dy))
    if steps == 0:
        return [(int(a[0]), int(a[1]))]
    sx, sy = dx // steps, dy // steps
    return [(int(a[0]) + t * sx, int(a[1]) + t * sy) for t in range(steps + 1)]
