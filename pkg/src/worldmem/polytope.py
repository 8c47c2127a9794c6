"""Convex polyhedron clipping and exact volume.

A polyhedron is a list of faces; each face is a list of ``(x, y, z)`` tuples
ordered counter-clockwise when seen from outside, so the right-hand normal
points outward.  Plain tuples keep the inner loops out of numpy's per-call
overhead, which dominates for polygons with a handful of vertices.
"""

from __future__ import annotations

import math
from typing import Sequence

Vertex = tuple[float, float, float]
Face = list[Vertex]
Polyhedron = list[Face]

__all__ = ["polyhedron_from_frustum", "clip_halfspace", "clip_convex", "volume"]


def polyhedron_from_frustum(frustum) -> Polyhedron:
    corners = [tuple(float(c) for c in row) for row in frustum.corners]
    return [[corners[i] for i in loop] for loop in frustum.faces()]


def _scale(poly: Polyhedron) -> float:
    return max((abs(c) for face in poly for v in face for c in v), default=1.0)


def clip_halfspace(poly: Polyhedron, normal: Sequence[float], offset: float,
                   eps: float | None = None) -> Polyhedron:
    """Keep the part of ``poly`` with ``normal . p + offset >= 0``."""
    if not poly:
        return poly
    nx, ny, nz = normal
    if eps is None:
        eps = 1e-11 * (1.0 + _scale(poly) + abs(offset))

    dists = [[nx * v[0] + ny * v[1] + nz * v[2] + offset for v in face] for face in poly]
    if all(d >= -eps for ds in dists for d in ds):
        return poly
    if all(d <= eps for ds in dists for d in ds):
        return []

    out: Polyhedron = []
    cap_pts: list[Vertex] = []
    coplanar_face = False
    for face, ds in zip(poly, dists):
        n = len(face)
        clipped: Face = []
        for i in range(n):
            a, da = face[i], ds[i]
            b, db = face[(i + 1) % n], ds[(i + 1) % n]
            if da >= -eps:
                clipped.append(a)
                if abs(da) <= eps:
                    cap_pts.append(a)
            if (da > eps and db < -eps) or (da < -eps and db > eps):
                t = da / (da - db)
                p = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2]))
                clipped.append(p)
                cap_pts.append(p)
        if len(clipped) >= 3:
            if all(abs(nx * v[0] + ny * v[1] + nz * v[2] + offset) <= eps for v in clipped):
                coplanar_face = True
            out.append(clipped)

    if not coplanar_face:
        cap = _cap_polygon(cap_pts, (nx, ny, nz), eps)
        if cap is not None:
            out.append(cap)
    return out


def _cap_polygon(pts: list[Vertex], normal: Sequence[float], eps: float) -> Face | None:
    uniq: list[Vertex] = []
    tol2 = (10.0 * eps) ** 2
    for p in pts:
        for q in uniq:
            if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2 <= tol2:
                break
        else:
            uniq.append(p)
    if len(uniq) < 3:
        return None

    # outward normal of the cap is -normal; build (e1, e2) with e1 x e2 = -normal
    ox, oy, oz = -normal[0], -normal[1], -normal[2]
    if abs(ox) < 0.9:
        ax = (1.0, 0.0, 0.0)
    else:
        ax = (0.0, 1.0, 0.0)
    e1 = (oy * ax[2] - oz * ax[1], oz * ax[0] - ox * ax[2], ox * ax[1] - oy * ax[0])
    n1 = math.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
    e1 = (e1[0] / n1, e1[1] / n1, e1[2] / n1)
    e2 = (oy * e1[2] - oz * e1[1], oz * e1[0] - ox * e1[2], ox * e1[1] - oy * e1[0])

    k = len(uniq)
    cx = sum(p[0] for p in uniq) / k
    cy = sum(p[1] for p in uniq) / k
    cz = sum(p[2] for p in uniq) / k

    def angle(p):
        dx, dy, dz = p[0] - cx, p[1] - cy, p[2] - cz
        return math.atan2(dx * e2[0] + dy * e2[1] + dz * e2[2], dx * e1[0] + dy * e1[1] + dz * e1[2])

    return sorted(uniq, key=angle)


def clip_convex(poly: Polyhedron, normals, offsets) -> Polyhedron:
    """Successively clip against every half-space ``normals[i] . p + offsets[i] >= 0``."""
    for n, d in zip(normals, offsets):
        poly = clip_halfspace(poly, (float(n[0]), float(n[1]), float(n[2])), float(d))
        if not poly:
            break
    return poly


def volume(poly: Polyhedron) -> float:
    """Enclosed volume via the divergence theorem over fan-triangulated faces."""
    total = 0.0
    for face in poly:
        a = face[0]
        for i in range(1, len(face) - 1):
            b, c = face[i], face[i + 1]
            total += (a[0] * (b[1] * c[2] - b[2] * c[1])
                      - a[1] * (b[0] * c[2] - b[2] * c[0])
                      + a[2] * (b[0] * c[1] - b[1] * c[0]))
    return total / 6.0
