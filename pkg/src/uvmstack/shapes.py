"""Scene primitives with ray-cast and distance queries.

Primitives carry a pose (local frame -> world).  Conventions: a box spans
+-size/2 along its local axes, a capsule's axis runs along local z, a plane
is a rectangle in its local xy plane with normal +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

_EPS = 1e-9


@dataclass
class Box:
    pose: Pose
    size: np.ndarray            # full extents (3,)
    name: str = "box"

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float)


@dataclass
class Sphere:
    pose: Pose
    radius: float
    name: str = "sphere"


@dataclass
class CapsulePrim:
    pose: Pose
    length: float               # segment length along local z
    radius: float
    name: str = "capsule"


@dataclass
class Plane:
    """Finite rectangle, normal along local +z, half-extents in xy."""
    pose: Pose
    half_extents: np.ndarray = field(default_factory=lambda: np.array([50.0, 50.0]))
    name: str = "plane"

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float)


# --- distances --------------------------------------------------------------

def point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < _EPS:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_segment_distance(p0, p1, q0, q1) -> float:
    """Closest distance between segments [p0,p1] and [q0,q1]."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a < _EPS and e < _EPS:
        return float(np.linalg.norm(r))
    if a < _EPS:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e < _EPS:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > _EPS else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    closest_p = p0 + s * d1
    closest_q = q0 + t * d2
    return float(np.linalg.norm(closest_p - closest_q))


def point_distance(prim, p) -> float:
    """Distance from a world point to the primitive surface (0 when inside)."""
    if isinstance(prim, Sphere):
        return max(0.0, float(np.linalg.norm(p - prim.pose.t)) - prim.radius)
    if isinstance(prim, CapsulePrim):
        h = prim.length / 2.0
        a = prim.pose.apply((0.0, 0.0, -h))
        b = prim.pose.apply((0.0, 0.0, h))
        return max(0.0, point_segment_distance(p, a, b) - prim.radius)
    if isinstance(prim, Box):
        local = prim.pose.invert().apply(p)
        d = np.abs(local) - prim.size / 2.0
        outside = np.maximum(d, 0.0)
        return float(np.linalg.norm(outside))
    if isinstance(prim, Plane):
        local = prim.pose.invert().apply(p)
        dx = max(0.0, abs(local[0]) - prim.half_extents[0])
        dy = max(0.0, abs(local[1]) - prim.half_extents[1])
        return math.sqrt(dx * dx + dy * dy + local[2] * local[2])
    raise TypeError(f"unsupported primitive {type(prim)!r}")


def segment_distance(prim, a, b) -> float:
    """Distance from segment [a,b] to the primitive surface.

    Sphere and capsule use closed forms; box and plane minimize the convex
    point distance along the segment by ternary search.
    """
    if isinstance(prim, Sphere):
        return max(0.0, point_segment_distance(prim.pose.t, a, b) - prim.radius)
    if isinstance(prim, CapsulePrim):
        h = prim.length / 2.0
        c0 = prim.pose.apply((0.0, 0.0, -h))
        c1 = prim.pose.apply((0.0, 0.0, h))
        return max(0.0, segment_segment_distance(a, b, c0, c1) - prim.radius)
    lo, hi = 0.0, 1.0
    ab = b - a
    for _ in range(60):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if point_distance(prim, a + m1 * ab) < point_distance(prim, a + m2 * ab):
            hi = m2
        else:
            lo = m1
    return point_distance(prim, a + 0.5 * (lo + hi) * ab)


# --- ray casting ------------------------------------------------------------

def ray_hit(prim, origin, direction):
    """Smallest positive ray parameter hitting the primitive, or None."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    if isinstance(prim, Sphere):
        return _ray_sphere(o - prim.pose.t, d, prim.radius)
    if isinstance(prim, Box):
        inv = prim.pose.invert()
        return _ray_aabb(inv.apply(o), inv.rotation_matrix() @ d, prim.size / 2.0)
    if isinstance(prim, Plane):
        inv = prim.pose.invert()
        ol = inv.apply(o)
        dl = inv.rotation_matrix() @ d
        if abs(dl[2]) < _EPS:
            return None
        t = -ol[2] / dl[2]
        if t < _EPS:
            return None
        hit = ol + t * dl
        if abs(hit[0]) <= prim.half_extents[0] and abs(hit[1]) <= prim.half_extents[1]:
            return float(t)
        return None
    if isinstance(prim, CapsulePrim):
        inv = prim.pose.invert()
        return _ray_capsule_local(inv.apply(o), inv.rotation_matrix() @ d,
                                  prim.length / 2.0, prim.radius)
    raise TypeError(f"unsupported primitive {type(prim)!r}")


def _ray_sphere(oc, d, radius):
    b = float(oc @ d)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    if disc < 0:
        return None
    root = math.sqrt(disc)
    for t in (-b - root, -b + root):
        if t > _EPS:
            return float(t)
    return None


def _ray_aabb(o, d, half):
    t_lo, t_hi = -math.inf, math.inf
    for k in range(3):
        if abs(d[k]) < _EPS:
            if abs(o[k]) > half[k]:
                return None
            continue
        t1 = (-half[k] - o[k]) / d[k]
        t2 = (half[k] - o[k]) / d[k]
        if t1 > t2:
            t1, t2 = t2, t1
        t_lo = max(t_lo, t1)
        t_hi = min(t_hi, t2)
    if t_hi < max(t_lo, _EPS):
        return None
    t = t_lo if t_lo > _EPS else t_hi
    return float(t) if t > _EPS else None


def _ray_capsule_local(o, d, h, radius):
    candidates = []
    # infinite cylinder about z
    a = d[0] * d[0] + d[1] * d[1]
    if a > _EPS:
        b = o[0] * d[0] + o[1] * d[1]
        c = o[0] * o[0] + o[1] * o[1] - radius * radius
        disc = b * b - a * c
        if disc >= 0:
            root = math.sqrt(disc)
            for t in ((-b - root) / a, (-b + root) / a):
                if t > _EPS and abs(o[2] + t * d[2]) <= h:
                    candidates.append(t)
    for cz in (-h, h):
        t = _ray_sphere(o - np.array([0.0, 0.0, cz]), d, radius)
        if t is not None:
            candidates.append(t)
    return float(min(candidates)) if candidates else None


def first_hit(prims, origin, direction):
    """(t, primitive) of the nearest hit among prims, or (None, None)."""
    best_t, best_p = None, None
    for prim in prims:
        t = ray_hit(prim, origin, direction)
        if t is not None and (best_t is None or t < best_t):
            best_t, best_p = t, prim
    return best_t, best_p


# --- voxel grid -------------------------------------------------------------

@dataclass
class VoxelGrid:
    """Occupancy set on a regular grid; cells are cubes of edge `cell`."""
    origin: np.ndarray
    cell: float
    occupied: set = field(default_factory=set)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)

    @staticmethod
    def from_points(points, cell: float, origin=(0.0, 0.0, 0.0)) -> "VoxelGrid":
        grid = VoxelGrid(origin=np.asarray(origin, dtype=float), cell=cell)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size:
            idx = np.floor((pts - grid.origin) / cell).astype(int)
            grid.occupied = set(map(tuple, idx))
        return grid

    def cell_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.cell

    def segment_clearance(self, a, b, radius: float) -> bool:
        """True when a capsule (segment + radius) stays clear of all cells."""
        if not self.occupied:
            return True
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = float(np.linalg.norm(b - a))
        n_steps = max(1, int(math.ceil(length / (self.cell * 0.5))))
        # sampling at cell/2 can miss the true closest approach by cell/4,
        # so widen the test by that much (conservative: never a false clear)
        margin = self.cell * 0.25
        reach = radius + margin + self.cell * 0.87
        span = int(math.ceil(reach / self.cell)) + 1
        half = self.cell / 2.0
        for i in range(n_steps + 1):
            p = a + (b - a) * (i / n_steps)
            base = np.floor((p - self.origin) / self.cell).astype(int)
            for di in range(-span, span + 1):
                for dj in range(-span, span + 1):
                    for dk in range(-span, span + 1):
                        idx = (base[0] + di, base[1] + dj, base[2] + dk)
                        if idx not in self.occupied:
                            continue
                        center = self.cell_center(idx)
                        d = np.abs(p - center) - half
                        outside = np.maximum(d, 0.0)
                        if float(np.linalg.norm(outside)) <= radius + margin:
                            return False
        return True
