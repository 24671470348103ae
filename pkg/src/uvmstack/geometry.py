"""Rigid-body poses and a timestamped transform forest.

Quaternions are unit, scalar-first (w, x, y, z).  A ``Pose`` maps points
from its child frame into its parent frame: ``p_parent = R q p + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def wrap_angle(a):
    """Wrap an angle (scalar or array) to the interval (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return float(wrapped) if wrapped.ndim == 0 else wrapped


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < _EPS:
        raise ValueError("zero-norm quaternion")
    q = q / n
    # canonical sign: w >= 0, so equal rotations compare equal
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate vector(s) v by unit quaternion q."""
    w = q[0]
    u = q[1:]
    v = np.asarray(v, dtype=float)
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < _EPS:
        raise ValueError("zero-norm rotation axis")
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis / n))


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R):
    """Shepperd's method, numerically safe for all rotation matrices."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def quat_from_rpy(roll, pitch, yaw):
    """Intrinsic ZYX convention: yaw about z, then pitch about y, then roll about x."""
    qz = quat_from_axis_angle((0, 0, 1), yaw)
    qy = quat_from_axis_angle((0, 1, 0), pitch)
    qx = quat_from_axis_angle((1, 0, 0), roll)
    return quat_normalize(quat_multiply(quat_multiply(qz, qy), qx))


def rotation_angle(q):
    """Magnitude of the rotation encoded by unit quaternion q, in [0, pi]."""
    s = float(np.linalg.norm(q[1:]))
    return 2.0 * math.atan2(s, abs(float(q[0])))


def quat_to_rotvec(q):
    """Axis-angle vector (axis * angle) of a unit quaternion."""
    q = quat_normalize(q)
    s = np.linalg.norm(q[1:])
    if s < _EPS:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, q[0])
    return (q[1:] / s) * angle


class Pose:
    """Rigid transform: rotation (unit quaternion w,x,y,z) plus translation."""

    __slots__ = ("q", "t")

    def __init__(self, q=(1.0, 0.0, 0.0, 0.0), t=(0.0, 0.0, 0.0)):
        self.q = quat_normalize(np.asarray(q, dtype=float))
        self.t = np.asarray(t, dtype=float).copy()
        if self.t.shape != (3,):
            raise ValueError("translation must be length 3")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_axis_angle(axis, angle), t)

    @staticmethod
    def from_rpy(roll, pitch, yaw, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_rpy(roll, pitch, yaw), t)

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(quat_from_matrix(T[:3, :3]), T[:3, 3])

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.q)
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self, then other applied in self's child frame: T = self * other."""
        return Pose(quat_multiply(self.q, other.q),
                    self.t + quat_rotate(self.q, other.t))

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def invert(self) -> "Pose":
        qi = quat_conjugate(self.q)
        return Pose(qi, -quat_rotate(qi, self.t))

    def apply(self, points):
        """Map point(s) from the child frame into the parent frame."""
        return quat_rotate(self.q, points) + self.t

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def translation_distance(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.t - other.t))

    def rotation_distance(self, other: "Pose") -> float:
        """Relative rotation angle between the two poses, in radians."""
        return rotation_angle(quat_multiply(quat_conjugate(self.q), other.q))

    def almost_equal(self, other: "Pose", tol_t=1e-9, tol_r=1e-9) -> bool:
        return (self.translation_distance(other) <= tol_t
                and self.rotation_distance(other) <= tol_r)

    def copy(self) -> "Pose":
        return Pose(self.q, self.t)

    def __repr__(self):
        q = np.array2string(self.q, precision=6, suppress_small=True)
        t = np.array2string(self.t, precision=6, suppress_small=True)
        return f"Pose(q={q}, t={t})"


class UnknownFrame(KeyError):
    pass


class DisconnectedFrames(ValueError):
    pass


class CycleError(ValueError):
    pass


@dataclass
class _Edge:
    parent: str
    child: str
    pose: Pose
    stamp: float
    static: bool


@dataclass
class TransformTree:
    """Forest of named frames with timestamped edges.

    Edges are keyed by (parent, child); re-setting an existing edge keeps
    the latest stamp.  Adding an edge between two frames that are already
    connected through other edges would close a cycle and is rejected.
    """

    _edges: dict = field(default_factory=dict)
    _adjacency: dict = field(default_factory=dict)

    def frames(self):
        return sorted(self._adjacency.keys())

    def set_transform(self, parent: str, child: str, pose: Pose,
                      stamp: float = 0.0, static: bool = False) -> None:
        key = (parent, child)
        if key not in self._edges:
            if (child, parent) in self._edges:
                raise CycleError(f"edge {child}<->{parent} already exists in the other direction")
            if parent in self._adjacency and child in self._adjacency \
                    and self._connected(parent, child):
                raise CycleError(f"adding {parent}->{child} would close a cycle")
            self._edges[key] = _Edge(parent, child, pose.copy(), stamp, static)
            self._adjacency.setdefault(parent, set()).add(child)
            self._adjacency.setdefault(child, set()).add(parent)
            return
        edge = self._edges[key]
        if edge.static:
            raise ValueError(f"edge {parent}->{child} is static")
        if stamp < edge.stamp:
            return  # stale update, latest wins
        edge.pose = pose.copy()
        edge.stamp = stamp

    def _connected(self, a: str, b: str) -> bool:
        seen = {a}
        stack = [a]
        while stack:
            node = stack.pop()
            if node == b:
                return True
            for nxt in self._adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def _path(self, a: str, b: str):
        # BFS over the undirected forest; unique path if one exists
        prev = {a: None}
        queue = [a]
        while queue:
            node = queue.pop(0)
            if node == b:
                break
            for nxt in sorted(self._adjacency.get(node, ())):
                if nxt not in prev:
                    prev[nxt] = node
                    queue.append(nxt)
        if b not in prev:
            raise DisconnectedFrames(f"no path between frames {a!r} and {b!r}")
        path = [b]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        return list(reversed(path))

    def lookup(self, target: str, source: str) -> Pose:
        """Pose of `source` expressed in `target` (maps source points to target)."""
        for f in (target, source):
            if f not in self._adjacency:
                raise UnknownFrame(f"unknown frame {f!r}")
        if target == source:
            return Pose.identity()
        path = self._path(target, source)
        out = Pose.identity()
        for a, b in zip(path[:-1], path[1:]):
            if (a, b) in self._edges:
                out = out @ self._edges[(a, b)].pose
            else:
                out = out @ self._edges[(b, a)].pose.invert()
        return out

    def snapshot(self) -> "TransformTree":
        """Frozen copy; safe to hand to readers while updates continue."""
        copy = TransformTree()
        for key, e in self._edges.items():
            copy._edges[key] = _Edge(e.parent, e.child, e.pose.copy(), e.stamp, e.static)
        copy._adjacency = {k: set(v) for k, v in self._adjacency.items()}
        return copy
