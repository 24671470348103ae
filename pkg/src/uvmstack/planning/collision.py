"""Arm collision checking against scene primitives, voxels, and itself.

Distance tests are exact capsule-vs-primitive checks, vectorized over batches
of configurations so edge validation inside the planner stays cheap: batch
forward kinematics via Rodrigues rotations, piecewise-quadratic closed form
for segment-to-box, and the clamped closed form for segment-to-segment.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Pose
from ..kinematics import ArmModel, Capsule


def link_name(i: int) -> str:
    return f"link{i + 1}"


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def segment_aabb_distance(c, d, h):
    """Distance from segments {c + t*d, t in [0,1]} to the box |x| <= h.

    c, d: (m, 3) in box-local coordinates; h: (3,). Returns (m,).
    The squared distance is piecewise quadratic in t with breakpoints where a
    coordinate crosses a face plane, so each piece is minimized exactly.
    """
    c = np.atleast_2d(c)
    d = np.atleast_2d(d)
    m = len(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (h[None, :] - c) / d
        t_lo = (-h[None, :] - c) / d
    cand = np.concatenate([t_hi, t_lo], axis=1)
    cand[~np.isfinite(cand)] = 1.0
    np.clip(cand, 0.0, 1.0, out=cand)
    ts = np.concatenate([np.zeros((m, 1)), np.ones((m, 1)), cand], axis=1)
    ts.sort(axis=1)
    a, b = ts[:, :-1], ts[:, 1:]
    mid = 0.5 * (a + b)                                   # (m, k)
    p = c[:, None, :] + mid[:, :, None] * d[:, None, :]   # (m, k, 3)
    over = p > h[None, None, :]
    under = p < -h[None, None, :]
    act = over | under
    off = np.where(over, c[:, None, :] - h, np.where(under, c[:, None, :] + h, 0.0))
    dd = np.where(act, np.broadcast_to(d[:, None, :], p.shape), 0.0)
    alpha = np.sum(dd * dd, axis=2)
    beta = 2.0 * np.sum(dd * off, axis=2)
    gamma = np.sum(off * off, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_star = np.where(alpha > 0, -beta / (2 * alpha), a)
    t_star = np.clip(t_star, a, b)
    val = alpha * t_star * t_star + beta * t_star + gamma
    val[~act.any(axis=2)] = 0.0                           # interval inside the box
    return np.sqrt(np.maximum(val.min(axis=1), 0.0))


def segment_segment_batch(p0, p1, q0, q1):
    """Pairwise distance between segments p and fixed-shape segments q, (m,)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=1)
    e = np.sum(d2 * d2, axis=1)
    f = np.sum(d2 * r, axis=1)
    c = np.sum(d1 * r, axis=1)
    b = np.sum(d1 * d2, axis=1)
    denom = a * e - b * b
    s = np.where(denom > 1e-14, np.clip((b * f - c * e) / np.where(denom > 1e-14, denom, 1.0), 0, 1), 0.0)
    t = np.where(e > 1e-14, (b * s + f) / np.where(e > 1e-14, e, 1.0), 0.0)
    t_cl = np.clip(t, 0.0, 1.0)
    redo = t != t_cl
    s = np.where(redo, np.clip((b * t_cl - c) / np.where(a > 1e-14, a, 1.0), 0, 1), s)
    diff = (p0 + s[:, None] * d1) - (q0 + t_cl[:, None] * d2)
    return np.linalg.norm(diff, axis=1)


def point_segment_batch(p0, p1, point):
    d = p1 - p0
    len2 = np.sum(d * d, axis=1)
    t = np.clip(np.sum((point - p0) * d, axis=1) / np.where(len2 > 1e-14, len2, 1.0), 0, 1)
    return np.linalg.norm(p0 + t[:, None] * d - point, axis=1)


class CollisionWorld:
    """Snapshot of everything the arm may hit.

    Obstacles are shape primitives (each with a .name); voxels is an optional
    occupancy grid from a point cloud. Contact pairs listed in `allowed` are
    suppressed, e.g. the gripper link against the tray while grasping.
    """

    def __init__(self, arm: ArmModel, obstacles=(), voxels=None,
                 allowed=(), base_pose=None, margin: float = 0.0):
        self.arm = arm
        self.obstacles = list(obstacles)
        self.voxels = voxels
        self.allowed = {tuple(p) for p in allowed}
        self.allowed |= {(b, a) for a, b in self.allowed}
        self.base_pose = base_pose or Pose.identity()
        self.margin = margin
        self.attachments: list = []     # (name, Capsule in ee frame)
        self._narrow = [self._compile(p) for p in self.obstacles]
        # per-link joint data for batch fk: offset rotation folded with the
        # Rodrigues terms of the joint axis (R_off @ (I + sin K + (1-cos) K^2))
        self._link_t = [l.offset.t for l in arm.links]
        self._rod = []
        for l in arm.links:
            R_off = l.offset.rotation_matrix()
            K = _skew(l.axis)
            self._rod.append((R_off, R_off @ K, R_off @ (K @ K)))
        self._ee_rot = arm.ee_offset.rotation_matrix()
        self._ee_t = arm.ee_offset.t
        self._rebuild_capsules()

    @staticmethod
    def _compile(prim):
        kind = type(prim).__name__
        R = prim.pose.rotation_matrix()
        t = prim.pose.t
        if kind == "Box":
            return ("box", prim.name, R, t, np.asarray(prim.size, float) / 2)
        if kind == "Plane":
            hx, hy = prim.half_extents
            return ("box", prim.name, R, t, np.array([hx, hy, 0.0]))
        if kind == "Sphere":
            return ("sphere", prim.name, t, prim.radius)
        if kind == "CapsulePrim":
            half = R[:, 2] * prim.length / 2
            return ("segment", prim.name, t - half, t + half, prim.radius)
        raise TypeError(f"unsupported primitive {kind}")

    def _rebuild_capsules(self):
        caps = []
        for i, link_caps in enumerate(self.arm.capsules):
            for c in link_caps:
                caps.append((link_name(i), i, c))
        for name, c in self.attachments:
            caps.append((name, self.arm.dof, c))
        self._caps = caps
        self._pairs = [(a, b) for a in range(len(caps)) for b in range(a + 1, len(caps))
                       if abs(caps[a][1] - caps[b][1]) >= 2
                       and (caps[a][0], caps[b][0]) not in self.allowed]

    def allow(self, pairs):
        """Suppress more contact pairs after construction."""
        for a, b in pairs:
            self.allowed.add((a, b))
            self.allowed.add((b, a))
        self._rebuild_capsules()

    def attach(self, name: str, capsule: Capsule):
        self.attachments.append((name, capsule))
        self._rebuild_capsules()

    def detach(self, name: str):
        self.attachments = [(n, c) for n, c in self.attachments if n != name]
        self._rebuild_capsules()

    # -- batch kinematics

    def _frames(self, Q):
        """World rotation (m,3,3) and origin (m,3) of each link frame + ee."""
        Q = np.atleast_2d(Q)
        m = Q.shape[0]
        R = np.broadcast_to(self.base_pose.rotation_matrix(), (m, 3, 3)).copy()
        t = np.broadcast_to(self.base_pose.t, (m, 3)).copy()
        frames = []
        for i in range(self.arm.dof):
            A, AK, AK2 = self._rod[i]
            th = Q[:, i]
            M = A[None] + np.sin(th)[:, None, None] * AK \
                + (1 - np.cos(th))[:, None, None] * AK2
            t = t + np.einsum("mij,j->mi", R, self._link_t[i])
            R = np.einsum("mij,mjk->mik", R, M)
            frames.append((R, t))
        t_ee = t + np.einsum("mij,j->mi", R, self._ee_t)
        R_ee = R @ self._ee_rot[None]
        frames.append((R_ee, t_ee))
        return frames

    def _capsule_segments(self, Q):
        """(P0, P1) arrays of shape (ncaps, m, 3) plus the capsule table."""
        frames = self._frames(Q)
        P0, P1 = [], []
        for _, idx, c in self._caps:
            R, t = frames[idx]
            P0.append(t + np.einsum("mij,j->mi", R, c.p0))
            P1.append(t + np.einsum("mij,j->mi", R, c.p1))
        return np.array(P0), np.array(P1)

    def capsules_world(self, q):
        """(name, p0, p1, radius) for every collision capsule at one config."""
        P0, P1 = self._capsule_segments(np.atleast_2d(q))
        return [(name, P0[k, 0], P1[k, 0], cap.radius)
                for k, (name, _, cap) in enumerate(self._caps)]

    # -- checks

    def _obstacle_dist(self, entry, p0, p1):
        kind = entry[0]
        if kind == "box":
            _, _, R, t, h = entry
            return segment_aabb_distance((p0 - t) @ R, (p1 - p0) @ R, h)
        if kind == "sphere":
            _, _, center, rad = entry
            return point_segment_batch(p0, p1, center) - rad
        _, _, a, b, rad = entry
        qa = np.broadcast_to(a, p0.shape)
        qb = np.broadcast_to(b, p0.shape)
        return segment_segment_batch(p0, p1, qa, qb) - rad

    def _batch_hits(self, Q, collect: bool):
        """Either a free-mask short-circuit (collect=False -> bool) or the
        list of touching pair names at Q[0] (collect=True)."""
        P0, P1 = self._capsule_segments(Q)
        hits = []
        for k, (name, _, cap) in enumerate(self._caps):
            lim = cap.radius + self.margin
            for entry in self._narrow:
                if (name, entry[1]) in self.allowed:
                    continue
                d = self._obstacle_dist(entry, P0[k], P1[k])
                if np.any(d <= lim):
                    if not collect:
                        return False
                    hits.append((name, entry[1]))
            if self.voxels is not None and (name, "voxels") not in self.allowed:
                for row in range(P0.shape[1]):
                    if not self.voxels.segment_clearance(P0[k, row], P1[k, row],
                                                         cap.radius + self.margin):
                        if not collect:
                            return False
                        hits.append((name, "voxels"))
                        break
        for a, b in self._pairs:
            lim = self._caps[a][2].radius + self._caps[b][2].radius + self.margin
            d = segment_segment_batch(P0[a], P1[a], P0[b], P1[b])
            if np.any(d <= lim):
                if not collect:
                    return False
                hits.append((self._caps[a][0], self._caps[b][0]))
        return hits if collect else True

    def check(self, q) -> list:
        """All touching pairs at configuration q; empty means collision-free."""
        return self._batch_hits(np.atleast_2d(np.asarray(q, float)), collect=True)

    def config_free(self, q) -> bool:
        return self._batch_hits(np.atleast_2d(np.asarray(q, float)), collect=False)

    def segment_free(self, q0, q1, step: float) -> bool:
        """Check interpolated configurations every `step` radians (inclusive)."""
        q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
        span = float(np.max(np.abs(q1 - q0)))
        n = max(1, int(math.ceil(span / step)))
        lam = np.linspace(0.0, 1.0, n + 1)
        Q = q0[None, :] + lam[:, None] * (q1 - q0)[None, :]
        return self._batch_hits(Q, collect=False)
