"""Serial-arm kinematics: FK, geometric Jacobian, damped least-squares IK.

Each link is a fixed offset followed by a revolute joint about a unit axis
in the post-offset frame.  Joint feedback comes from absolute encoders; the
raw-count mapping and resolution helpers live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_rotate, quat_to_rotvec, quat_multiply, quat_conjugate, wrap_angle


@dataclass
class Capsule:
    """Segment p0-p1 with radius, in the owning link's frame."""
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)


@dataclass
class Link:
    offset: Pose            # parent link frame -> this joint's frame at q=0
    axis: np.ndarray        # unit rotation axis in the joint frame

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(self.axis)
        if n < 1e-9:
            raise ValueError("joint axis must be nonzero")
        self.axis = self.axis / n


@dataclass
class ArmModel:
    links: list
    joint_limits: np.ndarray          # (dof, 2) [rad]
    ee_offset: Pose = field(default_factory=Pose.identity)
    reach: float = 0.0
    capsules: list = field(default_factory=list)   # per-link list[Capsule]

    def __post_init__(self):
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        if self.joint_limits.shape != (len(self.links), 2):
            raise ValueError("joint_limits must be (dof, 2)")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy lo < hi")
        if not self.capsules:
            self.capsules = [[] for _ in self.links]

    @property
    def dof(self) -> int:
        return len(self.links)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def random_config(self, rng) -> np.ndarray:
        return rng.uniform(self.joint_limits[:, 0], self.joint_limits[:, 1])


def fk(arm: ArmModel, q) -> list:
    """Per-link poses in the arm base frame; the appended last entry is the
    end-effector (last joint frame composed with the fixed tool offset)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (arm.dof,):
        raise ValueError(f"expected {arm.dof} joint angles, got {q.shape}")
    poses = []
    T = Pose.identity()
    for link, qi in zip(arm.links, q):
        T = T @ link.offset @ Pose.from_axis_angle(link.axis, qi)
        poses.append(T)
    poses.append(T @ arm.ee_offset)
    return poses


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Geometric Jacobian of the end-effector, 6 x dof (linear rows first)."""
    poses = fk(arm, q)
    p_ee = poses[-1].t
    J = np.zeros((6, arm.dof))
    for i, link in enumerate(arm.links):
        axis_world = quat_rotate(poses[i].q, link.axis)
        J[:3, i] = np.cross(axis_world, p_ee - poses[i].t)
        J[3:, i] = axis_world
    return J


class NoConvergence(RuntimeError):
    def __init__(self, msg, best_q=None, pos_err=None, rot_err=None):
        super().__init__(msg)
        self.best_q = best_q
        self.pos_err = pos_err
        self.rot_err = rot_err


@dataclass
class IkParams:
    tol_pos: float = 1e-5        # [m]
    tol_rot: float = 1e-4        # [rad]
    max_iters: int = 200
    damping: float = 1e-3        # initial Levenberg lambda
    damping_max: float = 1e6


def _pose_error(current: Pose, target: Pose) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.t - current.t
    e[3:] = quat_to_rotvec(quat_multiply(target.q, quat_conjugate(current.q)))
    return e


def solve_ik(arm: ArmModel, target: Pose, seed, params: IkParams | None = None) -> np.ndarray:
    """Damped least-squares IK with adaptive damping and per-step limit clamping."""
    params = params or IkParams()
    q = arm.clamp(wrap_angle(np.asarray(seed, dtype=float)))
    err = _pose_error(fk(arm, q)[-1], target)
    cost = float(err @ err)
    lam = params.damping
    best = (q.copy(), np.linalg.norm(err[:3]), np.linalg.norm(err[3:]))
    for _ in range(params.max_iters):
        if best[1] <= params.tol_pos and best[2] <= params.tol_rot:
            return best[0]
        J = jacobian(arm, q)
        JJt = J @ J.T
        dq = J.T @ np.linalg.solve(JJt + lam * lam * np.eye(6), err)
        q_new = arm.clamp(wrap_angle(q + dq))
        err_new = _pose_error(fk(arm, q_new)[-1], target)
        cost_new = float(err_new @ err_new)
        if cost_new < cost:
            q, err, cost = q_new, err_new, cost_new
            lam = max(lam * 0.1, 1e-8)
            pe, re = np.linalg.norm(err[:3]), np.linalg.norm(err[3:])
            if pe * pe + re * re < best[1] ** 2 + best[2] ** 2:
                best = (q.copy(), pe, re)
        else:
            lam *= 10.0
            if lam > params.damping_max:
                break
    if best[1] <= params.tol_pos and best[2] <= params.tol_rot:
        return best[0]
    raise NoConvergence(
        f"IK did not converge: pos_err={best[1]:.3e} m rot_err={best[2]:.3e} rad",
        best_q=best[0], pos_err=best[1], rot_err=best[2])


def solve_ik_restarts(arm: ArmModel, target: Pose, seed, rng,
                      n_restarts: int = 16, params: IkParams | None = None) -> np.ndarray:
    """solve_ik from the given seed, then from random configurations.

    Raises NoConvergence carrying the best attempt if every restart fails.
    """
    best_exc = None
    q_seed = np.asarray(seed, dtype=float)
    for attempt in range(max(1, n_restarts)):
        try:
            return solve_ik(arm, target, q_seed, params)
        except NoConvergence as exc:
            if best_exc is None or exc.pos_err < best_exc.pos_err:
                best_exc = exc
            q_seed = arm.random_config(rng)
    raise best_exc


# --- encoders ---------------------------------------------------------------

def encoder_resolution(bits: int, range_rad: float) -> float:
    """Smallest angle step of an absolute encoder spanning `range_rad`."""
    if bits <= 0:
        raise ValueError("bits must be positive")
    return range_rad / float(2 ** bits)


def arc_resolution(resolution_rad: float, reach_m: float) -> float:
    """End-point arc length swept by one encoder step at full extension."""
    return resolution_rad * reach_m


@dataclass
class JointCalibration:
    """Linear raw-count to joint-angle map from two calibration points."""
    raw_at_min: int
    raw_at_max: int
    angle_at_min: float
    angle_at_max: float

    def __post_init__(self):
        if self.raw_at_max == self.raw_at_min:
            raise ValueError("calibration endpoints must differ in raw counts")


def raw_to_angle(cal: JointCalibration, raw: float) -> float:
    span = cal.angle_at_max - cal.angle_at_min
    return cal.angle_at_min + (raw - cal.raw_at_min) * span / (cal.raw_at_max - cal.raw_at_min)


# --- default arm ------------------------------------------------------------

def default_arm() -> ArmModel:
    """Seven-joint hydraulic-arm stand-in: yaw-pitch shoulder, elbow,
    roll-pitch-yaw wrist, tool roll.  Reach 1.3 m from the base axis."""
    deg = math.radians
    links = [
        Link(Pose(t=(0.0, 0.0, 0.10)), (0, 0, 1)),     # shoulder yaw
        Link(Pose(t=(0.06, 0.0, 0.05)), (0, 1, 0)),    # shoulder pitch
        Link(Pose(t=(0.50, 0.0, 0.0)), (0, 1, 0)),     # elbow pitch
        Link(Pose(t=(0.15, 0.0, 0.0)), (1, 0, 0)),     # forearm roll
        Link(Pose(t=(0.25, 0.0, 0.0)), (0, 1, 0)),     # wrist pitch
        Link(Pose(t=(0.10, 0.0, 0.0)), (0, 0, 1)),     # wrist yaw
        Link(Pose(t=(0.08, 0.0, 0.0)), (1, 0, 0)),     # tool roll
    ]
    limits = np.array([
        [-deg(140), deg(140)],
        [-deg(100), deg(100)],
        [-deg(130), deg(130)],
        [-deg(170), deg(170)],
        [-deg(110), deg(110)],
        [-deg(140), deg(140)],
        [-deg(170), deg(170)],
    ])
    ee = Pose(t=(0.16, 0.0, 0.0))
    radii = [0.06, 0.055, 0.05, 0.045, 0.04, 0.04, 0.035]
    capsules = []
    for i, r in enumerate(radii):
        tip = links[i + 1].offset.t if i + 1 < len(links) else ee.t
        capsules.append([Capsule(np.zeros(3), tip, r)])
    return ArmModel(links=links, joint_limits=limits, ee_offset=ee,
                    reach=1.3, capsules=capsules)
