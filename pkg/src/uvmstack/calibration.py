"""Offline calibration and evaluation routines.

Hand-eye (AX = XB) via the classical two-stage least squares: rotation from
relative-motion rotation axes first, then translation from the resulting
linear system.  Also: stereo-to-base registration through a shared marker,
trajectory agreement statistics, and per-joint response characterization
(bias and hysteresis from settled samples).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_to_rotvec, quat_from_matrix

PAIRING_TOL_S = 0.05


class InsufficientMotion(ValueError):
    pass


class DegenerateRotations(ValueError):
    pass


class EmptyTrajectory(ValueError):
    pass


class NoTemporalOverlap(ValueError):
    pass


class InsufficientSettledSamples(ValueError):
    pass


@dataclass
class HandEyeSample:
    """One paired observation: wrist pose in arm base, marker pose in camera."""
    wrist_pose: Pose
    tag_pose: Pose
    t_wrist: float | None = None
    t_tag: float | None = None

    def __post_init__(self):
        if self.t_wrist is not None and self.t_tag is not None:
            if abs(self.t_wrist - self.t_tag) > PAIRING_TOL_S:
                raise ValueError(
                    f"sample streams out of sync by {abs(self.t_wrist - self.t_tag):.3f} s")


def calibrate_hand_eye(samples, min_axis_spread=math.radians(5.0),
                       min_motion=1e-8) -> Pose:
    """Wrist-to-camera transform from >= 3 paired wrist/marker poses.

    Consecutive sample pairs form the relative motions A (wrist side) and
    B (camera side) with A X = X B.  Rotation axes of the A motions must
    span at least two directions separated by min_axis_spread.
    """
    samples = list(samples)
    if len(samples) < 3:
        raise InsufficientMotion(f"need at least 3 samples, got {len(samples)}")

    alphas, betas, motions = [], [], []
    for s0, s1 in zip(samples[:-1], samples[1:]):
        A = s1.wrist_pose.invert() @ s0.wrist_pose
        B = s1.tag_pose @ s0.tag_pose.invert()
        a = quat_to_rotvec(A.q)
        b = quat_to_rotvec(B.q)
        if np.linalg.norm(a) < min_motion:
            continue  # pure translation carries no rotation constraint
        alphas.append(a)
        betas.append(b)
        motions.append((A, B))
    if len(motions) < 2:
        raise InsufficientMotion("need at least 2 relative motions with rotation")

    axes = [a / np.linalg.norm(a) for a in alphas]
    spread = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            # axis lines matter, not their sign
            spread = max(spread, math.acos(min(1.0, abs(float(axes[i] @ axes[j])))))
    if spread < min_axis_spread:
        raise DegenerateRotations(
            f"rotation axes spread {math.degrees(spread):.2f} deg below "
            f"{math.degrees(min_axis_spread):.2f} deg")

    # stage 1: R_X beta_i ~= alpha_i, orthogonal least squares
    C = np.zeros((3, 3))
    for a, b in zip(alphas, betas):
        C += np.outer(a, b)
    U, _, Vt = np.linalg.svd(C)
    R_x = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt

    # stage 2: (R_A - I) t_X = R_X t_B - t_A
    M = np.zeros((3 * len(motions), 3))
    rhs = np.zeros(3 * len(motions))
    for k, (A, B) in enumerate(motions):
        M[3 * k:3 * k + 3] = A.rotation_matrix() - np.eye(3)
        rhs[3 * k:3 * k + 3] = R_x @ B.t - A.t
    t_x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return Pose(quat_from_matrix(R_x), t_x)


def calibrate_stereo_to_base(wrist_pose: Pose, hand_eye: Pose,
                             tag_in_fisheye: Pose, tag_in_stereo: Pose) -> Pose:
    """Stereo-camera pose in the arm base frame via a marker both cameras see."""
    tag_in_base = wrist_pose @ hand_eye @ tag_in_fisheye
    return tag_in_base @ tag_in_stereo.invert()


# --- trajectory agreement ---------------------------------------------------

@dataclass
class CartesianTrack:
    timestamps: np.ndarray
    positions: np.ndarray     # (n, 3)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (n, 3)")
        if len(self.timestamps) != len(self.positions):
            raise ValueError("timestamps and positions must have equal length")


@dataclass
class ErrorStats:
    mean: float
    max: float
    std: float
    n_samples: int
    errors: np.ndarray = field(repr=False, default=None)


def rigid_align(src, dst):
    """Least-squares rotation+translation mapping src points onto dst (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ np.diag([1.0, 1.0, np.linalg.det(Vt.T @ U.T)]) @ U.T
    t = cd - R @ cs
    return R, t


def evaluate_trajectories(kin: CartesianTrack, vis: CartesianTrack,
                          align: bool = False) -> ErrorStats:
    """Pointwise Euclidean disagreement after resampling vis onto kin's clock.

    With align=True a rigid fit removes any constant frame offset before the
    statistics; by default offsets are kept, so a constant bias shows up as a
    constant error.
    """
    if len(kin.timestamps) == 0 or len(vis.timestamps) == 0:
        raise EmptyTrajectory("both trajectories must contain samples")
    t0 = max(kin.timestamps[0], vis.timestamps[0])
    t1 = min(kin.timestamps[-1], vis.timestamps[-1])
    if t0 > t1:
        raise NoTemporalOverlap(f"disjoint time ranges [{t0:.3f}, {t1:.3f}]")
    mask = (kin.timestamps >= t0) & (kin.timestamps <= t1)
    t = kin.timestamps[mask]
    kin_pts = kin.positions[mask]
    vis_pts = np.column_stack([
        np.interp(t, vis.timestamps, vis.positions[:, k]) for k in range(3)])
    if align:
        R, tr = rigid_align(vis_pts, kin_pts)
        vis_pts = vis_pts @ R.T + tr
    errors = np.linalg.norm(kin_pts - vis_pts, axis=1)
    return ErrorStats(mean=float(errors.mean()), max=float(errors.max()),
                      std=float(errors.std()), n_samples=len(errors), errors=errors)


# --- joint response ---------------------------------------------------------

@dataclass
class JointTrack:
    timestamps: np.ndarray
    angles: np.ndarray        # [rad]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        if len(self.timestamps) != len(self.angles):
            raise ValueError("timestamps and angles must have equal length")


@dataclass
class JointResponseParams:
    settle_time: float = 1.0                      # [s] command must hold this long
    velocity_threshold: float = math.radians(0.05)  # [rad/s]
    velocity_span: float = 0.2                    # [s] finite-difference window
    tail: float = 0.25                            # [s] averaged at end of hold
    bin_width_deg: float = 0.5
    min_samples: int = 10


@dataclass
class JointResponseProfile:
    bias: float               # [rad] mean settled error
    hysteresis_width: float   # [rad] |mean rising - mean falling|
    histogram: dict           # bin center [deg] -> count
    n_settled: int
    rising_mean: float | None = None
    falling_mean: float | None = None


def _settled_error(t, cmd, fb, i0, i1, params):
    """Error sample at the end of one constant-command hold, or None."""
    if t[i1] - t[i0] < params.settle_time:
        return None
    vel_mask_start = np.searchsorted(t, t[i1] - params.velocity_span)
    vel_mask_start = max(vel_mask_start, i0)
    if vel_mask_start >= i1:
        return None
    vel = abs(fb[i1] - fb[vel_mask_start]) / max(t[i1] - t[vel_mask_start], 1e-9)
    if vel >= params.velocity_threshold:
        return None
    tail_start = np.searchsorted(t, t[i1] - params.tail)
    tail_start = max(tail_start, i0)
    return float(np.mean(fb[tail_start:i1 + 1]) - cmd[i0])


def estimate_joint_response(commanded: JointTrack, feedback: JointTrack,
                            params: JointResponseParams | None = None) -> JointResponseProfile:
    """Bias and hysteresis of one joint from settled command/feedback data.

    A sample is settled when its command has been constant for settle_time
    and the feedback velocity has dropped below the threshold; each settled
    hold contributes exactly one histogram count.
    """
    params = params or JointResponseParams()
    t = commanded.timestamps
    cmd = commanded.angles
    fb = np.interp(t, feedback.timestamps, feedback.angles)

    # constant-command segments
    change = np.flatnonzero(np.abs(np.diff(cmd)) > 1e-12)
    starts = np.concatenate([[0], change + 1])
    ends = np.concatenate([change, [len(cmd) - 1]])

    errors, directions = [], []
    prev_cmd = None
    for i0, i1 in zip(starts, ends):
        err = _settled_error(t, cmd, fb, i0, i1, params)
        if err is not None:
            errors.append(err)
            directions.append(0.0 if prev_cmd is None else float(np.sign(cmd[i0] - prev_cmd)))
        prev_cmd = cmd[i0]

    if len(errors) < params.min_samples:
        raise InsufficientSettledSamples(
            f"found {len(errors)} settled samples, need {params.min_samples}")

    errors = np.asarray(errors)
    directions = np.asarray(directions)
    hist = {}
    for e in np.degrees(errors):
        center = round(e / params.bin_width_deg) * params.bin_width_deg
        center = 0.0 if center == 0 else center  # avoid -0.0 keys
        hist[center] = hist.get(center, 0) + 1

    rising = errors[directions > 0]
    falling = errors[directions < 0]
    rising_mean = float(rising.mean()) if len(rising) else None
    falling_mean = float(falling.mean()) if len(falling) else None
    if rising_mean is not None and falling_mean is not None:
        width = abs(rising_mean - falling_mean)
    else:
        width = 0.0
    return JointResponseProfile(
        bias=float(errors.mean()), hysteresis_width=width, histogram=hist,
        n_settled=len(errors), rising_mean=rising_mean, falling_mean=falling_mean)
