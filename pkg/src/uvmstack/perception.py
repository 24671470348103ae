"""Marker tracking, tool localization, door-angle estimation, point clouds.

The tag graph keeps the wide-angle camera as its origin frame and refines
each marker pose by least squares over a sliding window of its recent
detections.  Tools whose markers fall out of view keep their last world
pose, flagged as untracked, until the marker is seen again.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, wrap_angle, quat_to_rotvec, quat_from_axis_angle
from .cameras import estimate_tag_pose, project_points, tag_corners_local, unproject
from .shapes import first_hit

WINDOW_SIZE = 10


class DegenerateGeometry(ValueError):
    pass


class NeverSeen(KeyError):
    pass


@dataclass
class TagTrack:
    pose: Pose                  # origin camera frame -> tag
    confidence: float
    last_seen: float
    tag_size: float
    window: deque = field(default_factory=lambda: deque(maxlen=WINDOW_SIZE))


@dataclass
class TagGraph:
    origin_camera: str
    tag_sizes: dict             # tag_id -> edge length [m]
    tracks: dict = field(default_factory=dict)
    latest_time: float = 0.0

    def reset_windows(self):
        """Drop detection history, e.g. after the camera has moved."""
        for track in self.tracks.values():
            track.window.clear()


def _refine_windowed(model, corner_sets, size, init: Pose):
    """Joint reprojection least squares of one tag pose over several frames."""
    obj = tag_corners_local(size)
    stacked = np.vstack(corner_sets)

    def residual(x):
        angle = np.linalg.norm(x[:3])
        q = quat_from_axis_angle(x[:3], angle) if angle > 1e-12 else np.array([1.0, 0, 0, 0])
        pose = Pose(q, x[3:])
        cam_pts = pose.apply(obj)
        proj = project_points(model, cam_pts)
        return (np.tile(proj, (len(corner_sets), 1)) - stacked).ravel()

    x = np.concatenate([quat_to_rotvec(init.q), init.t])
    r = residual(x)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(60):
        J = np.empty((len(r), 6))
        h = 1e-6
        for k in range(6):
            dx = np.zeros(6)
            dx[k] = h
            J[:, k] = (residual(x + dx) - residual(x - dx)) / (2 * h)
        g = J.T @ r
        if np.linalg.norm(g) < 1e-10:
            break
        step = np.linalg.solve(J.T @ J + lam * np.eye(6), -g)
        x_new = x + step
        r_new = residual(x_new)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            done = cost - cost_new < 1e-16
            x, r, cost = x_new, r_new, cost_new
            lam = max(lam * 0.1, 1e-12)
            if done:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    angle = np.linalg.norm(x[:3])
    q = quat_from_axis_angle(x[:3], angle) if angle > 1e-12 else np.array([1.0, 0, 0, 0])
    mean_resid = float(np.mean(np.linalg.norm(r.reshape(-1, 2), axis=1)))
    return Pose(q, x[3:]), mean_resid


def update_tag_graph(graph: TagGraph, detections, model) -> TagGraph:
    """Fold new detections from the origin camera into the graph.

    Each tag's pose is re-estimated over its detection window; detections
    from other cameras are ignored here (they feed the stereo-side chain).
    """
    for det in detections:
        if det.camera != graph.origin_camera:
            continue
        size = graph.tag_sizes.get(det.tag_id)
        if size is None:
            continue
        track = graph.tracks.get(det.tag_id)
        if track is None:
            track = TagTrack(pose=Pose(), confidence=0.0, last_seen=det.timestamp,
                             tag_size=size)
            graph.tracks[det.tag_id] = track
        track.window.append(det)
        init, _ = estimate_tag_pose(model, track.window[-1].corners, size)
        corner_sets = [d.corners for d in track.window]
        pose, resid = _refine_windowed(model, corner_sets, size, init)
        track.pose = pose
        track.confidence = 1.0 / (1.0 + resid)
        track.last_seen = det.timestamp
        graph.latest_time = max(graph.latest_time, det.timestamp)
    return graph


# --- tools ------------------------------------------------------------------

@dataclass
class ToolSpec:
    tool_id: str
    tag_id: int
    mount_offset: Pose          # tag frame -> grasp point, constant
    tag_size: float


@dataclass
class ToolEstimate:
    tool_id: str
    grasp_pose: Pose            # world frame
    tracked: bool
    last_seen: float
    confidence: float


class ToolTracker:
    """World-frame tool poses with persistence across tracking dropouts."""

    def __init__(self, tools: dict, wrist_index: int = -2, max_age: float = 0.5):
        self.tools = tools
        self.wrist_index = wrist_index
        self.max_age = max_age
        self._estimates: dict = {}

    def localize(self, graph: TagGraph, tool_id: str, arm_fk, hand_eye: Pose,
                 tree, now: float | None = None) -> ToolEstimate:
        if tool_id not in self.tools:
            raise KeyError(f"unknown tool {tool_id!r}")
        spec = self.tools[tool_id]
        now = graph.latest_time if now is None else now
        track = graph.tracks.get(spec.tag_id)
        if track is not None and now - track.last_seen <= self.max_age:
            base_in_world = tree.lookup("world", "arm_base")
            cam_in_world = base_in_world @ arm_fk[self.wrist_index] @ hand_eye
            grasp = cam_in_world @ track.pose @ spec.mount_offset
            est = ToolEstimate(tool_id=tool_id, grasp_pose=grasp, tracked=True,
                               last_seen=track.last_seen, confidence=track.confidence)
            self._estimates[tool_id] = est
            return est
        prev = self._estimates.get(tool_id)
        if prev is None:
            raise NeverSeen(f"tool {tool_id!r} has never been observed")
        est = ToolEstimate(tool_id=tool_id, grasp_pose=prev.grasp_pose, tracked=False,
                           last_seen=prev.last_seen, confidence=prev.confidence)
        self._estimates[tool_id] = est
        return est


# --- doors ------------------------------------------------------------------

@dataclass
class DoorKinematics:
    """Door joints in the vehicle-tag frame; both axes parallel to its z."""
    joint_starboard: np.ndarray   # T_os: translation vehicle-tag -> starboard hinge
    joint_port: np.ndarray        # T_op
    theta_s0: float               # hinge azimuth at zero door angle
    theta_p0: float

    def __post_init__(self):
        self.joint_starboard = np.asarray(self.joint_starboard, dtype=float)
        self.joint_port = np.asarray(self.joint_port, dtype=float)


def _hinge_angle(radial, theta0):
    x, y = float(radial[0]), float(radial[1])
    if math.hypot(x, y) < 1e-6:
        raise DegenerateGeometry("marker sits on the hinge axis, angle undefined")
    return wrap_angle(math.atan2(y, x) - theta0)


def estimate_door_angles(t_vs, t_vp, doors: DoorKinematics):
    """Door opening angles from the two tracked points on the doors.

    t_vs: vehicle-tag -> starboard-door marker translation.
    t_vp: vehicle-tag -> stereo-camera translation (the camera rides the
    port door).  Angles are wrapped to (-pi, pi].
    """
    theta_s = _hinge_angle(np.asarray(t_vs, dtype=float) - doors.joint_starboard,
                           doors.theta_s0)
    theta_p = _hinge_angle(np.asarray(t_vp, dtype=float) - doors.joint_port,
                           doors.theta_p0)
    return theta_s, theta_p


def door_angles_from_tag_poses(vehicle_tag_in_cam: Pose, starboard_tag_in_cam: Pose,
                               doors: DoorKinematics):
    """Door angles straight from two marker poses seen by the stereo camera."""
    cam_in_vtag = vehicle_tag_in_cam.invert()
    t_vs = (cam_in_vtag @ starboard_tag_in_cam).t
    t_vp = cam_in_vtag.t
    return estimate_door_angles(t_vs, t_vp, doors)


@dataclass
class DoorCameraRig:
    """Calibrated geometry tying both door markers to the stereo camera.

    Everything here is a rigging constant: hinge positions and zero offsets
    (doors), marker sizes, where the starboard marker sits on its door, and
    the camera mount on the port door.  The only unknowns left are the two
    door angles themselves.
    """
    doors: DoorKinematics
    vtag_size: float
    stag_size: float
    stag_radius: float            # starboard marker offset along the door
    stag_lift: float
    camera_mount: Pose            # port-door frame -> camera


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _door_corner_prediction(model, rig: DoorCameraRig, theta_s, theta_p):
    """Corner pixels of both markers as a function of the two door angles."""
    d = rig.doors
    rot_s = _rot_z(d.theta_s0 + theta_s)
    rot_p = _rot_z(d.theta_p0 + theta_p)
    cam_rot = rot_p @ rig.camera_mount.rotation_matrix()
    cam_t = d.joint_port + rot_p @ np.asarray(rig.camera_mount.t)
    stag_local = (np.array([rig.stag_radius, 0.0, rig.stag_lift])
                  + tag_corners_local(rig.stag_size))
    pts = np.vstack([tag_corners_local(rig.vtag_size),
                     d.joint_starboard + stag_local @ rot_s.T])
    return project_points(model, (pts - cam_t) @ cam_rot)


def refine_door_angles(model, vtag_corners, stag_corners, rig: DoorCameraRig,
                       init=(0.0, 0.0), iters: int = 30):
    """Door angles by reprojection fit of both markers' corner pixels.

    A single marker pose read through `estimate_tag_pose` leaves the angles
    hostage to the flattest directions of planar pose estimation (out-of-plane
    tilt, depth from scale).  Fitting the two angles directly against all
    eight corners of both markers uses only well-measured image quantities.
    The basin around the closed-door init covers the whole range over which
    both markers stay in view, so the default seed is fine in practice.
    """
    measured = np.vstack([np.asarray(vtag_corners, dtype=float),
                          np.asarray(stag_corners, dtype=float)])
    x = np.array(init, dtype=float)
    h = 1e-6
    lam = 1e-12      # curvature here is ~(focal length)^2, damping is a formality
    r = (_door_corner_prediction(model, rig, *x) - measured).ravel()
    cost = float(r @ r)
    for _ in range(iters):
        J = np.empty((r.size, 2))
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h
            J[:, k] = ((_door_corner_prediction(model, rig, *(x + dx))
                        - _door_corner_prediction(model, rig, *(x - dx)))
                       .ravel()) / (2 * h)
        g = J.T @ r
        if float(np.linalg.norm(g)) < 1e-8:
            break
        step = np.linalg.solve(J.T @ J + lam * np.eye(2), -g)
        cand = x + step
        rc = (_door_corner_prediction(model, rig, *cand) - measured).ravel()
        cc = float(rc @ rc)
        if cc < cost:
            x, r, cost = cand, rc, cc
            lam = max(lam * 0.3, 1e-12)
            if float(np.linalg.norm(step)) < 1e-8:
                break
        else:
            lam *= 10.0
            if lam > 1e6:
                break
    return wrap_angle(float(x[0])), wrap_angle(float(x[1]))


# --- point clouds -----------------------------------------------------------

@dataclass
class PointCloudParams:
    stride: int = 8               # pixel decimation in both axes
    disparity_step: float = 0.25  # [px] matcher quantization
    max_range: float = 3.0        # [m]


def simulate_point_cloud(primitives, rig, rig_pose: Pose,
                         params: PointCloudParams | None = None) -> np.ndarray:
    """Ray-cast depth image quantized like a block matcher, as (n,3) points
    in the left-camera frame."""
    params = params or PointCloudParams()
    m = rig.left
    R = rig_pose.rotation_matrix()
    points = []
    v = 0.0
    while v < m.height_b:
        u = 0.0
        while u < m.width_b:
            ray_cam = unproject(m, (u, v))
            t, _ = first_hit(primitives, rig_pose.t, R @ ray_cam)
            if t is not None:
                z = t * ray_cam[2]
                if z > 1e-6:
                    d = rig.left.fx_b * rig.baseline / z
                    d_q = round(d / params.disparity_step) * params.disparity_step
                    if d_q > 0:
                        z_q = rig.left.fx_b * rig.baseline / d_q
                        if z_q <= params.max_range:
                            points.append(ray_cam * (z_q / ray_cam[2]))
            u += params.stride
        v += params.stride
    return np.asarray(points) if points else np.empty((0, 3))
