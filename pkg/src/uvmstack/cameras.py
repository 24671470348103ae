"""Camera models, stereo triangulation, and square-marker pose estimation.

Two projection models: plain pinhole for the stereo pair and an equidistant
fisheye (r = f * theta) for the wide-angle wrist camera.  Pixel coordinates
are expressed at the binned resolution: full-resolution coordinates divided
by the binning factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_to_rotvec, quat_from_axis_angle

# Machine-vision sensor behind both lenses: 2448 x 2048 at 3.45 um pitch.
SENSOR_PITCH_M = 3.45e-6
SENSOR_WIDTH_PX = 2448
SENSOR_HEIGHT_PX = 2048
FISHEYE_FOCAL_M = 2.7e-3
STEREO_FOCAL_M = 6.0e-3


class OutsideFov(ValueError):
    pass


class BehindCamera(ValueError):
    pass


class NonPositiveDisparity(ValueError):
    pass


class EpipolarViolation(ValueError):
    pass


class DegenerateCorners(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, msg, residual_px=None):
        super().__init__(msg)
        self.residual_px = residual_px


@dataclass
class PinholeModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = SENSOR_WIDTH_PX
    height: int = SENSOR_HEIGHT_PX
    binning: int = 1

    @property
    def fx_b(self):
        return self.fx / self.binning

    @property
    def fy_b(self):
        return self.fy / self.binning

    @property
    def cx_b(self):
        return self.cx / self.binning

    @property
    def cy_b(self):
        return self.cy / self.binning

    @property
    def width_b(self):
        return self.width / self.binning

    @property
    def height_b(self):
        return self.height / self.binning


@dataclass
class FisheyeModel:
    """Equidistant projection: image radius r = f * theta."""
    f: float
    cx: float
    cy: float
    width: int = SENSOR_WIDTH_PX
    height: int = SENSOR_HEIGHT_PX
    max_theta: float = math.radians(85.0)
    binning: int = 1

    @property
    def f_b(self):
        return self.f / self.binning

    @property
    def cx_b(self):
        return self.cx / self.binning

    @property
    def cy_b(self):
        return self.cy / self.binning

    @property
    def width_b(self):
        return self.width / self.binning

    @property
    def height_b(self):
        return self.height / self.binning


@dataclass
class StereoRig:
    left: PinholeModel
    right: PinholeModel
    baseline: float = 0.2   # [m], right camera at +x of left

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")


def nominal_fisheye(binning: int = 1) -> FisheyeModel:
    f = FISHEYE_FOCAL_M / SENSOR_PITCH_M
    return FisheyeModel(f=f, cx=SENSOR_WIDTH_PX / 2, cy=SENSOR_HEIGHT_PX / 2,
                        binning=binning)


def nominal_stereo(binning: int = 1, baseline: float = 0.2) -> StereoRig:
    f = STEREO_FOCAL_M / SENSOR_PITCH_M
    cam = PinholeModel(fx=f, fy=f, cx=SENSOR_WIDTH_PX / 2, cy=SENSOR_HEIGHT_PX / 2,
                       binning=binning)
    return StereoRig(left=cam, right=PinholeModel(**cam.__dict__), baseline=baseline)


# --- projection -------------------------------------------------------------

def project_points(model, points) -> np.ndarray:
    """Project (n,3) camera-frame points without field-of-view checks."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(model, PinholeModel):
        z = P[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (model.fx * P[:, 0] / z + model.cx) / model.binning
            v = (model.fy * P[:, 1] / z + model.cy) / model.binning
        return np.column_stack([u, v])
    if isinstance(model, FisheyeModel):
        rho = np.hypot(P[:, 0], P[:, 1])
        theta = np.arctan2(rho, P[:, 2])
        r = model.f * theta
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(rho > 1e-12, r / rho, 0.0)
        u = (model.cx + scale * P[:, 0]) / model.binning
        v = (model.cy + scale * P[:, 1]) / model.binning
        return np.column_stack([u, v])
    raise TypeError(f"unsupported camera model {type(model)!r}")


def in_view(model, point) -> bool:
    """True when the camera-frame point projects inside the usable image."""
    p = np.asarray(point, dtype=float)
    if isinstance(model, PinholeModel):
        if p[2] <= 1e-9:
            return False
    else:
        theta = math.atan2(math.hypot(p[0], p[1]), p[2])
        if theta > model.max_theta:
            return False
    u, v = project_points(model, p)[0]
    return 0.0 <= u < model.width_b and 0.0 <= v < model.height_b


def project(model, point) -> np.ndarray:
    """Project one camera-frame point, raising when it cannot be imaged."""
    p = np.asarray(point, dtype=float)
    if isinstance(model, PinholeModel) and p[2] <= 1e-9:
        raise BehindCamera("point is behind the image plane")
    if isinstance(model, FisheyeModel):
        theta = math.atan2(math.hypot(p[0], p[1]), p[2])
        if theta > model.max_theta:
            raise OutsideFov(f"theta {theta:.3f} beyond usable fov {model.max_theta:.3f}")
    uv = project_points(model, p)[0]
    if not (0.0 <= uv[0] < model.width_b and 0.0 <= uv[1] < model.height_b):
        raise OutsideFov(f"pixel {uv} outside image")
    return uv


def unproject(model, pixel) -> np.ndarray:
    """Unit ray in the camera frame through a (binned) pixel."""
    u = pixel[0] * model.binning
    v = pixel[1] * model.binning
    if isinstance(model, PinholeModel):
        ray = np.array([(u - model.cx) / model.fx, (v - model.cy) / model.fy, 1.0])
        return ray / np.linalg.norm(ray)
    dx, dy = u - model.cx, v - model.cy
    r = math.hypot(dx, dy)
    theta = r / model.f
    if r < 1e-12:
        return np.array([0.0, 0.0, 1.0])
    s = math.sin(theta) / r
    return np.array([dx * s, dy * s, math.cos(theta)])


# --- stereo -----------------------------------------------------------------

def triangulate(rig: StereoRig, uv_left, uv_right, epipolar_tol: float = 2.0) -> np.ndarray:
    """Point in the left-camera frame from a rectified pixel pair."""
    m = rig.left
    ul, vl = float(uv_left[0]), float(uv_left[1])
    ur, vr = float(uv_right[0]), float(uv_right[1])
    if abs(vl - vr) > epipolar_tol:
        raise EpipolarViolation(f"row mismatch {abs(vl - vr):.2f} px exceeds {epipolar_tol}")
    d = ul - ur
    if d <= 0.0:
        raise NonPositiveDisparity(f"disparity {d:.3f} px")
    z = m.fx_b * rig.baseline / d
    x = (ul - m.cx_b) * z / m.fx_b
    y = (0.5 * (vl + vr) - m.cy_b) * z / m.fy_b
    return np.array([x, y, z])


def disparity_at(rig: StereoRig, depth: float) -> float:
    return rig.left.fx_b * rig.baseline / depth


# --- square markers ---------------------------------------------------------

@dataclass
class TagDetection:
    tag_id: int
    corners: np.ndarray      # (4,2) binned pixels, counter-clockwise
    camera: str
    timestamp: float

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float)
        if self.corners.shape != (4, 2):
            raise ValueError("corners must be (4,2)")


def tag_corners_local(size: float) -> np.ndarray:
    """Corner coordinates in the tag plane, counter-clockwise from lower-left."""
    h = size / 2.0
    return np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])


def projected_span(corners) -> float:
    """Mean projected edge length of a quad, in pixels."""
    c = np.asarray(corners, dtype=float)
    edges = np.roll(c, -1, axis=0) - c
    return float(np.mean(np.linalg.norm(edges, axis=1)))


def _normalized_coords(model, corners_px) -> np.ndarray:
    """Pixels to ideal-pinhole normalized coordinates (x/z, y/z)."""
    out = np.empty((len(corners_px), 2))
    for i, uv in enumerate(corners_px):
        ray = unproject(model, uv)
        if ray[2] <= 1e-9:
            # behind or at 90 deg; clamp so the homography stays finite
            ray = np.array([ray[0], ray[1], 1e-6])
        out[i] = ray[:2] / ray[2]
    return out


def _homography(src_xy, dst_xy) -> np.ndarray:
    """DLT homography with isotropic normalization of both point sets."""
    def normalizer(pts):
        c = pts.mean(axis=0)
        scale = math.sqrt(2) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-12)
        T = np.array([[scale, 0, -scale * c[0]],
                      [0, scale, -scale * c[1]],
                      [0, 0, 1.0]])
        return T

    Ts, Td = normalizer(src_xy), normalizer(dst_xy)
    A = []
    for (x, y), (u, v) in zip(src_xy, dst_xy):
        xs, ys = Ts[0, 0] * x + Ts[0, 2], Ts[1, 1] * y + Ts[1, 2]
        us, vs = Td[0, 0] * u + Td[0, 2], Td[1, 1] * v + Td[1, 2]
        A.append([-xs, -ys, -1, 0, 0, 0, us * xs, us * ys, us])
        A.append([0, 0, 0, -xs, -ys, -1, vs * xs, vs * ys, vs])
    _, _, Vt = np.linalg.svd(np.asarray(A))
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / H[2, 2]


def _pose_from_homography(H) -> Pose:
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 0.5 * (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1, r2, t = h1 / lam, h2 / lam, h3 / lam
    if t[2] < 0:
        r1, r2, t = -r1, -r2, -t
    R = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(R)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return Pose.from_matrix(T)


def _check_corner_geometry(corners_px):
    c = np.asarray(corners_px, dtype=float)
    for skip in range(4):
        tri = np.delete(c, skip, axis=0)
        a, b = tri[1] - tri[0], tri[2] - tri[0]
        area = 0.5 * abs(a[0] * b[1] - a[1] * b[0])
        if area < 1e-3:
            raise DegenerateCorners("three marker corners are collinear")


def _corner_residual(model, x, obj_pts, corners_px) -> np.ndarray:
    rot = quat_from_axis_angle(x[:3], np.linalg.norm(x[:3])) if np.linalg.norm(x[:3]) > 1e-12 \
        else np.array([1.0, 0.0, 0.0, 0.0])
    pose = Pose(rot, x[3:])
    cam_pts = pose.apply(obj_pts)
    return (project_points(model, cam_pts) - corners_px).ravel()


def _rotvec_matrices(rv) -> np.ndarray:
    """Rodrigues rotation matrices for an (n,3) batch of rotation vectors."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=1)
    k = rv / np.where(angle > 1e-12, angle, 1.0)[:, None]
    K = np.zeros((len(rv), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    R = np.eye(3) + np.sin(angle)[:, None, None] * K \
        + (1.0 - np.cos(angle))[:, None, None] * (K @ K)
    R[angle <= 1e-12] = np.eye(3)
    return R


def _corner_jacobian(model, x, obj_pts, corners_px, h: float = 1e-6) -> np.ndarray:
    """Central-difference reprojection Jacobian, all 12 perturbations in one
    batched projection call."""
    xs = x + np.vstack([np.eye(6) * h, -np.eye(6) * h])
    R = _rotvec_matrices(xs[:, :3])
    pts = obj_pts @ R.transpose(0, 2, 1) + xs[:, None, 3:]
    px = project_points(model, pts.reshape(-1, 3)).reshape(12, -1)
    res = px - corners_px.ravel()
    return (res[:6] - res[6:]).T / (2 * h)


def estimate_tag_pose(model, corners_px, size: float,
                      max_iters: int = 100, fail_residual_px: float = 25.0):
    """Camera-frame pose of a square marker from its four corner pixels.

    Homography initialization on undistorted normalized coordinates, then
    Levenberg refinement of the full-model reprojection error.  Returns
    (pose, mean residual in pixels).
    """
    corners_px = np.asarray(corners_px, dtype=float)
    _check_corner_geometry(corners_px)
    obj = tag_corners_local(size)
    norm = _normalized_coords(model, corners_px)
    H = _homography(obj[:, :2], norm)
    init = _pose_from_homography(H)

    x = np.concatenate([quat_to_rotvec(init.q), init.t])
    r = _corner_residual(model, x, obj, corners_px)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iters):
        J = _corner_jacobian(model, x, obj, corners_px)
        g = J.T @ r
        if np.linalg.norm(g) < 1e-12:
            break
        # x is unchanged while a step is being rejected, so J is too: retry
        # with a stiffer lam instead of rebuilding the Jacobian
        improved = converged = False
        while lam <= 1e8:
            step = np.linalg.solve(J.T @ J + lam * np.eye(6), -g)
            if np.linalg.norm(step) < 1e-14:
                break
            x_new = x + step
            r_new = _corner_residual(model, x_new, obj, corners_px)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                # relative: at the noise floor the cost plateaus well above zero
                converged = cost - cost_new < 1e-12 * cost + 1e-18
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * 0.1, 1e-12)
                improved = True
                break
            lam *= 10.0
        if converged or not improved:
            break
    mean_resid = float(np.mean(np.linalg.norm(r.reshape(4, 2), axis=1)))
    if mean_resid > fail_residual_px:
        raise NoConvergence(f"marker refinement stalled at {mean_resid:.1f} px",
                            residual_px=mean_resid)
    angle = np.linalg.norm(x[:3])
    q = quat_from_axis_angle(x[:3], angle) if angle > 1e-12 else np.array([1.0, 0, 0, 0])
    return Pose(q, x[3:]), mean_resid


# --- resolution and range ---------------------------------------------------

def _effective_focal(model) -> float:
    return model.fx if isinstance(model, PinholeModel) else model.f


def metric_pixel_resolution(model, depth: float) -> float:
    """Scene distance covered by one (binned) pixel at the given depth [m]."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    return depth * model.binning / _effective_focal(model)


def max_detection_range(model, marker_size: float, min_pixels: float) -> float:
    """Farthest distance at which a marker still spans min_pixels."""
    if marker_size <= 0 or min_pixels <= 0:
        raise ValueError("marker_size and min_pixels must be positive")
    return (_effective_focal(model) / model.binning) * marker_size / min_pixels
