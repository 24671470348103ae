"""Deterministic desk-scale world: vehicle, doors, arm, tools, cameras.

All stochastic effects (feedback noise, corner noise) draw from one seeded
generator owned by the world, so a fixed seed plus a fixed command sequence
reproduces the state and observation streams exactly.

The actuator model is a rate-limited first-order lag driving the joint
through a symmetric backlash deadband; feedback adds Gaussian noise and
11-bit encoder quantization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_rotate
from .kinematics import ArmModel, default_arm, encoder_resolution, fk
from .cameras import (
    FisheyeModel,
    StereoRig,
    TagDetection,
    in_view,
    max_detection_range,
    nominal_fisheye,
    nominal_stereo,
    project_points,
    projected_span,
    tag_corners_local,
)
from .perception import DoorKinematics, PointCloudParams, ToolSpec, simulate_point_cloud
from .shapes import Box, CapsulePrim, Plane, Sphere, first_hit

ENCODER_BITS = 11
SCHEMA_VERSION = 1


class ParseError(ValueError):
    pass


class SchemaVersionMismatch(ParseError):
    pass


@dataclass
class ActuatorState:
    """One hydraulic joint: lag state (ram), output position, and defects."""
    setpoint: float = 0.0
    position: float = 0.0
    ram: float = 0.0
    bias: float = 0.0                 # [rad] constant servo offset
    backlash: float = math.radians(0.3)   # [rad] deadband halfwidth
    rate_limit: float = math.radians(30)  # [rad/s]
    tau: float = 0.15                 # [s] first-order time constant
    noise_std: float = math.radians(0.03)  # [rad] feedback noise

    def step(self, dt: float):
        u = self.setpoint + self.bias
        desired = (u - self.ram) * (1.0 - math.exp(-dt / self.tau))
        max_step = self.rate_limit * dt
        self.ram += float(np.clip(desired, -max_step, max_step))
        if self.ram - self.position > self.backlash:
            self.position = self.ram - self.backlash
        elif self.position - self.ram > self.backlash:
            self.position = self.ram + self.backlash

    def feedback(self, lo: float, hi: float, rng) -> float:
        raw = self.position + rng.normal(0.0, self.noise_std) if self.noise_std > 0 \
            else self.position
        step = encoder_resolution(ENCODER_BITS, hi - lo)
        count = int(np.clip(round((raw - lo) / step), 0, 2 ** ENCODER_BITS - 1))
        return lo + count * step


@dataclass
class DoorSim:
    hinge: np.ndarray          # vehicle-tag frame
    theta0: float
    angle: float = 0.0
    tag_id: int | None = None
    tag_radius: float = 0.0
    tag_lift: float = 0.0
    tag_size: float = 0.05

    def __post_init__(self):
        self.hinge = np.asarray(self.hinge, dtype=float)

    def frame(self) -> Pose:
        return Pose(t=self.hinge) @ Pose.from_axis_angle((0, 0, 1), self.theta0 + self.angle)


@dataclass
class ToolSim:
    spec: ToolSpec
    pose: Pose                 # world frame, grasp point
    home_pose: Pose


@dataclass
class ObservationSet:
    timestamp: float
    detections: list
    joint_feedback: np.ndarray
    cloud: np.ndarray | None = None
    cloud_frame: str = "stereo_left"


class World:
    """Full simulation state plus camera geometry and the tag registry."""

    GRASP_POS_TOL = 0.025      # [m]
    GRASP_ROT_TOL = 0.35       # [rad]

    def __init__(self, arm: ArmModel, seed: int = 0):
        self.arm = arm
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.time = 0.0
        self.vehicle_pose = Pose.identity()
        self.vtag_offset = Pose.identity()       # vehicle -> vehicle tag
        self.vtag_id = 100
        self.vtag_size = 0.08
        self.door_starboard = DoorSim(hinge=np.zeros(3), theta0=0.0)
        self.door_port = DoorSim(hinge=np.zeros(3), theta0=0.0)
        self.arm_mount = Pose.identity()         # starboard door -> arm base
        self.stereo_mount = Pose.identity()      # port door -> stereo left
        self.actuators = [ActuatorState() for _ in range(arm.dof)]
        self.tools: dict = {}
        self.deck_tags: dict = {}                # tag_id -> (Pose, size)
        self.terrain: list = []
        self.named_poses: dict = {}
        self.fisheye: FisheyeModel = nominal_fisheye(binning=2)
        self.stereo: StereoRig = nominal_stereo(binning=2)
        self.hand_eye = Pose.identity()          # wrist link -> fisheye
        self.min_tag_pixels = 20.0
        self.cloud_params = PointCloudParams()
        self.gripper_open = True
        self.grasped_tool: str | None = None
        self._grasp_offset = Pose.identity()
        self.sample_marker: Pose | None = None
        self.allowed_contacts: set = set()

    # --- frames -------------------------------------------------------------

    def vtag_in_world(self) -> Pose:
        return self.vehicle_pose @ self.vtag_offset

    def arm_base_in_world(self) -> Pose:
        return self.vtag_in_world() @ self.door_starboard.frame() @ self.arm_mount

    def stereo_in_world(self) -> Pose:
        return self.vtag_in_world() @ self.door_port.frame() @ self.stereo_mount

    def fisheye_in_world(self, q=None) -> Pose:
        q = self.q() if q is None else q
        return self.arm_base_in_world() @ fk(self.arm, q)[-2] @ self.hand_eye

    def ee_in_world(self, q=None) -> Pose:
        q = self.q() if q is None else q
        return self.arm_base_in_world() @ fk(self.arm, q)[-1]

    def q(self) -> np.ndarray:
        return np.array([a.position for a in self.actuators])

    # --- commands -----------------------------------------------------------

    def set_setpoints(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.arm.dof,):
            raise ValueError(f"expected {self.arm.dof} setpoints")
        q = self.arm.clamp(q)
        for a, qi in zip(self.actuators, q):
            a.setpoint = float(qi)

    def setpoints(self) -> np.ndarray:
        return np.array([a.setpoint for a in self.actuators])

    def set_door_angles(self, starboard: float | None = None, port: float | None = None):
        if starboard is not None:
            self.door_starboard.angle = float(starboard)
        if port is not None:
            self.door_port.angle = float(port)

    def set_sample_marker(self, pose: Pose):
        self.sample_marker = pose

    def close_gripper(self):
        self.gripper_open = False
        if self.grasped_tool is not None:
            return
        ee = self.ee_in_world()
        for tool_id, tool in self.tools.items():
            if ee.translation_distance(tool.pose) <= self.GRASP_POS_TOL:
                grip_x = quat_rotate(ee.q, np.array([1.0, 0.0, 0.0]))
                tool_down = quat_rotate(tool.pose.q, np.array([0.0, 0.0, -1.0]))
                if math.acos(float(np.clip(grip_x @ tool_down, -1, 1))) <= self.GRASP_ROT_TOL:
                    self.grasped_tool = tool_id
                    self._grasp_offset = ee.invert() @ tool.pose
                    break

    def open_gripper(self):
        self.gripper_open = True
        self.grasped_tool = None

    # --- dynamics -----------------------------------------------------------

    def step(self, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        for a, (lo, hi) in zip(self.actuators, self.arm.joint_limits):
            a.step(dt)
            a.position = float(np.clip(a.position, lo, hi))
        if self.grasped_tool is not None:
            self.tools[self.grasped_tool].pose = self.ee_in_world() @ self._grasp_offset
        self.time += dt

    def joint_feedback(self) -> np.ndarray:
        return np.array([a.feedback(lo, hi, self.rng)
                         for a, (lo, hi) in zip(self.actuators, self.arm.joint_limits)])

    # --- observation --------------------------------------------------------

    def tag_layout(self) -> dict:
        """tag_id -> (world pose, size) for everything currently in the scene."""
        vtag = self.vtag_in_world()
        layout = {self.vtag_id: (vtag, self.vtag_size)}
        door = self.door_starboard
        if door.tag_id is not None:
            layout[door.tag_id] = (
                vtag @ door.frame() @ Pose(t=(door.tag_radius, 0.0, door.tag_lift)),
                door.tag_size)
        for tag_id, (pose, size) in self.deck_tags.items():
            layout[tag_id] = (pose, size)
        for tool in self.tools.values():
            layout[tool.spec.tag_id] = (
                tool.pose @ tool.spec.mount_offset.invert(), tool.spec.tag_size)
        return layout

    def _visible_corners(self, model, cam_in_world: Pose, tag_pose: Pose, size: float):
        normal = quat_rotate(tag_pose.q, np.array([0.0, 0.0, 1.0]))
        to_cam = cam_in_world.t - tag_pose.t
        dist = float(np.linalg.norm(to_cam))
        if dist < 1e-6 or normal @ to_cam <= 0:
            return None     # facing away
        if dist > max_detection_range(model, size, self.min_tag_pixels):
            return None
        cam_inv = cam_in_world.invert()
        corners_world = tag_pose.apply(tag_corners_local(size))
        corners_cam = np.array([cam_inv.apply(c) for c in corners_world])
        if not all(in_view(model, c) for c in corners_cam):
            return None
        for cw in corners_world:
            ray = cw - cam_in_world.t
            d = float(np.linalg.norm(ray))
            t_hit, _ = first_hit(self.terrain, cam_in_world.t, ray / d)
            if t_hit is not None and t_hit < d - 1e-6:
                return None     # occluded
        px = project_points(model, corners_cam)
        if projected_span(px) < self.min_tag_pixels:
            return None
        return px

    def observe(self, noise_std_px: float = 0.5, with_cloud: bool = False,
                cameras=None) -> ObservationSet:
        """Render tag detections; `cameras` limits which views are traced."""
        dets = []
        layout = self.tag_layout()
        views = [("fisheye", self.fisheye, self.fisheye_in_world()),
                 ("stereo_left", self.stereo.left, self.stereo_in_world())]
        if cameras is not None:
            views = [v for v in views if v[0] in cameras]
        for cam_name, model, cam_pose in views:
            for tag_id in sorted(layout):
                tag_pose, size = layout[tag_id]
                px = self._visible_corners(model, cam_pose, tag_pose, size)
                if px is None:
                    continue
                if noise_std_px > 0:
                    px = px + self.rng.normal(0.0, noise_std_px, size=px.shape)
                    px[:, 0] = np.clip(px[:, 0], 0.0, model.width_b - 1e-6)
                    px[:, 1] = np.clip(px[:, 1], 0.0, model.height_b - 1e-6)
                dets.append(TagDetection(tag_id=tag_id, corners=px,
                                         camera=cam_name, timestamp=self.time))
        cloud = None
        if with_cloud:
            cloud = simulate_point_cloud(self.terrain, self.stereo,
                                         self.stereo_in_world(), self.cloud_params)
        return ObservationSet(timestamp=self.time, detections=dets,
                              joint_feedback=self.joint_feedback(), cloud=cloud)

    # --- snapshots ----------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-serializable full dynamic state (for logs and replay checks)."""
        return {
            "time": round(self.time, 9),
            "q": [round(float(v), 12) for v in self.q()],
            "setpoints": [round(float(a.setpoint), 12) for a in self.actuators],
            "ram": [round(float(a.ram), 12) for a in self.actuators],
            "doors": {"starboard": self.door_starboard.angle,
                      "port": self.door_port.angle},
            "gripper_open": self.gripper_open,
            "grasped_tool": self.grasped_tool,
            "tools": {tid: {"xyz": [round(float(v), 12) for v in t.pose.t],
                            "quat": [round(float(v), 12) for v in t.pose.q]}
                      for tid, t in sorted(self.tools.items())},
        }


# --- scene files ------------------------------------------------------------

def _pose_from_spec(spec, where: str) -> Pose:
    if not isinstance(spec, dict):
        raise ParseError(f"{where}: pose must be an object")
    xyz = spec.get("xyz", (0.0, 0.0, 0.0))
    if "quat" in spec:
        return Pose(spec["quat"], xyz)
    rpy = spec.get("rpy_deg", (0.0, 0.0, 0.0))
    try:
        return Pose.from_rpy(*[math.radians(float(v)) for v in rpy], tuple(xyz))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad pose ({exc})") from exc


def pose_to_spec(pose: Pose) -> dict:
    return {"xyz": [float(v) for v in pose.t], "quat": [float(v) for v in pose.q]}


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ParseError(f"missing required field {where}.{key}" if where else
                         f"missing required field {key}")
    return d[key]


_PRIM_BUILDERS = {
    "box": lambda p, s: Box(pose=p, size=s["size"], name=s.get("name", "box")),
    "sphere": lambda p, s: Sphere(pose=p, radius=s["radius"], name=s.get("name", "sphere")),
    "capsule": lambda p, s: CapsulePrim(pose=p, length=s["length"], radius=s["radius"],
                                        name=s.get("name", "capsule")),
    "plane": lambda p, s: Plane(pose=p, half_extents=s.get("half_extents", (50.0, 50.0)),
                                name=s.get("name", "plane")),
}


def load_scene(source, seed: int | None = None) -> World:
    """Build a World from a scene file path, file object, or parsed dict."""
    if isinstance(source, dict):
        data = source
    elif hasattr(source, "read"):
        data = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"scene is not valid JSON: line {exc.lineno}: {exc.msg}") from exc

    version = _require(data, "version", "")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"scene version {version}, expected {SCHEMA_VERSION}")

    arm_spec = _require(data, "arm", "")
    if arm_spec.get("model", "default") != "default":
        raise ParseError("arm.model: only the bundled default arm is available")
    world = World(default_arm(), seed=data.get("seed", 0) if seed is None else seed)

    world.vehicle_pose = _pose_from_spec(
        _require(_require(data, "vehicle", ""), "pose", "vehicle"), "vehicle.pose")
    vtag = _require(data, "vehicle_tag", "")
    world.vtag_offset = _pose_from_spec(_require(vtag, "offset", "vehicle_tag"),
                                        "vehicle_tag.offset")
    world.vtag_id = int(vtag.get("tag_id", 100))
    world.vtag_size = float(vtag.get("size", 0.08))

    doors = _require(data, "doors", "")
    for side, attr in (("starboard", "door_starboard"), ("port", "door_port")):
        d = _require(doors, side, "doors")
        door = DoorSim(hinge=_require(d, "hinge", f"doors.{side}"),
                       theta0=math.radians(float(_require(d, "theta0_deg", f"doors.{side}"))),
                       angle=math.radians(float(d.get("angle_deg", 0.0))),
                       tag_id=d.get("tag_id"),
                       tag_radius=float(d.get("tag_radius", 0.0)),
                       tag_lift=float(d.get("tag_lift", 0.0)),
                       tag_size=float(d.get("tag_size", 0.05)))
        setattr(world, attr, door)
    world.arm_mount = _pose_from_spec(_require(doors["starboard"], "arm_mount",
                                               "doors.starboard"), "doors.starboard.arm_mount")
    world.stereo_mount = _pose_from_spec(_require(doors["port"], "stereo_mount",
                                                  "doors.port"), "doors.port.stereo_mount")

    cams = _require(data, "cameras", "")
    fisheye_spec = _require(cams, "fisheye", "cameras")
    world.fisheye = nominal_fisheye(binning=int(fisheye_spec.get("binning", 2)))
    if "max_theta_deg" in fisheye_spec:
        world.fisheye.max_theta = math.radians(float(fisheye_spec["max_theta_deg"]))
    world.hand_eye = _pose_from_spec(_require(fisheye_spec, "hand_eye", "cameras.fisheye"),
                                     "cameras.fisheye.hand_eye")
    stereo_spec = _require(cams, "stereo", "cameras")
    world.stereo = nominal_stereo(binning=int(stereo_spec.get("binning", 2)),
                                  baseline=float(stereo_spec.get("baseline", 0.2)))
    world.min_tag_pixels = float(cams.get("min_tag_pixels", 20.0))

    for t in _require(data, "tools", ""):
        spec = ToolSpec(tool_id=_require(t, "id", "tools[]"),
                        tag_id=int(_require(t, "tag_id", "tools[]")),
                        mount_offset=_pose_from_spec(t.get("mount_offset", {}),
                                                     "tools[].mount_offset"),
                        tag_size=float(t.get("tag_size", 0.05)))
        pose = _pose_from_spec(_require(t, "pose", "tools[]"), "tools[].pose")
        world.tools[spec.tool_id] = ToolSim(spec=spec, pose=pose, home_pose=pose.copy())

    for tag in data.get("deck_tags", []):
        world.deck_tags[int(_require(tag, "tag_id", "deck_tags[]"))] = (
            _pose_from_spec(_require(tag, "pose", "deck_tags[]"), "deck_tags[].pose"),
            float(tag.get("size", 0.08)))

    for prim in _require(data, "terrain", ""):
        kind = _require(prim, "type", "terrain[]")
        if kind not in _PRIM_BUILDERS:
            raise ParseError(f"terrain[]: unknown primitive type {kind!r}")
        pose = _pose_from_spec(prim.get("pose", {}), "terrain[].pose")
        try:
            world.terrain.append(_PRIM_BUILDERS[kind](pose, prim))
        except KeyError as exc:
            raise ParseError(f"terrain[] {kind}: missing field {exc}") from exc

    for name, q in _require(data, "named_poses", "").items():
        q = np.array([math.radians(float(v)) for v in q])
        if q.shape != (world.arm.dof,):
            raise ParseError(f"named_poses.{name}: expected {world.arm.dof} angles")
        world.named_poses[name] = q

    act = data.get("actuators", {})
    biases = act.get("bias_deg", [0.0] * world.arm.dof)
    if len(biases) != world.arm.dof:
        raise ParseError("actuators.bias_deg: wrong length")
    for a, b in zip(world.actuators, biases):
        a.bias = math.radians(float(b))
        a.backlash = math.radians(float(act.get("backlash_deg", 0.3)))
        a.rate_limit = math.radians(float(act.get("rate_limit_dps", 30.0)))
        a.tau = float(act.get("tau", 0.15))
        a.noise_std = math.radians(float(act.get("noise_std_deg", 0.03)))

    if "sample_marker" in data:
        world.sample_marker = _pose_from_spec(data["sample_marker"], "sample_marker")
    world.allowed_contacts = {tuple(pair) for pair in data.get("allowed_contacts", [])}

    if "start_pose" in data and data["start_pose"] in world.named_poses:
        q0 = world.named_poses[data["start_pose"]]
        for a, qi in zip(world.actuators, q0):
            a.setpoint = a.ram = a.position = float(qi)
    return world


def testbed_scene_dict() -> dict:
    """The bundled desk-scale scene: vehicle with two doors, three tools on a
    tray, a sample site, and both cameras."""
    return {
        "version": 1,
        "seed": 7,
        "arm": {"model": "default"},
        "vehicle": {"pose": {"xyz": [0.0, -0.45, 0.25]}},
        "vehicle_tag": {"offset": {"xyz": [0.0, 0.3, 0.26]}, "tag_id": 100, "size": 0.08},
        "doors": {
            "starboard": {
                "hinge": [0.3, -0.1, -0.05], "theta0_deg": 90.0, "angle_deg": 0.0,
                "tag_id": 101, "tag_radius": 0.12, "tag_lift": 0.02, "tag_size": 0.05,
                "arm_mount": {"xyz": [0.12, 0.0, 0.15]},
            },
            "port": {
                "hinge": [-0.3, -0.1, -0.05], "theta0_deg": 90.0, "angle_deg": 0.0,
                "stereo_mount": {"xyz": [0.35, 0.0, 1.1], "rpy_deg": [180.0, 0.0, 90.0]},
            },
        },
        "cameras": {
            "fisheye": {"binning": 2, "hand_eye": {"xyz": [0.05, 0.0, 0.05],
                                                   "rpy_deg": [0.0, 90.0, 0.0]}},
            "stereo": {"binning": 2, "baseline": 0.2},
            "min_tag_pixels": 20,
        },
        "tools": [
            {"id": "pushcore", "tag_id": 1, "tag_size": 0.05,
             "pose": {"xyz": [0.30, 0.32, 0.135]}, "mount_offset": {}},
            {"id": "slurpgun", "tag_id": 2, "tag_size": 0.05,
             "pose": {"xyz": [0.40, 0.32, 0.135]}, "mount_offset": {}},
            {"id": "probe", "tag_id": 3, "tag_size": 0.05,
             "pose": {"xyz": [0.35, 0.44, 0.135]}, "mount_offset": {}},
        ],
        "deck_tags": [
            {"tag_id": 50, "pose": {"xyz": [0.1, 0.3, 0.001]}, "size": 0.08},
        ],
        "terrain": [
            {"type": "plane", "name": "deck", "pose": {"xyz": [0.0, 0.0, 0.0]},
             "half_extents": [3.0, 3.0]},
            {"type": "box", "name": "hull", "pose": {"xyz": [0.0, -0.45, 0.25]},
             "size": [0.8, 0.5, 0.5]},
            {"type": "box", "name": "tooltray", "pose": {"xyz": [0.35, 0.37, 0.06]},
             "size": [0.3, 0.24, 0.12]},
            {"type": "box", "name": "sample_site", "pose": {"xyz": [-0.35, 0.4, 0.05]},
             "size": [0.25, 0.25, 0.1]},
        ],
        "named_poses": {
            "home": [0.0, -55.0, 95.0, 0.0, 50.0, 0.0, 0.0],
            "stow": [0.0, -75.0, 115.0, 0.0, 40.0, 0.0, 0.0],
            "tooltray_view": [-7.2, -55.5, 119.5, 62.5, 12.7, -22.8, 112.9],
        },
        "actuators": {
            "bias_deg": [0.05, -0.08, 0.06, 0.0, 0.1, -0.05, 0.0],
            "backlash_deg": 0.1, "rate_limit_dps": 60.0, "tau": 0.12,
            "noise_std_deg": 0.03,
        },
        "sample_marker": {"xyz": [-0.35, 0.4, 0.16], "rpy_deg": [0.0, 0.0, 0.0]},
        "allowed_contacts": [["link7", "tooltray"], ["link7", "sample_site"]],
        "start_pose": "home",
    }


def bundled_scene_path():
    from importlib.resources import files
    return files("uvmstack") / "scenes" / "testbed.scene"


def load_bundled_scene(seed: int | None = None) -> World:
    with bundled_scene_path().open("r", encoding="utf-8") as fh:
        return load_scene(fh, seed=seed)
