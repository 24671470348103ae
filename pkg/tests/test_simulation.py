import copy
import json
import math

import numpy as np
import pytest

from uvmstack.geometry import Pose
from uvmstack.kinematics import encoder_resolution, fk, solve_ik_restarts
from uvmstack.cameras import estimate_tag_pose
from uvmstack.calibration import JointTrack, estimate_joint_response
from uvmstack.shapes import Box
from uvmstack.simulation import (
    testbed_scene_dict as scene_dict,
    ENCODER_BITS,
    ActuatorState,
    ParseError,
    SchemaVersionMismatch,
    World,
    load_bundled_scene,
    load_scene,

)

DEG = math.pi / 180.0


def settle(act: ActuatorState, duration: float, dt: float = 0.005):
    for _ in range(int(round(duration / dt))):
        act.step(dt)


# --- actuator model ---------------------------------------------------------

def test_settles_low_when_approaching_from_below():
    act = ActuatorState(bias=1.5 * DEG, backlash=0.3 * DEG)
    act.setpoint = 8 * DEG
    settle(act, 3.0)
    assert act.position == pytest.approx((8 + 1.5 - 0.3) * DEG, abs=1e-7)


def test_settles_high_when_approaching_from_above():
    act = ActuatorState(bias=1.5 * DEG, backlash=0.3 * DEG)
    act.setpoint = 8 * DEG
    settle(act, 3.0)
    act.setpoint = 0.0
    settle(act, 3.0)
    assert act.position == pytest.approx((0 + 1.5 + 0.3) * DEG, abs=1e-7)


def test_direction_split_is_twice_backlash():
    b = 0.22 * DEG
    act = ActuatorState(bias=-0.7 * DEG, backlash=b)
    act.setpoint = 5 * DEG
    settle(act, 3.0)
    up = act.position
    act.setpoint = 10 * DEG
    settle(act, 3.0)
    act.setpoint = 5 * DEG
    settle(act, 3.0)
    assert act.position - up == pytest.approx(2 * b, abs=1e-7)


def test_rate_limit_bounds_velocity():
    act = ActuatorState(rate_limit=30 * DEG, tau=0.05)
    act.setpoint = 60 * DEG
    dt, prev, vmax = 0.01, 0.0, 0.0
    for _ in range(400):
        act.step(dt)
        vmax = max(vmax, abs(act.position - prev) / dt)
        prev = act.position
    assert vmax <= 30 * DEG + 1e-9


@pytest.mark.parametrize("target_deg", [3.0, -12.0, 45.0])
def test_settle_time_bound(target_deg):
    # worst case: rate-limited phase plus a few time constants
    act = ActuatorState(bias=0.4 * DEG, backlash=0.15 * DEG)
    t_bound = abs(target_deg * DEG) / act.rate_limit + 8 * act.tau
    act.setpoint = target_deg * DEG
    settle(act, t_bound)
    expected = target_deg * DEG + act.bias - math.copysign(act.backlash, target_deg)
    assert abs(act.position - expected) < encoder_resolution(ENCODER_BITS, 280 * DEG)


def test_feedback_is_quantized_to_encoder_grid():
    act = ActuatorState(noise_std=0.0)
    act.position = 0.123456
    lo, hi = -140 * DEG, 140 * DEG
    fb = act.feedback(lo, hi, np.random.default_rng(0))
    step = encoder_resolution(ENCODER_BITS, hi - lo)
    assert abs((fb - lo) / step - round((fb - lo) / step)) < 1e-9
    assert abs(fb - act.position) <= step / 2 + 1e-12


def test_response_estimator_recovers_actuator_defects():
    act = ActuatorState(bias=1.1 * DEG, backlash=0.2 * DEG, noise_std=0.02 * DEG)
    rng = np.random.default_rng(3)
    lo, hi = -140 * DEG, 140 * DEG
    hz, hold = 100.0, 1.4
    cmds_deg = [0, 6, 12, 6, 0, -6, 0, 8, 16, 8, 0, 10, 4, 12]
    t, cmd, meas = [], [], []
    k = 0
    for c in cmds_deg:
        act.setpoint = c * DEG
        for _ in range(int(hold * hz)):
            act.step(1.0 / hz)
            t.append(k / hz)
            cmd.append(c * DEG)
            meas.append(act.feedback(lo, hi, rng))
            k += 1
    prof = estimate_joint_response(JointTrack(np.array(t), np.array(cmd)),
                                   JointTrack(np.array(t), np.array(meas)))
    assert prof.bias == pytest.approx(1.1 * DEG, abs=0.06 * DEG)
    assert prof.hysteresis_width == pytest.approx(0.4 * DEG, abs=0.08 * DEG)


# --- world stepping and grasping -------------------------------------------

def world_at(named: str) -> World:
    w = load_scene(scene_dict())
    for a, qi in zip(w.actuators, w.named_poses[named]):
        a.setpoint = a.ram = a.position = float(qi)
    return w


def teleport(w: World, q):
    for a, qi in zip(w.actuators, q):
        a.setpoint = a.ram = a.position = float(qi)


def grasp_config(w: World, tool_id: str):
    tool = w.tools[tool_id]
    target = tool.pose @ Pose.from_axis_angle((0, 1, 0), math.pi / 2)
    return solve_ik_restarts(w.arm, w.arm_base_in_world().invert() @ target,
                             seed=np.deg2rad([0, -30, 80, 0, 40, 0, 0]),
                             rng=np.random.default_rng(11))


def test_gripper_attaches_tool_within_tolerance():
    w = world_at("home")
    teleport(w, grasp_config(w, "pushcore"))
    w.close_gripper()
    assert w.grasped_tool == "pushcore"
    ee0 = w.ee_in_world()
    rel = ee0.invert() @ w.tools["pushcore"].pose
    w.set_setpoints(w.named_poses["home"])
    for _ in range(100):
        w.step(0.02)
    rel2 = w.ee_in_world().invert() @ w.tools["pushcore"].pose
    assert rel.translation_distance(rel2) < 1e-12   # rides the gripper rigidly
    assert w.tools["pushcore"].pose.translation_distance(
        w.tools["pushcore"].home_pose) > 0.05
    w.open_gripper()
    dropped = w.tools["pushcore"].pose.copy()
    w.set_setpoints(np.zeros(7))
    for _ in range(50):
        w.step(0.02)
    assert w.tools["pushcore"].pose.translation_distance(dropped) < 1e-12


def test_gripper_ignores_distant_tool():
    w = world_at("home")
    w.close_gripper()
    assert w.grasped_tool is None


def test_gripper_rejects_bad_approach_direction():
    w = world_at("home")
    q = grasp_config(w, "pushcore")
    tool = w.tools["pushcore"]
    ee = w.arm_base_in_world() @ fk(w.arm, q)[-1]
    # keep the position but roll the tool handle sideways
    tool.pose = Pose.from_axis_angle((1, 0, 0), math.pi / 2, ee.t)
    teleport(w, q)
    w.close_gripper()
    assert w.grasped_tool is None


def test_joint_limits_enforced_during_step():
    w = world_at("home")
    with pytest.raises(ValueError):
        w.set_setpoints(np.zeros(3))
    w.set_setpoints(np.full(7, 10.0))   # way past every limit: clamped
    for _ in range(2000):
        w.step(0.01)
    q = w.q()
    for qi, (lo, hi) in zip(q, w.arm.joint_limits):
        assert lo - 1e-9 <= qi <= hi + 1e-9


# --- observation gating -----------------------------------------------------

def detected(obs, camera, tag_id):
    return any(d.camera == camera and d.tag_id == tag_id for d in obs.detections)


def test_flipped_tag_not_seen():
    w = world_at("home")
    assert detected(w.observe(0.0), "stereo_left", 50)
    pose, size = w.deck_tags[50]
    w.deck_tags[50] = (pose @ Pose.from_axis_angle((1, 0, 0), math.pi), size)
    assert not detected(w.observe(0.0), "stereo_left", 50)


def test_small_tag_out_of_range():
    w = world_at("home")
    pose, _ = w.deck_tags[50]
    w.deck_tags[50] = (pose, 0.004)     # 4 mm marker: below range at ~1.4 m
    obs = w.observe(0.0)
    assert not detected(obs, "stereo_left", 50)
    assert not detected(obs, "fisheye", 50)


def test_occluder_blocks_line_of_sight():
    w = world_at("home")
    cam = w.stereo_in_world().t
    tag = w.deck_tags[50][0].t
    mid = (cam + tag) / 2
    w.terrain.append(Box(pose=Pose(t=mid), size=(0.3, 0.3, 0.02), name="lid"))
    assert not detected(w.observe(0.0), "stereo_left", 50)


def test_span_gate_drops_marginal_tags():
    w = world_at("home")
    w.min_tag_pixels = 1e5
    assert w.observe(0.0).detections == []


def test_detection_matches_estimator_round_trip():
    w = world_at("tooltray_view")
    obs = w.observe(0.0)
    det = next(d for d in obs.detections if d.camera == "fisheye" and d.tag_id == 1)
    pose_cam, resid = estimate_tag_pose(w.fisheye, det.corners,
                                        w.tools["pushcore"].spec.tag_size)
    want = w.tag_layout()[1][0]
    got = w.fisheye_in_world() @ pose_cam
    assert resid < 1e-6
    assert got.translation_distance(want) < 1e-5
    assert got.rotation_distance(want) < 1e-4


def test_point_cloud_attached_to_observation():
    w = world_at("home")
    obs = w.observe(0.0, with_cloud=True)
    assert obs.cloud is not None and len(obs.cloud) > 100
    assert np.all(obs.cloud[:, 2] > 0)
    assert np.all(obs.cloud[:, 2] <= w.cloud_params.max_range + 1e-9)


def test_observe_camera_filter_traces_only_named_views():
    w = load_bundled_scene(seed=2)
    full = w.observe(noise_std_px=0.0)
    left = w.observe(noise_std_px=0.0, cameras=("stereo_left",))
    assert {d.camera for d in left.detections} == {"stereo_left"}
    want = [d for d in full.detections if d.camera == "stereo_left"]
    assert [d.tag_id for d in left.detections] == [d.tag_id for d in want]
    for a, b in zip(left.detections, want):
        assert np.array_equal(a.corners, b.corners)


# --- determinism ------------------------------------------------------------

def run_schedule(seed: int):
    w = load_bundled_scene(seed=seed)
    log = []
    w.set_setpoints(w.named_poses["tooltray_view"])
    for k in range(120):
        w.step(0.02)
        if k % 20 == 19:
            obs = w.observe(noise_std_px=0.5)
            log.append((json.dumps(w.snapshot(), sort_keys=True),
                        obs.joint_feedback.tobytes(),
                        b"".join(d.corners.tobytes() for d in obs.detections)))
    w.close_gripper()
    w.set_setpoints(w.named_poses["home"])
    for _ in range(60):
        w.step(0.02)
    log.append((json.dumps(w.snapshot(), sort_keys=True), b"", b""))
    return log


def test_same_seed_same_commands_identical_logs():
    assert run_schedule(123) == run_schedule(123)


def test_seed_changes_observation_noise():
    a, b = run_schedule(1), run_schedule(2)
    assert a[0][2] != b[0][2]


# --- scene files ------------------------------------------------------------

def test_bundled_scene_loads():
    w = load_bundled_scene()
    assert w.arm.dof == 7
    assert set(w.tools) == {"pushcore", "slurpgun", "probe"}
    assert "home" in w.named_poses
    assert w.sample_marker is not None
    assert any(p.name == "tooltray" for p in w.terrain)


def test_version_mismatch_rejected():
    scene = scene_dict()
    scene["version"] = 2
    with pytest.raises(SchemaVersionMismatch):
        load_scene(scene)


def test_missing_field_named_in_error():
    scene = copy.deepcopy(scene_dict())
    del scene["doors"]["starboard"]["hinge"]
    with pytest.raises(ParseError, match="doors.starboard"):
        load_scene(scene)


def test_unknown_primitive_rejected():
    scene = copy.deepcopy(scene_dict())
    scene["terrain"].append({"type": "torus", "pose": {}})
    with pytest.raises(ParseError, match="torus"):
        load_scene(scene)


def test_wrong_bias_vector_length_rejected():
    scene = copy.deepcopy(scene_dict())
    scene["actuators"]["bias_deg"] = [0.1, 0.2]
    with pytest.raises(ParseError, match="bias_deg"):
        load_scene(scene)


def test_malformed_json_reports_location(tmp_path):
    p = tmp_path / "broken.scene"
    p.write_text('{"version": 1,,}')
    with pytest.raises(ParseError, match="line"):
        load_scene(str(p))


def test_start_pose_applied():
    w = load_bundled_scene()
    assert np.allclose(w.q(), w.named_poses["home"])
