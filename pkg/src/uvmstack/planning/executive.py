"""Confirmation-gated pick-and-place supervisor.

The task state machine is a pure transition function (task_advance); the
executive wraps it around a world, running planner and motion activities as
phases are entered and reporting their outcome back as ExecDone/ExecFailed
events. Every actuator command goes through execute(), which streams
waypoints, watches settled feedback, and honors an asynchronous stop flag
within one control tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import Pose, quat_from_axis_angle, quat_rotate
from ..kinematics import Capsule, fk, solve_ik
from ..simulation import World
from .collision import CollisionWorld
from .rrt import (
    IkFailed,
    PlannerParams,
    StartInCollision,
    GoalInCollision,
    Timeout,
    Trajectory,
    path_cost,
    plan_rrt_star,
    plan_to_pose,
    time_parameterize,
)

RAD = math.pi / 180.0

PHASES = ("Idle", "ToolSelected", "PlanGrasp", "AwaitConfirmGrasp", "ExecGrasp",
          "Grasped", "PlanSample", "AwaitConfirmSample", "ExecSample", "SampleDone",
          "PlanReturn", "AwaitConfirmReturn", "ExecReturn", "Done", "Aborted")
EVENTS = ("SelectTool", "SetMarker", "RequestPlan", "Confirm", "Reject", "Stop",
          "Abort", "Retry", "GripperOpen", "GripperClose", "GotoNamedPose",
          "ExecDone", "ExecFailed")

STABLE = {"Idle", "ToolSelected", "Grasped", "SampleDone", "Done", "Aborted"}
PLAN_FROM = {"ToolSelected": "PlanGrasp", "Grasped": "PlanSample",
             "SampleDone": "PlanReturn"}
AWAIT_FROM = {"PlanGrasp": "AwaitConfirmGrasp", "PlanSample": "AwaitConfirmSample",
              "PlanReturn": "AwaitConfirmReturn"}
EXEC_FROM = {"AwaitConfirmGrasp": "ExecGrasp", "AwaitConfirmSample": "ExecSample",
             "AwaitConfirmReturn": "ExecReturn"}
PLAN_BEHIND = {v: k for k, v in EXEC_FROM.items()}   # Exec* -> AwaitConfirm*
REPLAN = {v: k for k, v in AWAIT_FROM.items()}       # AwaitConfirm* -> Plan*
FALLBACK = {"PlanGrasp": "ToolSelected", "AwaitConfirmGrasp": "ToolSelected",
            "ExecGrasp": "ToolSelected",
            "PlanSample": "Grasped", "AwaitConfirmSample": "Grasped",
            "ExecSample": "Grasped",
            "PlanReturn": "SampleDone", "AwaitConfirmReturn": "SampleDone",
            "ExecReturn": "SampleDone"}
EXEC_DONE = {"ExecGrasp": "Grasped", "ExecSample": "SampleDone", "ExecReturn": "Done"}
MOTION_EVENTS = {"GripperOpen", "GripperClose", "GotoNamedPose"}


@dataclass(frozen=True)
class TaskState:
    phase: str = "Idle"
    selected_tool: str | None = None
    marker_set: bool = False
    active_plan: Trajectory | None = None
    last_error: str | None = None
    warning: str | None = None


def task_advance(s: TaskState, event: str, payload=None) -> TaskState:
    """Pure supervisor transition. Illegal events return the same phase with a
    warning set; Stop is accepted everywhere."""
    if event not in EVENTS:
        raise ValueError(f"unknown event {event!r}")
    s = replace(s, warning=None)

    if event == "Abort":
        return replace(s, phase="Aborted", active_plan=None)
    if event == "Stop":
        if s.phase in FALLBACK:
            return replace(s, phase=FALLBACK[s.phase], active_plan=None,
                           last_error="stopped")
        return s
    if event == "SelectTool":
        if s.phase in ("Idle", "ToolSelected") and payload:
            return replace(s, phase="ToolSelected", selected_tool=payload,
                           last_error=None)
        return replace(s, warning=f"SelectTool ignored in {s.phase}")
    if event == "SetMarker":
        if s.phase in ("Idle", "ToolSelected", "Grasped", "SampleDone"):
            return replace(s, marker_set=True)
        return replace(s, warning=f"SetMarker ignored in {s.phase}")
    if event in ("RequestPlan", "Retry"):
        if s.phase in PLAN_FROM:
            if event == "Retry" and s.last_error is None:
                return replace(s, warning="Retry without a recorded failure")
            return replace(s, phase=PLAN_FROM[s.phase], active_plan=None)
        return replace(s, warning=f"{event} ignored in {s.phase}")
    if event == "Confirm":
        if s.phase in EXEC_FROM:
            return replace(s, phase=EXEC_FROM[s.phase])
        return replace(s, warning=f"Confirm ignored in {s.phase}")
    if event == "Reject":
        if s.phase in REPLAN:
            return replace(s, phase=REPLAN[s.phase], active_plan=None)
        return replace(s, warning=f"Reject ignored in {s.phase}")
    if event == "ExecDone":
        if s.phase in AWAIT_FROM:
            return replace(s, phase=AWAIT_FROM[s.phase])
        if s.phase in EXEC_DONE:
            done = EXEC_DONE[s.phase]
            return replace(s, phase=done, active_plan=None, last_error=None)
        return replace(s, warning=f"ExecDone ignored in {s.phase}")
    if event == "ExecFailed":
        if s.phase in FALLBACK:
            return replace(s, phase=FALLBACK[s.phase], active_plan=None,
                           last_error=str(payload) if payload else "failed")
        return replace(s, warning=f"ExecFailed ignored in {s.phase}")
    # direct motion commands are only honored while nothing is in flight
    if event in MOTION_EVENTS:
        if s.phase in STABLE and s.phase != "Aborted":
            return s
        return replace(s, warning=f"{event} ignored in {s.phase}")
    raise AssertionError(event)


# --- trajectory execution ---------------------------------------------------

@dataclass
class MonitorParams:
    max_dev: float = 5 * RAD       # settled |feedback - waypoint| abort limit
    dt: float = 0.02
    settle_pad: float = 0.7        # extra time per waypoint beyond nominal
    tail: float = 0.2              # feedback averaging window


@dataclass
class WaypointRecord:
    index: int
    t: float
    commanded: np.ndarray
    feedback: np.ndarray
    deviation: float


@dataclass
class ExecutionReport:
    status: str = "completed"      # completed | stopped | deviation
    records: list = field(default_factory=list)
    max_deviation: float = 0.0
    stopped_at: int | None = None


class DeviationExceeded(RuntimeError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


def execute(world: World, traj: Trajectory, params: MonitorParams | None = None,
            stop=None) -> ExecutionReport:
    """Stream waypoints as setpoints and verify each one settles in place."""
    params = params or MonitorParams()
    report = ExecutionReport()
    prev_t = traj.waypoints[0][1] if traj.waypoints else 0.0
    for i, (wp, t_wp) in enumerate(traj.waypoints):
        if stop is not None and stop():
            report.status = "stopped"
            report.stopped_at = i
            return report
        world.set_setpoints(wp)
        duration = max(t_wp - prev_t, 0.0) + params.settle_pad
        prev_t = t_wp
        n_ticks = max(1, int(round(duration / params.dt)))
        n_tail = max(1, int(round(params.tail / params.dt)))
        tail = []
        stopped = False
        for k in range(n_ticks):
            if stop is not None and stop():
                stopped = True
                break
            world.step(params.dt)
            if k >= n_ticks - n_tail:
                tail.append(world.joint_feedback())
        if stopped:
            report.status = "stopped"
            report.stopped_at = i
            return report
        fb = np.mean(tail, axis=0)
        dev = float(np.max(np.abs(fb - wp)))
        report.records.append(WaypointRecord(i, world.time, wp.copy(), fb, dev))
        report.max_deviation = max(report.max_deviation, dev)
        if dev > params.max_dev:
            report.status = "deviation"
            raise DeviationExceeded(
                f"waypoint {i}: settled deviation {dev / RAD:.2f} deg "
                f"exceeds {params.max_dev / RAD:.2f} deg", report)
    return report


# --- the executive ----------------------------------------------------------

TOOL_CAPSULE = Capsule(np.zeros(3), np.array([0.10, 0.0, 0.0]), 0.03)
TOP_DOWN = Pose.from_axis_angle((0, 1, 0), math.pi / 2)
# high enough that a held tool fully clears the tray walls before planning
PREGRASP_LIFT = 0.15


class PickAndPlaceExecutive:
    """Runs the task FSM against a world: planning on demand, execution only
    after operator confirmation, every motion logged with its phase."""

    def __init__(self, world: World, planner: PlannerParams | None = None,
                 monitor: MonitorParams | None = None):
        self.world = world
        self.planner = planner or PlannerParams(max_time=2.0, iters_per_sec=250)
        self.monitor = monitor or MonitorParams()
        self.state = TaskState()
        self.log: list = []
        self.marker_pose: Pose | None = world.sample_marker
        self.tool_estimates: dict = {}
        # invoked every control tick during motion; lets an embedding service
        # poll its sockets so a Stop can land mid-trajectory
        self.tick_hook = None
        self._stop = False
        self._grasp_q = None
        self._pregrasp_q = None
        self._place_q = None
        self._pre_place_q = None

    # -- infrastructure

    def request_stop(self):
        self._stop = True

    def _stop_poll(self) -> bool:
        if self.tick_hook is not None:
            self.tick_hook()
        return self._stop

    def _log(self, action: str, **info):
        entry = {"t": round(self.world.time, 6), "phase": self.state.phase,
                 "action": action, **info}
        self.log.append(entry)
        return entry

    def _collision_world(self, extra_allowed=(), with_tool=False) -> CollisionWorld:
        allowed = set(self.world.allowed_contacts) | set(extra_allowed)
        cw = CollisionWorld(self.world.arm, obstacles=self.world.terrain,
                            allowed=allowed,
                            base_pose=self.world.arm_base_in_world())
        if with_tool and self.world.grasped_tool is not None:
            cw.attach("tool", TOOL_CAPSULE)
        return cw

    def _allow_start_contacts(self, cw: CollisionWorld) -> CollisionWorld:
        """A replan may begin resting against something (e.g. after a deviation
        abort); those existing contacts are tolerated so the arm can depart."""
        hits = cw.check(self.world.q())
        if hits:
            cw.allow(hits)
            self._log("start_contact_allowed", pairs=hits)
        return cw

    def _tool_grasp_pose(self, tool_id: str) -> Pose:
        """Gravity-squared grasp frame at the tool's estimated position.

        Tools rest flat on the tray, so any tilt in a marker-based estimate is
        noise; carrying it into the target tilts the approach and, near the
        wrist limits, forces IK onto self-colliding branches. Keep the
        estimated position and yaw, align the axes with the world vertical.
        """
        pose = self.tool_estimates.get(tool_id, self.world.tools[tool_id].pose)
        x = quat_rotate(pose.q, np.array([1.0, 0.0, 0.0]))
        yaw = math.atan2(x[1], x[0])
        return Pose(t=pose.t, q=quat_from_axis_angle((0.0, 0.0, 1.0), yaw))

    def set_tool_estimate(self, tool_id: str, pose: Pose):
        self.tool_estimates[tool_id] = pose

    def set_marker(self, pose: Pose):
        self.marker_pose = pose

    # -- event entry point

    def handle(self, event: str, payload=None) -> TaskState:
        if event == "Stop":
            self._stop = True
        before = self.state.phase
        self.state = task_advance(self.state, event, payload)
        self._log("event", event=event, entered=self.state.phase,
                  warning=self.state.warning)
        if self.state.warning:
            return self.state
        if event == "SetMarker" and isinstance(payload, Pose):
            self.marker_pose = payload
        if self.state.phase != before:
            self._on_enter()
        elif event in MOTION_EVENTS:
            self._direct_motion(event, payload)
        return self.state

    def _on_enter(self):
        phase = self.state.phase
        activity = {"PlanGrasp": self._plan_grasp, "PlanSample": self._plan_sample,
                    "PlanReturn": self._plan_return, "ExecGrasp": self._exec_grasp,
                    "ExecSample": self._exec_sample, "ExecReturn": self._exec_return}
        if phase in activity:
            self._stop = False
            try:
                activity[phase]()
                self.handle("ExecDone")
            except StoppedByOperator:
                self._log("activity_stopped")
                self.handle("Stop")
            except (IkFailed, Timeout, StartInCollision, GoalInCollision,
                    DeviationExceeded, GraspMissed) as exc:
                self._log("activity_failed", error=str(exc))
                self.handle("ExecFailed", payload=str(exc))

    # -- direct operator motion

    def _direct_motion(self, event: str, payload):
        if event == "GripperOpen":
            self.world.open_gripper()
            self._log("gripper", open=True)
        elif event == "GripperClose":
            self.world.close_gripper()
            self._log("gripper", open=False, grasped=self.world.grasped_tool)
        elif event == "GotoNamedPose":
            if payload not in self.world.named_poses:
                self._log("goto_failed", error=f"unknown pose {payload!r}")
                return
            try:
                cw = self._collision_world(with_tool=True)
                traj = plan_rrt_star(cw, self.world.q(),
                                     self.world.named_poses[payload], self.planner)
                self._run(traj, f"goto:{payload}")
            except (Timeout, StartInCollision, GoalInCollision,
                    DeviationExceeded) as exc:
                self._log("goto_failed", error=str(exc))

    def _run(self, traj: Trajectory, label: str) -> ExecutionReport:
        self._log("execute", label=label, waypoints=len(traj.waypoints),
                  cost=round(traj.cost, 6))
        report = execute(self.world, traj, self.monitor, stop=self._stop_poll)
        self._log("execute_done", label=label, status=report.status,
                  max_deviation=round(report.max_deviation, 6))
        if report.status == "stopped":
            raise StoppedByOperator(report)
        return report

    # -- planning activities

    def _plan_grasp(self):
        tool_id = self.state.selected_tool
        grasp = self._tool_grasp_pose(tool_id)
        pre = grasp @ Pose(t=(0, 0, PREGRASP_LIFT)) @ TOP_DOWN
        tgt = grasp @ TOP_DOWN
        cw = self._allow_start_contacts(self._collision_world())
        traj = plan_to_pose(cw, self.world.q(), pre, self.planner)
        self._pregrasp_q = traj.waypoints[-1][0]
        self._grasp_q = self._descend(cw, self._pregrasp_q, tgt)
        full = list(traj.configs) + [self._grasp_q]
        plan = time_parameterize(full, self.planner.joint_speed)
        plan.cost = path_cost(full)
        self.state = replace(self.state, active_plan=plan)
        self._log("plan_ready", target="grasp", tool=tool_id,
                  cost=round(plan.cost, 6))

    def _descend(self, cw: CollisionWorld, q_from, target: Pose):
        """Short straight approach from a hover config to the final pose."""
        q_to = solve_ik(self.world.arm, cw.base_pose.invert() @ target, q_from)
        if not cw.segment_free(q_from, q_to, self.planner.validate_step):
            raise Timeout("approach segment blocked")
        return q_to

    def _plan_sample(self):
        if not self.state.marker_set and self.marker_pose is None:
            raise IkFailed("no sample marker set")
        marker = self.marker_pose or self.world.sample_marker
        cw = self._collision_world(
            extra_allowed=[("tool", "sample_site"), ("link7", "sample_site")],
            with_tool=True)
        cw = self._allow_start_contacts(cw)
        plan = plan_to_pose(cw, self.world.q(), marker @ TOP_DOWN, self.planner)
        self.state = replace(self.state, active_plan=plan)
        self._log("plan_ready", target="sample", cost=round(plan.cost, 6))

    def _plan_return(self):
        tool_id = self.state.selected_tool
        home = self.world.tools[tool_id].home_pose
        pre = home @ Pose(t=(0, 0, PREGRASP_LIFT)) @ TOP_DOWN
        # departing the sample site and arriving over the tray slot
        cw = self._collision_world(extra_allowed=[("tool", "tooltray"),
                                                  ("tool", "sample_site")],
                                   with_tool=True)
        cw = self._allow_start_contacts(cw)
        traj = plan_to_pose(cw, self.world.q(), pre, self.planner)
        self._pre_place_q = traj.waypoints[-1][0]
        self._place_q = self._descend(cw, self._pre_place_q, home @ TOP_DOWN)
        full = list(traj.configs) + [self._place_q]
        plan = time_parameterize(full, self.planner.joint_speed)
        plan.cost = path_cost(full)
        self.state = replace(self.state, active_plan=plan)
        self._log("plan_ready", target="return", cost=round(plan.cost, 6))

    # -- execution activities

    def _exec_grasp(self):
        self._run(self.state.active_plan, "grasp")
        self.world.close_gripper()
        tool_id = self.state.selected_tool
        self._log("gripper", open=False, grasped=self.world.grasped_tool)
        if self.world.grasped_tool != tool_id:
            self.world.open_gripper()
            raise GraspMissed(f"gripper closed on {self.world.grasped_tool!r}, "
                              f"wanted {tool_id!r}")
        lift = time_parameterize([self.world.q(), self._pregrasp_q],
                                 self.planner.joint_speed)
        cw = self._collision_world(extra_allowed=[("tool", "tooltray")],
                                   with_tool=True)
        if not cw.segment_free(self.world.q(), self._pregrasp_q,
                               self.planner.validate_step):
            raise Timeout("retreat segment blocked")
        self._run(lift, "lift")

    def _exec_sample(self):
        plan = self.state.active_plan
        self._run(plan, "sample")
        marker = self.marker_pose or self.world.sample_marker
        err = self.world.ee_in_world().translation_distance(marker)
        if err > 0.02:
            raise GraspMissed(f"sample pose missed by {err * 1000:.1f} mm")
        self._log("sample_acquired", pos_err_m=round(err, 6))

    def _exec_return(self):
        self._run(self.state.active_plan, "return")
        self.world.open_gripper()
        self._log("gripper", open=True)
        lift = time_parameterize([self.world.q(), self._pre_place_q],
                                 self.planner.joint_speed)
        self._run(lift, "retreat")
        cw = self._collision_world()
        traj = plan_rrt_star(cw, self.world.q(), self.world.named_poses["home"],
                             self.planner)
        self._run(traj, "home")


class GraspMissed(RuntimeError):
    pass


class StoppedByOperator(RuntimeError):
    def __init__(self, report):
        super().__init__("stopped by operator")
        self.report = report


# --- scripted end-to-end runner --------------------------------------------

def _perceive_tools(world: World, noise_px: float = 0.5):
    """Drive the wrist camera pipeline once: observe, track tags, localize."""
    from ..geometry import TransformTree
    from ..perception import TagGraph, ToolTracker, update_tag_graph

    sizes = {t.spec.tag_id: t.spec.tag_size for t in world.tools.values()}
    graph = TagGraph(origin_camera="fisheye", tag_sizes=sizes)
    obs = world.observe(noise_std_px=noise_px)
    update_tag_graph(graph, [d for d in obs.detections if d.camera == "fisheye"],
                     world.fisheye)
    tree = TransformTree()
    tree.set_transform("world", "arm_base", world.arm_base_in_world(),
                       stamp=world.time)
    tracker = ToolTracker({t.spec.tool_id: t.spec for t in world.tools.values()})
    poses = fk(world.arm, world.q())
    out = {}
    for tool_id in world.tools:
        try:
            est = tracker.localize(graph, tool_id, poses, world.hand_eye, tree,
                                   now=world.time)
            out[tool_id] = est.grasp_pose
        except KeyError:
            continue
    return out


def run_pick_and_place(world: World, tool_id: str, use_perception: bool = True,
                       max_retries: int = 2,
                       planner: PlannerParams | None = None,
                       monitor: MonitorParams | None = None,
                       fault_hook=None) -> dict:
    """Full supervised sequence with auto-confirmation, as an operator script.

    fault_hook(executive, stage) may mutate the world before each Confirm to
    inject failures; retries re-plan from the fallback phase.
    """
    ex = PickAndPlaceExecutive(world, planner=planner, monitor=monitor)
    ex.handle("GotoNamedPose", "tooltray_view")
    if use_perception:
        for tid, pose in _perceive_tools(world).items():
            ex.set_tool_estimate(tid, pose)
    ex.handle("SelectTool", tool_id)
    ex.handle("SetMarker", world.sample_marker)

    stages = ("grasp", "sample", "return")
    for stage in stages:
        retries = 0
        while True:
            ex.handle("RequestPlan" if retries == 0 else "Retry")
            if "AwaitConfirm" not in ex.state.phase:
                if retries >= max_retries:
                    return _summary(ex, False)
                retries += 1
                continue
            if fault_hook is not None:
                fault_hook(ex, stage)
            ex.handle("Confirm")
            expected = {"grasp": "Grasped", "sample": "SampleDone",
                        "return": "Done"}[stage]
            if ex.state.phase == expected:
                break
            if ex.state.phase == "Aborted" or retries >= max_retries:
                return _summary(ex, False)
            retries += 1
    return _summary(ex, ex.state.phase == "Done")


def _summary(ex: PickAndPlaceExecutive, success: bool) -> dict:
    return {"success": success, "phase": ex.state.phase,
            "last_error": ex.state.last_error, "log": ex.log}
