"""Scene-state publishing with change detection.

A state message goes out when joints, tool or marker poses, or the task
phase move past their thresholds, or on explicit request; an unchanged
world stays silent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StateThresholds:
    joint: float = math.radians(0.5)
    pose: float = 0.005


def _rounded(values, nd=4):
    return [round(float(v), nd) for v in values]


def _prim_entry(prim) -> dict:
    """Flatten a terrain primitive to {shape, name, t, size} for clients.

    size is full extents for boxes and planes, [radius] for spheres and
    [length, radius] for capsules.
    """
    kind = type(prim).__name__.lower()
    if kind == "box":
        dims = list(prim.size)
    elif kind == "plane":
        dims = [2.0 * prim.half_extents[0], 2.0 * prim.half_extents[1]]
    elif kind == "sphere":
        dims = [prim.radius]
    else:
        kind, dims = "capsule", [prim.length, prim.radius]
    return {"shape": kind, "name": prim.name,
            "t": _rounded(prim.pose.t), "size": _rounded(dims)}


def build_state_payload(world, executive, ledger=None, now=None,
                        max_plan_points: int = 20) -> dict:
    """Compose the full state payload from a world and executive snapshot."""
    tools = {}
    for tool_id, tool in world.tools.items():
        est = executive.tool_estimates.get(tool_id)
        pose = est if est is not None else tool.pose
        tools[tool_id] = {"t": _rounded(pose.t),
                          "tracked": tool_id in executive.tool_estimates,
                          "grasped": world.grasped_tool == tool_id}
    marker = executive.marker_pose or world.sample_marker
    plan = None
    traj = executive.state.active_plan
    if traj is not None:
        configs = [wp[0] for wp in traj.waypoints]
        stride = max(1, int(np.ceil(len(configs) / max_plan_points)))
        picks = list(range(0, len(configs), stride))
        if picks[-1] != len(configs) - 1:
            picks.append(len(configs) - 1)
        plan = {"points": [_rounded(configs[i]) for i in picks],
                "duration": round(float(traj.waypoints[-1][1]), 3),
                "cost": round(float(traj.cost), 4)}
    doors = {}
    for name in ("starboard", "port"):
        door = getattr(world, f"door_{name}", None)
        if door is not None:
            doors[name] = round(float(door.angle), 4)
    payload = {"phase": executive.state.phase,
               "time": round(float(world.time), 3),
               "q": _rounded(world.q()),
               "tools": tools,
               "doors": doors,
               "marker": _rounded(marker.t) if marker is not None else None,
               "plan": plan,
               "selected_tool": executive.state.selected_tool,
               "grasped": world.grasped_tool,
               "last_error": executive.state.last_error}
    if world.terrain:
        payload["cloud"] = {"prims": len(world.terrain)}
        payload["terrain"] = [_prim_entry(p) for p in world.terrain]
    if ledger is not None and now is not None:
        payload["bandwidth"] = ledger.snapshot(now)
    return payload


class ChangeDetector:
    """Decides whether a freshly built payload differs enough to publish."""

    def __init__(self, thresholds: StateThresholds | None = None):
        self.thresholds = thresholds or StateThresholds()
        self._last = None

    def _positions(self, payload):
        pos = {tid: rec["t"] for tid, rec in payload["tools"].items()}
        if payload["marker"] is not None:
            pos["__marker__"] = payload["marker"]
        return pos

    def should_publish(self, payload: dict) -> bool:
        if self._last is None:
            return True
        last = self._last
        if payload["phase"] != last["phase"]:
            return True
        if payload["grasped"] != last["grasped"]:
            return True
        dq = np.abs(np.asarray(payload["q"]) - np.asarray(last["q"]))
        if len(dq) and dq.max() > self.thresholds.joint:
            return True
        pos, last_pos = self._positions(payload), self._positions(last)
        if set(pos) != set(last_pos):
            return True
        for key, t in pos.items():
            delta = np.linalg.norm(np.asarray(t) - np.asarray(last_pos[key]))
            if delta > self.thresholds.pose:
                return True
        return False

    def mark(self, payload: dict):
        self._last = payload


def publish_state(world, executive, detector: ChangeDetector,
                  ledger=None, now=None, force: bool = False) -> dict | None:
    """State payload if thresholds trip or ``force`` is set, else None."""
    payload = build_state_payload(world, executive, ledger=ledger, now=now)
    if force or detector.should_publish(payload):
        detector.mark(payload)
        return payload
    return None
