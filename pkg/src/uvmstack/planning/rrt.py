"""Seeded joint-space RRT* with deterministic iteration budgets.

The budget is max_time * iters_per_sec iterations, so two runs with the same
seed share an identical prefix of random draws: growing the budget can only
keep or improve the best path cost, never worsen it. Wall-clock max_time is
still honored as a hard cap.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from ..kinematics import NoConvergence, fk, solve_ik
from .collision import CollisionWorld

RADIANS = math.pi / 180.0


class StartInCollision(ValueError):
    pass


class GoalInCollision(ValueError):
    pass


class Timeout(RuntimeError):
    pass


class IkFailed(RuntimeError):
    pass


@dataclass
class PlannerParams:
    max_time: float = 2.0
    iters_per_sec: int = 400        # deterministic budget: max_time * this
    step: float = 20 * RADIANS
    goal_bias: float = 0.1
    rewire_radius: float = 40 * RADIANS
    search_step: float = 2 * RADIANS    # edge resolution during search
    validate_step: float = 0.5 * RADIANS  # final trajectory resolution
    seed: int = 0
    smooth: bool = True
    joint_speed: float = 10 * RADIANS   # [rad/s] for time parameterization
    ik_restarts: int = 16


@dataclass
class Trajectory:
    waypoints: list                  # [(JointVector, t)]
    valid: list = field(default_factory=list)   # per-waypoint validity
    cost: float = 0.0
    iters: int = 0

    def __post_init__(self):
        if not self.valid:
            self.valid = [True] * len(self.waypoints)
        ts = [t for _, t in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    @property
    def configs(self):
        return [q for q, _ in self.waypoints]

    @property
    def duration(self):
        return self.waypoints[-1][1] if self.waypoints else 0.0


def path_cost(path) -> float:
    return float(sum(np.linalg.norm(b - a) for a, b in zip(path, path[1:])))


def time_parameterize(path, speed: float, min_segment: float = 0.05) -> Trajectory:
    """Constant joint-speed timing: segment time = largest joint move / speed."""
    t, stamps = 0.0, [0.0]
    for a, b in zip(path, path[1:]):
        t += max(min_segment, float(np.max(np.abs(b - a))) / speed)
        stamps.append(t)
    return Trajectory(waypoints=[(np.asarray(q, float), s) for q, s in zip(path, stamps)],
                      cost=path_cost(path))


def _densify(path, step: float):
    """Subdivide long edges so consecutive waypoints stay within step."""
    out = [path[0]]
    for a, b in zip(path, path[1:]):
        n = max(1, int(math.ceil(float(np.max(np.abs(b - a))) / step)))
        for k in range(1, n + 1):
            out.append(a + (b - a) * (k / n))
    return out


def _shortcut(cw: CollisionWorld, path, step: float, fine: float):
    """Deterministic pairwise shortcutting until no splice helps."""
    path = [np.asarray(q, float) for q in path]
    for _ in range(4):
        improved = False
        i = 0
        while i + 2 < len(path):
            for j in range(len(path) - 1, i + 1, -1):
                if j - i < 2:
                    break
                direct = np.linalg.norm(path[j] - path[i])
                via = path_cost(path[i:j + 1])
                if direct < via - 1e-9 and cw.segment_free(path[i], path[j], step) \
                        and cw.segment_free(path[i], path[j], fine):
                    path[i + 1:j] = []
                    improved = True
                    break
            i += 1
        if not improved:
            break
    return path


def plan_rrt_star(cw: CollisionWorld, start, goal,
                  params: PlannerParams | None = None) -> Trajectory:
    params = params or PlannerParams()
    start = np.asarray(start, float)
    goal = np.asarray(goal, float)
    if not cw.config_free(start):
        raise StartInCollision(str(cw.check(start)))
    if not cw.config_free(goal):
        raise GoalInCollision(str(cw.check(goal)))

    # tree edges are checked at the executable resolution up front, so
    # finish() can never reject a found path.  Batch checks are dominated by
    # per-call overhead, not sample count, so a coarser prefilter saves
    # nothing here; search_step still prefilters shortcut splices where most
    # candidates are rejected.
    def edge_ok(a, b):
        return cw.segment_free(a, b, params.validate_step)

    def finish(path, iters):
        raw = [np.asarray(q, float) for q in path]
        options = [raw]
        if params.smooth:
            options.insert(0, _shortcut(cw, raw, params.search_step,
                                        params.validate_step))
        for p in options:
            if all(cw.segment_free(a, b, params.validate_step)
                   for a, b in zip(p, p[1:])):
                p = _densify(p, params.step)
                traj = time_parameterize(p, params.joint_speed)
                traj.cost = path_cost(p)
                traj.iters = iters
                return traj
        raise Timeout("path failed fine-resolution validation")

    if np.allclose(start, goal):
        return Trajectory(waypoints=[(start, 0.0)], cost=0.0)
    if edge_ok(start, goal):
        return finish([start, goal], 0)

    rng = np.random.default_rng(params.seed)
    budget = max(1, int(params.max_time * params.iters_per_sec))
    deadline = _time.monotonic() + params.max_time
    lo, hi = cw.arm.joint_limits[:, 0], cw.arm.joint_limits[:, 1]

    cap = budget + 2
    nodes = np.empty((cap, len(start)))
    parent = np.full(cap, -1, dtype=int)
    cost = np.zeros(cap)
    nodes[0] = start
    n = 1
    goal_idx = -1

    it = 0
    for it in range(1, budget + 1):
        if _time.monotonic() > deadline and goal_idx >= 0:
            break
        target = goal if rng.random() < params.goal_bias else rng.uniform(lo, hi)
        d = np.linalg.norm(nodes[:n] - target, axis=1)
        near = int(np.argmin(d))
        if d[near] < 1e-12:
            continue
        q_new = nodes[near] + (target - nodes[near]) * min(1.0, params.step / d[near])
        if not cw.config_free(q_new):
            continue
        dists = np.linalg.norm(nodes[:n] - q_new, axis=1)
        nbr = np.flatnonzero(dists <= params.rewire_radius)
        if len(nbr) == 0:
            nbr = np.array([near])
        # cheapest collision-free parent among neighbors
        order = nbr[np.argsort(cost[nbr] + dists[nbr], kind="stable")]
        pick = -1
        for j in order:
            if edge_ok(nodes[j], q_new):
                pick = int(j)
                break
        if pick < 0:
            continue
        idx = n
        nodes[idx] = q_new
        parent[idx] = pick
        cost[idx] = cost[pick] + dists[pick]
        n += 1
        # rewire neighbors through the new node when that shortens them
        for j in nbr:
            better = cost[idx] + dists[j]
            if better + 1e-12 < cost[j] and edge_ok(q_new, nodes[j]):
                parent[j] = idx
                cost[j] = better
        # try to land on the goal
        dg = float(np.linalg.norm(goal - q_new))
        if dg <= params.step and edge_ok(q_new, goal):
            if goal_idx < 0:
                goal_idx = n
                nodes[goal_idx] = goal
                parent[goal_idx] = idx
                cost[goal_idx] = cost[idx] + dg
                n += 1
            elif cost[idx] + dg + 1e-12 < cost[goal_idx]:
                parent[goal_idx] = idx
                cost[goal_idx] = cost[idx] + dg

    if goal_idx < 0:
        raise Timeout(f"no path after {it} iterations")
    path, k = [], goal_idx
    while k >= 0:
        path.append(nodes[k].copy())
        k = parent[k]
    return finish(path[::-1], it)


def plan_to_pose(cw: CollisionWorld, start, target,
                 params: PlannerParams | None = None) -> Trajectory:
    """IK with seeded restarts to a collision-free goal config, then RRT*."""
    params = params or PlannerParams()
    rng = np.random.default_rng(params.seed)
    start = np.asarray(start, float)
    target_local = cw.base_pose.invert() @ target
    candidates = []
    last_err = None
    seed_q = start
    for _ in range(params.ik_restarts):
        try:
            q = solve_ik(cw.arm, target_local, seed_q)
            if cw.config_free(q):
                candidates.append(q)
        except NoConvergence as exc:
            last_err = exc
        seed_q = cw.arm.random_config(rng)
    if not candidates:
        raise IkFailed(f"no reachable collision-free goal ({last_err})")
    goal = min(candidates, key=lambda q: float(np.linalg.norm(q - start)))
    return plan_rrt_star(cw, start, goal, params)
