"""Command line front end: simulate, plan, serve."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np


def _add_scene_args(parser):
    parser.add_argument("--scene", type=Path, default=None,
                        help="scene JSON file (bundled testbed by default)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scene's random seed")


def _load_world(args):
    from .simulation import load_bundled_scene, load_scene

    if args.scene is not None:
        return load_scene(args.scene, seed=args.seed)
    return load_bundled_scene(seed=args.seed)


def _dump(data, out_path):
    text = json.dumps(data, indent=2)
    if out_path is None:
        print(text)
    else:
        Path(out_path).write_text(text + "\n", encoding="utf-8")


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    world = _load_world(args)
    log_dir = Path(args.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    obs_period = 1.0 / args.obs_hz if args.obs_hz > 0 else math.inf
    next_obs = 0.0
    steps = int(round(args.duration / args.dt))
    states_path = log_dir / "states.jsonl"
    obs_path = log_dir / "observations.jsonl"
    n_obs = 0
    with states_path.open("w", encoding="utf-8") as states_fh, \
            obs_path.open("w", encoding="utf-8") as obs_fh:
        for _ in range(steps):
            # half-step slack so accumulated float error cannot skip a sample
            if world.time >= next_obs - 0.5 * args.dt:
                obs = world.observe(noise_std_px=args.noise_px)
                rec = {"t": round(world.time, 6),
                       "joints": [round(float(v), 6)
                                  for v in obs.joint_feedback],
                       "detections": [
                           {"tag": d.tag_id, "camera": d.camera,
                            "corners": [[round(float(u), 3),
                                         round(float(v), 3)]
                                        for u, v in d.corners]}
                           for d in obs.detections]}
                obs_fh.write(json.dumps(rec) + "\n")
                n_obs += 1
                next_obs += obs_period
            world.step(args.dt)
            states_fh.write(json.dumps(world.snapshot()) + "\n")
    print(f"simulated {world.time:.3f} s in {steps} steps; "
          f"{n_obs} observations -> {log_dir}")
    return 0


# --- plan -------------------------------------------------------------------

def _parse_goal(args, world):
    from .geometry import Pose

    given = [name for name in ("goal_json", "goal_named", "goal_pose")
             if getattr(args, name) is not None]
    if len(given) != 1:
        raise SystemExit("plan needs exactly one of --goal-json, "
                         "--goal-named, --goal-pose")
    if args.goal_json is not None:
        q = json.loads(Path(args.goal_json).read_text(encoding="utf-8"))
        return ("config", np.asarray(q, dtype=float))
    if args.goal_named is not None:
        if args.goal_named not in world.named_poses:
            raise SystemExit(f"unknown named pose {args.goal_named!r}; "
                             f"scene has {sorted(world.named_poses)}")
        return ("config", world.named_poses[args.goal_named])
    vals = [float(v) for v in args.goal_pose.split(",")]
    if len(vals) == 3:
        return ("pose", Pose(q=world.ee_in_world().q, t=tuple(vals)))
    if len(vals) == 7:
        return ("pose", Pose(q=tuple(vals[3:]), t=tuple(vals[:3])))
    raise SystemExit("--goal-pose wants x,y,z or x,y,z,qw,qx,qy,qz")


def cmd_plan(args) -> int:
    from .planning import (CollisionWorld, GoalInCollision, IkFailed,
                           PlannerParams, StartInCollision, Timeout, execute,
                           plan_rrt_star, plan_to_pose)

    world = _load_world(args)
    if args.start_json is not None:
        start = np.asarray(
            json.loads(Path(args.start_json).read_text(encoding="utf-8")),
            dtype=float)
        world.set_setpoints(start)
        for actuator, q in zip(world.actuators, start):
            actuator.position = float(q)
            actuator.ram = float(q)
    else:
        start = world.q()
    goal_kind, goal = _parse_goal(args, world)
    params = PlannerParams(max_time=args.max_time, seed=args.planner_seed,
                           joint_speed=math.radians(args.joint_speed))
    cw = CollisionWorld(world.arm, obstacles=world.terrain,
                        allowed=world.allowed_contacts,
                        base_pose=world.arm_base_in_world())
    report = {"scene": str(args.scene) if args.scene else "bundled",
              "start": [round(float(v), 6) for v in start],
              "goal": {"kind": goal_kind}}
    try:
        if goal_kind == "pose":
            traj = plan_to_pose(cw, start, goal, params)
        else:
            traj = plan_rrt_star(cw, start, goal, params)
    except (StartInCollision, GoalInCollision, Timeout, IkFailed) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        _dump(report, args.out)
        return 1
    report.update(
        cost=round(float(traj.cost), 6),
        duration=round(float(traj.waypoints[-1][1]), 3),
        waypoints=[{"q": [round(float(v), 6) for v in q],
                    "t": round(float(t), 4)} for q, t in traj.waypoints])
    if args.execute:
        result = execute(world, traj)
        report["execution"] = {
            "status": result.status,
            "max_deviation": round(float(result.max_deviation), 6),
            "settled_waypoints": len(result.records)}
    _dump(report, args.out)
    return 0


# --- serve ------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .planning import PlannerParams
    from .service import OperatorService

    world = _load_world(args)
    planner = PlannerParams(max_time=args.max_time,
                            joint_speed=math.radians(args.joint_speed))
    service = OperatorService(world, planner=planner, host=args.host,
                              port=args.port, ws_port=args.ws_port,
                              state_interval=args.state_interval)
    print(f"operator service on {args.host}:{service.port}"
          + (f" (ws {service.ws_port})" if service.ws_port else ""),
          flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.close()
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvmstack",
        description="Desk-scale manipulation testbed: simulator, planner, "
                    "and operator service.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="step the world and log it")
    _add_scene_args(sim)
    sim.add_argument("--obs-hz", type=float, default=5.0)
    sim.add_argument("--dt", type=float, default=0.02)
    sim.add_argument("--duration", type=float, default=5.0)
    sim.add_argument("--noise-px", type=float, default=0.5)
    sim.add_argument("--log-dir", type=Path, required=True)
    sim.set_defaults(func=cmd_simulate)

    plan = sub.add_parser("plan", help="plan a collision-free joint path")
    _add_scene_args(plan)
    plan.add_argument("--start-json", type=Path, default=None,
                      help="JSON list of start joint angles [rad]")
    plan.add_argument("--goal-json", type=Path, default=None,
                      help="JSON list of goal joint angles [rad]")
    plan.add_argument("--goal-named", default=None,
                      help="named pose from the scene")
    plan.add_argument("--goal-pose", default=None,
                      help="end-effector goal x,y,z[,qw,qx,qy,qz]")
    plan.add_argument("--max-time", type=float, default=2.0)
    plan.add_argument("--planner-seed", type=int, default=0)
    plan.add_argument("--joint-speed", type=float, default=10.0,
                      help="trajectory speed [deg/s]")
    plan.add_argument("--execute", action="store_true",
                      help="run the trajectory in simulation")
    plan.add_argument("--out", type=Path, default=None,
                      help="write the JSON report here instead of stdout")
    plan.set_defaults(func=cmd_plan)

    serve = sub.add_parser("serve", help="run the operator service")
    _add_scene_args(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=7401)
    serve.add_argument("--ws-port", type=int, default=None)
    serve.add_argument("--state-interval", type=float, default=0.2)
    serve.add_argument("--max-time", type=float, default=2.0)
    serve.add_argument("--joint-speed", type=float, default=10.0,
                       help="trajectory speed [deg/s]")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
