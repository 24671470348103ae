/**
 * ViewState -> declarative scene graph.  Pure data out: the canvas painter
 * and the tests both consume the same nodes, so everything the operator
 * sees in the 3D pane is checkable headlessly.
 */

import { fkPositions } from "./fk";
import { Vec3 } from "./protocol";
import { ViewState } from "./state";

export type SceneNode =
  | { kind: "placeholder"; text: string }
  | { kind: "grid"; extent: number }
  | { kind: "chain"; id: string; points: Vec3[]; ghost: boolean }
  | { kind: "prim"; id: string; shape: string; at: Vec3; size: number[] }
  | { kind: "tool"; id: string; at: Vec3; dimmed: boolean; grasped: boolean; selected: boolean }
  | { kind: "gizmo"; id: string; at: Vec3 }
  | { kind: "door"; id: string; hinge: string; angle: number };

export function renderScene(s: ViewState): SceneNode[] {
  if (s.snapshot === null) {
    return [{ kind: "placeholder", text: "awaiting state" }];
  }
  const snap = s.snapshot;
  const nodes: SceneNode[] = [{ kind: "grid", extent: 2.0 }];

  for (const prim of snap.terrain ?? []) {
    nodes.push({
      kind: "prim",
      id: prim.name ?? prim.shape,
      shape: prim.shape,
      at: prim.t,
      size: prim.size,
    });
  }

  for (const [name, angle] of Object.entries(snap.doors)) {
    nodes.push({ kind: "door", id: `door-${name}`, hinge: name, angle });
  }

  nodes.push({ kind: "chain", id: "arm", points: fkPositions(snap.q), ghost: false });

  // plan preview: ghost arm parked at the final waypoint
  if (snap.plan !== null && snap.plan.points.length > 0) {
    const last = snap.plan.points[snap.plan.points.length - 1];
    nodes.push({ kind: "chain", id: "plan-ghost", points: fkPositions(last), ghost: true });
  }

  for (const [toolId, tool] of Object.entries(snap.tools)) {
    nodes.push({
      kind: "tool",
      id: toolId,
      at: tool.t,
      dimmed: !tool.tracked,
      grasped: tool.grasped,
      selected: toolId === snap.selected_tool,
    });
  }

  if (snap.marker !== null) {
    nodes.push({ kind: "gizmo", id: "sample-marker", at: snap.marker });
  }
  return nodes;
}
