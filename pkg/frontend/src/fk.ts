/**
 * Just enough forward kinematics to draw the arm: the seven-link chain the
 * service drives, reduced to joint positions in the base frame.  Geometry
 * constants match the served arm; only positions are needed for display so
 * orientation stays internal.
 */

import { Vec3 } from "./protocol";

type Quat = [number, number, number, number]; // w x y z

interface LinkSpec {
  offset: Vec3;
  axis: Vec3;
}

export const ARM_LINKS: LinkSpec[] = [
  { offset: [0.0, 0.0, 0.1], axis: [0, 0, 1] },   // shoulder yaw
  { offset: [0.06, 0.0, 0.05], axis: [0, 1, 0] }, // shoulder pitch
  { offset: [0.5, 0.0, 0.0], axis: [0, 1, 0] },   // elbow pitch
  { offset: [0.15, 0.0, 0.0], axis: [1, 0, 0] },  // forearm roll
  { offset: [0.25, 0.0, 0.0], axis: [0, 1, 0] },  // wrist pitch
  { offset: [0.1, 0.0, 0.0], axis: [0, 0, 1] },   // wrist yaw
  { offset: [0.08, 0.0, 0.0], axis: [1, 0, 0] },  // tool roll
];

export const EE_OFFSET: Vec3 = [0.16, 0.0, 0.0];

function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const half = angle / 2;
  const s = Math.sin(half);
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  // v + 2 q_vec x (q_vec x v + w v)
  const cx = y * v[2] - z * v[1] + w * v[0];
  const cy = z * v[0] - x * v[2] + w * v[1];
  const cz = x * v[1] - y * v[0] + w * v[2];
  return [
    v[0] + 2 * (y * cz - z * cy),
    v[1] + 2 * (z * cx - x * cz),
    v[2] + 2 * (x * cy - y * cx),
  ];
}

/**
 * Positions of each joint origin plus the end effector, base frame.
 * Returns ARM_LINKS.length + 1 points; tolerant of a wrong-length q so a
 * garbled snapshot degrades to a partial chain instead of throwing.
 */
export function fkPositions(q: number[]): Vec3[] {
  let rot: Quat = [1, 0, 0, 0];
  let pos: Vec3 = [0, 0, 0];
  const points: Vec3[] = [];
  for (let i = 0; i < ARM_LINKS.length; i++) {
    const link = ARM_LINKS[i];
    const step = quatRotate(rot, link.offset);
    pos = [pos[0] + step[0], pos[1] + step[1], pos[2] + step[2]];
    rot = quatMultiply(rot, quatFromAxisAngle(link.axis, q[i] ?? 0));
    points.push(pos);
  }
  const tip = quatRotate(rot, EE_OFFSET);
  points.push([pos[0] + tip[0], pos[1] + tip[1], pos[2] + tip[2]]);
  return points;
}
