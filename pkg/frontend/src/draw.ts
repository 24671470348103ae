/**
 * Canvas painter for the scene graph: a fixed isometric projection, no
 * camera controls.  Everything interesting happens in render.ts; this file
 * just puts ink on pixels.
 */

import { SceneNode } from "./render";
import { Vec3 } from "./protocol";

const COS30 = Math.cos(Math.PI / 6);
const SIN30 = Math.sin(Math.PI / 6);

export interface Viewport {
  width: number;
  height: number;
  scale: number; // px per meter
}

export function project(p: Vec3, vp: Viewport): [number, number] {
  const sx = (p[0] - p[1]) * COS30;
  const sy = (p[0] + p[1]) * SIN30 - p[2];
  return [vp.width / 2 + sx * vp.scale, vp.height * 0.72 + sy * vp.scale];
}

/** Inverse of project on the z = 0 ground plane, for marker placement. */
export function unprojectGround(
  px: number,
  py: number,
  vp: Viewport,
): [number, number] {
  const sx = (px - vp.width / 2) / vp.scale;
  const sy = (py - vp.height * 0.72) / vp.scale;
  const x = sx / (2 * COS30) + sy / (2 * SIN30);
  const y = sy / (2 * SIN30) - sx / (2 * COS30);
  return [x, y];
}

function polyline(
  ctx: CanvasRenderingContext2D,
  pts: Vec3[],
  vp: Viewport,
) {
  ctx.beginPath();
  pts.forEach((p, i) => {
    const [x, y] = project(p, vp);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

export function paint(
  ctx: CanvasRenderingContext2D,
  nodes: SceneNode[],
  vp: Viewport,
) {
  ctx.clearRect(0, 0, vp.width, vp.height);
  for (const node of nodes) {
    switch (node.kind) {
      case "placeholder": {
        ctx.fillStyle = "#888";
        ctx.font = "16px sans-serif";
        ctx.textAlign = "center";
        ctx.fillText(node.text, vp.width / 2, vp.height / 2);
        break;
      }
      case "grid": {
        ctx.strokeStyle = "#2a2f38";
        ctx.lineWidth = 1;
        for (let i = -4; i <= 4; i++) {
          const d = (node.extent * i) / 4;
          polyline(ctx, [[d, -node.extent, 0], [d, node.extent, 0]], vp);
          polyline(ctx, [[-node.extent, d, 0], [node.extent, d, 0]], vp);
        }
        break;
      }
      case "prim": {
        ctx.strokeStyle = "#5d6b7a";
        ctx.lineWidth = 1.5;
        const [hx, hy, hz] = [
          (node.size[0] ?? 0.1) / 2,
          (node.size[1] ?? 0.1) / 2,
          (node.size[2] ?? 0.1) / 2,
        ];
        const [cx, cy, cz] = node.at;
        const top: Vec3[] = [
          [cx - hx, cy - hy, cz + hz],
          [cx + hx, cy - hy, cz + hz],
          [cx + hx, cy + hy, cz + hz],
          [cx - hx, cy + hy, cz + hz],
          [cx - hx, cy - hy, cz + hz],
        ];
        polyline(ctx, top, vp);
        const bottom = top.map(
          (p): Vec3 => [p[0], p[1], cz - hz],
        );
        polyline(ctx, bottom, vp);
        for (let i = 0; i < 4; i++) {
          polyline(ctx, [top[i], bottom[i]], vp);
        }
        break;
      }
      case "door": {
        // door hinges are not in the state payload; angles show in the HUD
        break;
      }
      case "chain": {
        ctx.strokeStyle = node.ghost ? "rgba(120, 180, 255, 0.35)" : "#7fc4ff";
        ctx.lineWidth = node.ghost ? 3 : 5;
        ctx.lineCap = "round";
        polyline(ctx, node.points, vp);
        break;
      }
      case "tool": {
        const [x, y] = project(node.at, vp);
        ctx.beginPath();
        ctx.arc(x, y, 7, 0, 2 * Math.PI);
        ctx.fillStyle = node.dimmed
          ? "rgba(255, 200, 80, 0.3)"
          : node.grasped
            ? "#7dff9a"
            : "#ffc850";
        ctx.fill();
        if (node.selected) {
          ctx.strokeStyle = "#fff";
          ctx.lineWidth = 2;
          ctx.stroke();
        }
        ctx.fillStyle = "#bbb";
        ctx.font = "11px sans-serif";
        ctx.textAlign = "center";
        ctx.fillText(node.id, x, y - 12);
        break;
      }
      case "gizmo": {
        const [x, y] = project(node.at, vp);
        ctx.strokeStyle = "#ff6b9d";
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(x - 8, y);
        ctx.lineTo(x + 8, y);
        ctx.moveTo(x, y - 8);
        ctx.lineTo(x, y + 8);
        ctx.stroke();
        ctx.beginPath();
        ctx.arc(x, y, 8, 0, 2 * Math.PI);
        ctx.stroke();
        break;
      }
    }
  }
}
