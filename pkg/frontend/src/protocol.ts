/**
 * Wire protocol over the WebSocket bridge: bare JSON bodies
 * {"v", "seq", "kind", "payload"}, one message per frame.  Validation here
 * mirrors the service end so a malformed message becomes a thrown
 * ProtocolError for the reducer to absorb, never a crash.
 */

export const PROTOCOL_VERSION = 1;

export type Vec3 = [number, number, number];

export class ProtocolError extends Error {}

export interface ToolEntry {
  t: Vec3;
  tracked: boolean;
  grasped: boolean;
}

export interface PlanPreview {
  points: number[][];
  duration: number;
  cost: number;
}

export interface TerrainPrim {
  shape: string;
  name: string | null;
  t: Vec3;
  size: number[];
}

export interface BandwidthReport {
  totals: Record<string, number>;
  rates: Record<string, number>;
}

export interface StatePayload {
  phase: string;
  time: number;
  q: number[];
  tools: Record<string, ToolEntry>;
  doors: Record<string, number>;
  marker: Vec3 | null;
  plan: PlanPreview | null;
  selected_tool: string | null;
  grasped: string | null;
  last_error: string | null;
  terrain?: TerrainPrim[];
  cloud?: { prims: number };
  bandwidth?: BandwidthReport;
}

export interface AckPayload {
  of: number;
  phase: string;
  warning?: string;
  controller?: boolean;
  grounding?: string[];
  command?: { event: string; tool: string | null; pose: string | null };
}

export interface ErrorPayload {
  message: string;
  code?: string;
  of?: number | null;
  grounding?: string[];
}

export type ServerMessage =
  | { seq: number; kind: "state"; payload: StatePayload }
  | { seq: number; kind: "ack"; payload: AckPayload }
  | { seq: number; kind: "error"; payload: ErrorPayload }
  | { seq: number; kind: "warning"; payload: { message: string } };

const SERVER_KINDS = ["state", "ack", "error", "warning"];
const REQUIRED: Record<string, string[]> = {
  state: ["phase", "q"],
  ack: ["of", "phase"],
  error: ["message"],
  warning: ["message"],
};

export function decodeServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch (exc) {
    throw new ProtocolError(`bad frame body: ${exc}`);
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new ProtocolError("frame body must be an object");
  }
  const msg = data as Record<string, unknown>;
  if (msg.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${msg.v}`);
  }
  const seq = msg.seq;
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 0) {
    throw new ProtocolError(`bad sequence number ${seq}`);
  }
  const kind = msg.kind;
  if (typeof kind !== "string" || !SERVER_KINDS.includes(kind)) {
    throw new ProtocolError(`unknown message kind ${kind}`);
  }
  const payload = msg.payload;
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new ProtocolError(`${kind} payload must be an object`);
  }
  for (const key of REQUIRED[kind]) {
    if (!(key in (payload as Record<string, unknown>))) {
      throw new ProtocolError(`${kind} payload missing ${key}`);
    }
  }
  return { seq, kind, payload } as ServerMessage;
}

/** Client messages: commands and NL text, sequence-numbered per session. */
export interface Outbound {
  kind: "command" | "nl";
  payload: Record<string, unknown>;
}

export function encodeClientMessage(seq: number, out: Outbound): string {
  return JSON.stringify({
    v: PROTOCOL_VERSION,
    seq,
    kind: out.kind,
    payload: out.payload,
  });
}

export function command(name: string, extra: Record<string, unknown> = {}): Outbound {
  return { kind: "command", payload: { name, ...extra } };
}
