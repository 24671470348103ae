/**
 * The console's single source of truth: a pure reducer over
 * (ViewState, server message | user intent).  All authoritative fields
 * (phase, poses, controller flag) come from server messages; user intents
 * only raise outbound commands and optimistic pending markers that the next
 * ack or error settles.  Nothing in here touches sockets, clocks, or DOM.
 */

import {
  AckPayload,
  BandwidthReport,
  ErrorPayload,
  Outbound,
  ProtocolError,
  StatePayload,
  command,
  decodeServerMessage,
} from "./protocol";

export type ConnectionStatus = "connecting" | "connected" | "closed";

export interface GroundingEcho {
  text: string;
  ids: string[];
  event: string | null;
  tool: string | null;
}

export interface ViewState {
  connection: ConnectionStatus;
  controller: boolean;
  snapshot: StatePayload | null;
  /** seq of the command awaiting its ack, with a label for the UI */
  pending: { seq: number; label: string } | null;
  nextSeq: number;
  banner: string | null;
  grounding: GroundingEcho | null;
  bandwidth: BandwidthReport | null;
  log: string[];
  /** carried alongside intents so the reducer never reads a clock */
  markerHeight: number;
}

export const LOG_LIMIT = 200;

export function initialView(): ViewState {
  return {
    connection: "connecting",
    controller: false,
    snapshot: null,
    pending: null,
    nextSeq: 0,
    banner: null,
    grounding: null,
    bandwidth: null,
    log: [],
    markerHeight: 0.0,
  };
}

export type Intent =
  | { name: "claim" }
  | { name: "release" }
  | { name: "request-state" }
  | { name: "select-tool"; tool: string }
  | { name: "set-marker"; at: [number, number, number] }
  | { name: "marker-height"; z: number }
  | { name: "request-plan" }
  | { name: "confirm" }
  | { name: "reject" }
  | { name: "retry" }
  | { name: "stop" }
  | { name: "abort" }
  | { name: "nl"; text: string }
  | { name: "dismiss-banner" };

export type Input =
  | { type: "socket-open" }
  | { type: "socket-closed" }
  | { type: "server"; raw: string }
  | { type: "intent"; intent: Intent };

export interface Reduced {
  state: ViewState;
  outbound: Outbound[];
}

/** Confirm is live only while the server says it would be accepted. */
export function confirmEnabled(s: ViewState): boolean {
  return (
    s.controller &&
    s.connection === "connected" &&
    s.snapshot !== null &&
    s.snapshot.phase.startsWith("AwaitConfirm")
  );
}

function pushLog(log: string[], line: string): string[] {
  const next = [...log, line];
  return next.length > LOG_LIMIT ? next.slice(next.length - LOG_LIMIT) : next;
}

function sendCommand(
  s: ViewState,
  label: string,
  out: Outbound,
): Reduced {
  const state: ViewState = {
    ...s,
    pending: { seq: s.nextSeq, label },
    nextSeq: s.nextSeq + 1,
    log: pushLog(s.log, `> ${label}`),
  };
  return { state, outbound: [out] };
}

function onState(s: ViewState, payload: StatePayload): Reduced {
  const lines: string[] = [];
  if (s.snapshot === null || s.snapshot.phase !== payload.phase) {
    lines.push(`phase ${payload.phase}`);
  }
  let log = s.log;
  for (const line of lines) log = pushLog(log, line);
  return {
    state: {
      ...s,
      snapshot: payload,
      bandwidth: payload.bandwidth ?? s.bandwidth,
      log,
    },
    outbound: [],
  };
}

function onAck(s: ViewState, payload: AckPayload): Reduced {
  let state: ViewState = { ...s };
  if (state.pending !== null && payload.of === state.pending.seq) {
    state.pending = null;
  }
  if (typeof payload.controller === "boolean") {
    state.controller = payload.controller;
  }
  // the ack's phase is authoritative, same as a state message's
  if (state.snapshot !== null && payload.phase !== state.snapshot.phase) {
    state.snapshot = { ...state.snapshot, phase: payload.phase };
    state.log = pushLog(state.log, `phase ${payload.phase}`);
  }
  if (payload.grounding !== undefined) {
    state.grounding = {
      text: state.grounding?.text ?? "",
      ids: payload.grounding,
      event: payload.command?.event ?? null,
      tool: payload.command?.tool ?? null,
    };
    state.log = pushLog(state.log, `grounded [${payload.grounding.join(", ")}]`);
  }
  if (payload.warning) {
    state.log = pushLog(state.log, `warning: ${payload.warning}`);
  }
  return { state, outbound: [] };
}

function onError(s: ViewState, payload: ErrorPayload): Reduced {
  let state: ViewState = {
    ...s,
    banner: `${payload.code ?? "Error"}: ${payload.message}`,
    log: pushLog(s.log, `error ${payload.code ?? ""} ${payload.message}`),
  };
  // a rejected command rolls its optimistic marker back
  if (state.pending !== null && payload.of === state.pending.seq) {
    state = { ...state, pending: null };
  }
  if (payload.code === "NotController") {
    state = { ...state, controller: false };
  }
  if (payload.grounding !== undefined) {
    state = {
      ...state,
      grounding: {
        text: state.grounding?.text ?? "",
        ids: payload.grounding,
        event: null,
        tool: null,
      },
    };
  }
  return { state, outbound: [] };
}

function onServer(s: ViewState, raw: string): Reduced {
  let msg;
  try {
    msg = decodeServerMessage(raw);
  } catch (exc) {
    if (exc instanceof ProtocolError) {
      return {
        state: {
          ...s,
          banner: `malformed server message: ${exc.message}`,
          log: pushLog(s.log, `malformed server message`),
        },
        outbound: [],
      };
    }
    throw exc;
  }
  switch (msg.kind) {
    case "state":
      return onState(s, msg.payload);
    case "ack":
      return onAck(s, msg.payload);
    case "error":
      return onError(s, msg.payload);
    case "warning":
      return {
        state: { ...s, log: pushLog(s.log, `warning: ${msg.payload.message}`) },
        outbound: [],
      };
  }
}

function onIntent(s: ViewState, intent: Intent): Reduced {
  switch (intent.name) {
    case "dismiss-banner":
      return { state: { ...s, banner: null }, outbound: [] };
    case "marker-height":
      return { state: { ...s, markerHeight: intent.z }, outbound: [] };
  }
  if (s.connection !== "connected") {
    return { state: s, outbound: [] };
  }
  switch (intent.name) {
    case "claim":
      return sendCommand(s, "claim control", command("claim_control"));
    case "release":
      return sendCommand(s, "release control", command("release_control"));
    case "request-state":
      return sendCommand(s, "request state", command("request_state"));
  }
  // everything below drives the executive and needs control
  if (!s.controller) {
    return { state: s, outbound: [] };
  }
  switch (intent.name) {
    case "select-tool":
      return sendCommand(
        s,
        `select ${intent.tool}`,
        command("select_tool", { tool: intent.tool }),
      );
    case "set-marker": {
      const at = [intent.at[0], intent.at[1], intent.at[2] + s.markerHeight];
      return sendCommand(s, "set marker", command("set_marker", { marker: at }));
    }
    case "request-plan":
      return sendCommand(s, "request plan", command("request_plan"));
    case "confirm":
      if (!confirmEnabled(s)) {
        return { state: s, outbound: [] };
      }
      return sendCommand(s, "confirm", command("confirm"));
    case "reject":
      return sendCommand(s, "reject", command("reject"));
    case "retry":
      return sendCommand(s, "retry", command("retry"));
    case "stop":
      return sendCommand(s, "stop", command("stop"));
    case "abort":
      return sendCommand(s, "abort", command("abort"));
    case "nl": {
      const reduced = sendCommand(s, `nl "${intent.text}"`, {
        kind: "nl",
        payload: { text: intent.text },
      });
      return {
        ...reduced,
        state: {
          ...reduced.state,
          grounding: { text: intent.text, ids: [], event: null, tool: null },
        },
      };
    }
  }
}

export function reduce(s: ViewState, input: Input): Reduced {
  switch (input.type) {
    case "socket-open":
      return {
        state: { ...s, connection: "connected", log: pushLog(s.log, "connected") },
        outbound: [],
      };
    case "socket-closed":
      return {
        state: {
          ...s,
          connection: "closed",
          controller: false,
          pending: null,
          log: pushLog(s.log, "disconnected"),
        },
        outbound: [],
      };
    case "server":
      return onServer(s, input.raw);
    case "intent":
      return onIntent(s, input.intent);
  }
}
