import { StatePayload } from "../src/protocol";
import { ViewState, initialView } from "../src/state";

export function sampleSnapshot(over: Partial<StatePayload> = {}): StatePayload {
  return {
    phase: "Idle",
    time: 1.25,
    q: [0, -0.9599, 1.6581, 0, 0.8727, 0, 0],
    tools: {
      pushcore: { t: [0.3, 0.32, 0.135], tracked: true, grasped: false },
      probe: { t: [0.35, 0.44, 0.135], tracked: false, grasped: false },
    },
    doors: { starboard: 0.0, port: 0.1 },
    marker: [-0.35, 0.4, 0.16],
    plan: null,
    selected_tool: null,
    grasped: null,
    last_error: null,
    terrain: [
      { shape: "plane", name: "deck", t: [0, 0, 0], size: [6, 6] },
      { shape: "box", name: "tooltray", t: [0.35, 0.37, 0.06], size: [0.3, 0.24, 0.12] },
    ],
    ...over,
  };
}

export function connectedView(over: Partial<ViewState> = {}): ViewState {
  return {
    ...initialView(),
    connection: "connected",
    controller: true,
    snapshot: sampleSnapshot(),
    nextSeq: 5,
    ...over,
  };
}

export function serverFrame(
  seq: number,
  kind: string,
  payload: unknown,
): string {
  return JSON.stringify({ v: 1, seq, kind, payload });
}
