import * as fc from "fast-check";
import { describe, expect, it } from "vitest";

import { StatePayload } from "../src/protocol";
import {
  Input,
  Intent,
  LOG_LIMIT,
  ViewState,
  confirmEnabled,
  initialView,
  reduce,
} from "../src/state";
import { connectedView, sampleSnapshot, serverFrame } from "./fixtures";

// --- arbitraries ------------------------------------------------------------

const PHASES = [
  "Idle", "ToolSelected", "PlanGrasp", "AwaitConfirmGrasp", "ExecGrasp",
  "Grasped", "PlanSample", "AwaitConfirmSample", "ExecSample", "SampleDone",
  "PlanReturn", "AwaitConfirmReturn", "ExecReturn", "Done", "Aborted",
];

const arbCoord = fc.double({ min: -3, max: 3, noNaN: true });
const arbVec3 = fc.tuple(arbCoord, arbCoord, arbCoord) as fc.Arbitrary<
  [number, number, number]
>;

const arbSnapshot: fc.Arbitrary<StatePayload> = fc.record({
  phase: fc.constantFrom(...PHASES),
  time: fc.double({ min: 0, max: 1e4, noNaN: true }),
  q: fc.array(arbCoord, { minLength: 7, maxLength: 7 }),
  tools: fc.dictionary(
    fc.constantFrom("pushcore", "slurpgun", "probe"),
    fc.record({ t: arbVec3, tracked: fc.boolean(), grasped: fc.boolean() }),
  ),
  doors: fc.dictionary(fc.constantFrom("starboard", "port"), arbCoord),
  marker: fc.oneof(fc.constant(null), arbVec3),
  plan: fc.oneof(
    fc.constant(null),
    fc.record({
      points: fc.array(fc.array(arbCoord, { minLength: 7, maxLength: 7 }), {
        minLength: 1,
        maxLength: 5,
      }),
      duration: fc.double({ min: 0, max: 60, noNaN: true }),
      cost: fc.double({ min: 0, max: 30, noNaN: true }),
    }),
  ),
  selected_tool: fc.oneof(fc.constant(null), fc.constantFrom("pushcore", "probe")),
  grasped: fc.oneof(fc.constant(null), fc.constantFrom("pushcore", "probe")),
  last_error: fc.oneof(fc.constant(null), fc.string({ maxLength: 30 })),
});

const arbView: fc.Arbitrary<ViewState> = fc
  .record({
    connection: fc.constantFrom("connecting", "connected", "closed"),
    controller: fc.boolean(),
    snapshot: fc.oneof(fc.constant(null), arbSnapshot),
    pending: fc.oneof(
      fc.constant(null),
      fc.record({ seq: fc.nat(1000), label: fc.string({ maxLength: 12 }) }),
    ),
    nextSeq: fc.nat(1000),
    banner: fc.oneof(fc.constant(null), fc.string({ maxLength: 40 })),
    bandwidth: fc.constant(null),
    markerHeight: fc.double({ min: -1, max: 1, noNaN: true }),
    log: fc.array(fc.string({ maxLength: 20 }), { maxLength: 12 }),
  })
  .map((parts) => ({ ...initialView(), ...parts }) as ViewState);

const arbIntent: fc.Arbitrary<Intent> = fc.oneof(
  fc.constant<Intent>({ name: "claim" }),
  fc.constant<Intent>({ name: "release" }),
  fc.constant<Intent>({ name: "request-state" }),
  fc.record({ name: fc.constant("select-tool" as const), tool: fc.constantFrom("pushcore", "probe") }),
  arbVec3.map((at): Intent => ({ name: "set-marker", at })),
  fc.record({ name: fc.constant("marker-height" as const), z: arbCoord }),
  fc.constant<Intent>({ name: "request-plan" }),
  fc.constant<Intent>({ name: "confirm" }),
  fc.constant<Intent>({ name: "reject" }),
  fc.constant<Intent>({ name: "retry" }),
  fc.constant<Intent>({ name: "stop" }),
  fc.constant<Intent>({ name: "abort" }),
  fc.record({ name: fc.constant("nl" as const), text: fc.string({ maxLength: 25 }) }),
  fc.constant<Intent>({ name: "dismiss-banner" }),
);

const arbServerRaw: fc.Arbitrary<string> = fc.oneof(
  fc.tuple(fc.nat(500), arbSnapshot).map(([seq, p]) => serverFrame(seq, "state", p)),
  fc
    .tuple(fc.nat(500), fc.nat(500), fc.constantFrom(...PHASES), fc.boolean())
    .map(([seq, of, phase, ctl]) =>
      serverFrame(seq, "ack", { of, phase, controller: ctl }),
    ),
  fc
    .tuple(fc.nat(500), fc.string({ maxLength: 20 }))
    .map(([seq, m]) => serverFrame(seq, "error", { message: m, code: "Refused" })),
  fc
    .tuple(fc.nat(500), fc.string({ maxLength: 20 }))
    .map(([seq, m]) => serverFrame(seq, "warning", { message: m })),
);

const arbInput: fc.Arbitrary<Input> = fc.oneof(
  fc.constant<Input>({ type: "socket-open" }),
  fc.constant<Input>({ type: "socket-closed" }),
  arbServerRaw.map((raw): Input => ({ type: "server", raw })),
  arbIntent.map((intent): Input => ({ type: "intent", intent })),
);

const clone = <T>(x: T): T => JSON.parse(JSON.stringify(x));

// --- properties -------------------------------------------------------------

describe("reduce is a pure function", () => {
  it("gives identical output for identical input", () => {
    fc.assert(
      fc.property(arbView, arbInput, (view, input) => {
        const a = reduce(clone(view), clone(input));
        const b = reduce(clone(view), clone(input));
        expect(JSON.stringify(a)).toBe(JSON.stringify(b));
      }),
    );
  });

  it("never mutates its arguments", () => {
    fc.assert(
      fc.property(arbView, arbInput, (view, input) => {
        const viewBefore = JSON.stringify(view);
        const inputBefore = JSON.stringify(input);
        reduce(view, input);
        expect(JSON.stringify(view)).toBe(viewBefore);
        expect(JSON.stringify(input)).toBe(inputBefore);
      }),
    );
  });

  it("never throws on arbitrary junk from the socket", () => {
    fc.assert(
      fc.property(
        arbView,
        fc.oneof(fc.string({ maxLength: 60 }), fc.json()),
        (view, raw) => {
          const out = reduce(view, { type: "server", raw: String(raw) });
          expect(out.state.connection).toBe(view.connection);
        },
      ),
    );
  });

  it("flags an undecodable frame in the banner instead of crashing", () => {
    const view = connectedView();
    for (const raw of ["zap", "[]", '{"v":9,"seq":0,"kind":"state","payload":{}}']) {
      const { state, outbound } = reduce(view, { type: "server", raw });
      expect(state.banner).toMatch(/malformed server message/);
      expect(outbound).toHaveLength(0);
    }
  });
});

describe("command gating", () => {
  it("sends nothing at all unless connected", () => {
    fc.assert(
      fc.property(arbView, arbIntent, (view, intent) => {
        fc.pre(view.connection !== "connected");
        const { outbound } = reduce(view, { type: "intent", intent });
        expect(outbound).toHaveLength(0);
      }),
    );
  });

  it("without control only claim, release and state requests go out", () => {
    fc.assert(
      fc.property(arbView, arbIntent, (view, intent) => {
        fc.pre(view.connection === "connected" && !view.controller);
        const { outbound } = reduce(view, { type: "intent", intent });
        if (["claim", "release", "request-state"].includes(intent.name)) {
          expect(outbound).toHaveLength(1);
        } else {
          expect(outbound).toHaveLength(0);
        }
      }),
    );
  });

  it("never emits a confirm while the affordance is disabled", () => {
    fc.assert(
      fc.property(arbView, (view) => {
        fc.pre(!confirmEnabled(view));
        const { outbound } = reduce(view, {
          type: "intent",
          intent: { name: "confirm" },
        });
        const confirms = outbound.filter(
          (o) => o.kind === "command" && o.payload.name === "confirm",
        );
        expect(confirms).toHaveLength(0);
      }),
    );
  });

  it("emits exactly one confirm while the affordance is enabled", () => {
    fc.assert(
      fc.property(fc.constantFrom("AwaitConfirmGrasp", "AwaitConfirmSample", "AwaitConfirmReturn"), (phase) => {
        const view = connectedView({ snapshot: sampleSnapshot({ phase }) });
        expect(confirmEnabled(view)).toBe(true);
        const { outbound } = reduce(view, {
          type: "intent",
          intent: { name: "confirm" },
        });
        expect(outbound).toHaveLength(1);
        expect(outbound[0].payload.name).toBe("confirm");
      }),
    );
  });
});

describe("server messages are the only authority", () => {
  it("no intent ever changes snapshot, controller flag or bandwidth", () => {
    fc.assert(
      fc.property(arbView, arbIntent, (view, intent) => {
        const { state } = reduce(view, { type: "intent", intent });
        expect(JSON.stringify(state.snapshot)).toBe(JSON.stringify(view.snapshot));
        expect(state.controller).toBe(view.controller);
        expect(JSON.stringify(state.bandwidth)).toBe(JSON.stringify(view.bandwidth));
      }),
    );
  });

  it("an ack's phase lands in the displayed snapshot", () => {
    fc.assert(
      fc.property(arbView, fc.constantFrom(...PHASES), fc.nat(500), (view, phase, of) => {
        fc.pre(view.snapshot !== null);
        const raw = serverFrame(7, "ack", { of, phase });
        const { state } = reduce(view, { type: "server", raw });
        expect(state.snapshot!.phase).toBe(phase);
      }),
    );
  });

  it("a state message replaces the whole snapshot", () => {
    fc.assert(
      fc.property(arbView, arbSnapshot, (view, snap) => {
        const { state, outbound } = reduce(view, {
          type: "server",
          raw: serverFrame(9, "state", snap),
        });
        expect(JSON.stringify(state.snapshot)).toBe(JSON.stringify(snap));
        expect(outbound).toHaveLength(0);
      }),
    );
  });

  it("sequence numbers advance exactly with the frames sent", () => {
    fc.assert(
      fc.property(arbView, arbInput, (view, input) => {
        const { state, outbound } = reduce(view, input);
        expect(state.nextSeq).toBe(view.nextSeq + outbound.length);
      }),
    );
  });
});

describe("optimistic pending and rollback", () => {
  it("a sent command becomes pending under its own sequence number", () => {
    const view = connectedView({ pending: null });
    const { state, outbound } = reduce(view, {
      type: "intent",
      intent: { name: "request-plan" },
    });
    expect(outbound).toHaveLength(1);
    expect(state.pending).toEqual({ seq: view.nextSeq, label: "request plan" });
  });

  it("the matching ack settles the pending marker without a banner", () => {
    const view = connectedView({
      pending: { seq: 31, label: "request plan" },
      banner: null,
    });
    const raw = serverFrame(8, "ack", { of: 31, phase: "PlanGrasp" });
    const { state } = reduce(view, { type: "server", raw });
    expect(state.pending).toBeNull();
    expect(state.banner).toBeNull();
  });

  it("the matching error rolls the pending marker back and raises a banner", () => {
    const view = connectedView({ pending: { seq: 31, label: "request plan" } });
    const raw = serverFrame(8, "error", {
      message: "planner refused",
      code: "PlanFailed",
      of: 31,
    });
    const { state } = reduce(view, { type: "server", raw });
    expect(state.pending).toBeNull();
    expect(state.banner).toBe("PlanFailed: planner refused");
  });

  it("an unrelated error leaves the pending marker in place", () => {
    const view = connectedView({ pending: { seq: 31, label: "request plan" } });
    const raw = serverFrame(8, "error", { message: "later", of: 2 });
    const { state } = reduce(view, { type: "server", raw });
    expect(state.pending).toEqual({ seq: 31, label: "request plan" });
  });

  it("a NotController refusal drops the control flag", () => {
    const view = connectedView({ controller: true });
    const raw = serverFrame(8, "error", { message: "no", code: "NotController" });
    const { state } = reduce(view, { type: "server", raw });
    expect(state.controller).toBe(false);
  });

  it("losing the socket clears control and pending", () => {
    const view = connectedView({ pending: { seq: 3, label: "x" } });
    const { state } = reduce(view, { type: "socket-closed" });
    expect(state.connection).toBe("closed");
    expect(state.controller).toBe(false);
    expect(state.pending).toBeNull();
  });
});

describe("marker placement", () => {
  it("echoes the clicked ground point with the height offset applied", () => {
    fc.assert(
      fc.property(arbVec3, fc.double({ min: -0.5, max: 0.5, noNaN: true }), (at, h) => {
        const view = connectedView({ markerHeight: h });
        const { outbound } = reduce(view, {
          type: "intent",
          intent: { name: "set-marker", at },
        });
        expect(outbound).toHaveLength(1);
        expect(outbound[0].payload).toEqual({
          name: "set_marker",
          marker: [at[0], at[1], at[2] + h],
        });
      }),
    );
  });

  it("the height dial works even while disconnected", () => {
    const view = connectedView({ connection: "closed" });
    const { state } = reduce(view, {
      type: "intent",
      intent: { name: "marker-height", z: 0.25 },
    });
    expect(state.markerHeight).toBe(0.25);
  });
});

describe("natural language echo", () => {
  it("a sent utterance is shown before any grounding arrives", () => {
    const view = connectedView();
    const { state, outbound } = reduce(view, {
      type: "intent",
      intent: { name: "nl", text: "get the pushcore from the tooltray" },
    });
    expect(outbound[0]).toEqual({
      kind: "nl",
      payload: { text: "get the pushcore from the tooltray" },
    });
    expect(state.grounding).toEqual({
      text: "get the pushcore from the tooltray",
      ids: [],
      event: null,
      tool: null,
    });
  });

  it("the ack's grounding fills in the recognized symbols", () => {
    let view = connectedView();
    view = reduce(view, {
      type: "intent",
      intent: { name: "nl", text: "get the pushcore from the tooltray" },
    }).state;
    const raw = serverFrame(4, "ack", {
      of: view.pending!.seq,
      phase: "ToolSelected",
      grounding: ["grasp-sequence", "pushcore", "tooltray"],
      command: { event: "SelectTool", tool: "pushcore", pose: null },
    });
    const { state } = reduce(view, { type: "server", raw });
    expect(state.grounding).toEqual({
      text: "get the pushcore from the tooltray",
      ids: ["grasp-sequence", "pushcore", "tooltray"],
      event: "SelectTool",
      tool: "pushcore",
    });
  });
});

describe("log discipline", () => {
  it("the log never grows past its cap", () => {
    fc.assert(
      fc.property(fc.array(arbInput, { maxLength: 40 }), (inputs) => {
        let view = connectedView({
          log: new Array(LOG_LIMIT).fill("old line"),
        });
        for (const input of inputs) {
          view = reduce(view, input).state;
          expect(view.log.length).toBeLessThanOrEqual(LOG_LIMIT);
        }
      }),
    );
  });
});
