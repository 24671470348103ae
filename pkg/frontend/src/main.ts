/**
 * DOM wiring: buttons raise intents, the store renders back into the
 * canvas and the HUD.  No view logic lives here beyond enable/disable
 * flags the reducer already decided.
 */

import { paint, unprojectGround, Viewport } from "./draw";
import { renderScene } from "./render";
import { Intent, ViewState, confirmEnabled } from "./state";
import { Store, connect } from "./ws";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function wsUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
  const port = params.get("port") ?? "7402";
  return `ws://${host}:${port}`;
}

function fmtRate(bps: number): string {
  return bps >= 1000 ? `${(bps / 1000).toFixed(1)} kB/s` : `${bps.toFixed(0)} B/s`;
}

function main() {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d")!;
  const vp: Viewport = { width: canvas.width, height: canvas.height, scale: 170 };

  const phaseEl = el<HTMLElement>("phase");
  const connEl = el<HTMLElement>("conn");
  const bannerEl = el<HTMLElement>("banner");
  const bwEl = el<HTMLElement>("bandwidth");
  const doorsEl = el<HTMLElement>("doors");
  const logEl = el<HTMLElement>("log");
  const toolsEl = el<HTMLSelectElement>("tools");
  const groundEl = el<HTMLElement>("grounding");
  const nlEl = el<HTMLInputElement>("nl");
  const heightEl = el<HTMLInputElement>("marker-height");

  const render = (s: ViewState) => {
    paint(ctx, renderScene(s), vp);

    connEl.textContent = s.connection + (s.controller ? " · controller" : "");
    phaseEl.textContent = s.snapshot?.phase ?? "—";
    bannerEl.textContent = s.banner ?? "";
    bannerEl.style.display = s.banner === null ? "none" : "block";

    const rates = s.bandwidth?.rates;
    bwEl.textContent = rates
      ? `scene-state ${fmtRate(rates["scene-state"] ?? 0)} · ` +
        `commands ${fmtRate(rates["teleop-manip"] ?? 0)} · ` +
        `nl ${fmtRate(rates["nl"] ?? 0)}`
      : "—";

    const doors = s.snapshot?.doors ?? {};
    doorsEl.textContent = Object.entries(doors)
      .map(([name, a]) => `${name} ${((a * 180) / Math.PI).toFixed(1)}°`)
      .join(" · ");

    const tools = Object.keys(s.snapshot?.tools ?? {});
    if (toolsEl.options.length !== tools.length) {
      toolsEl.innerHTML = tools
        .map((t) => `<option value="${t}">${t}</option>`)
        .join("");
    }

    el<HTMLButtonElement>("confirm").disabled = !confirmEnabled(s);
    const haveControl = s.controller && s.connection === "connected";
    for (const id of ["select", "plan", "reject", "retry", "stop", "abort", "send-nl"]) {
      el<HTMLButtonElement>(id).disabled = !haveControl;
    }
    el<HTMLButtonElement>("claim").disabled = s.connection !== "connected";

    groundEl.textContent = s.grounding
      ? s.grounding.ids.length
        ? `"${s.grounding.text}" → [${s.grounding.ids.join(", ")}]` +
          (s.grounding.event ? ` → ${s.grounding.event}` : "")
        : `"${s.grounding.text}" …`
      : "";

    logEl.textContent = s.log.slice(-14).join("\n");
    logEl.scrollTop = logEl.scrollHeight;
  };

  const store: Store = connect(wsUrl(), render);
  const intent = (i: Intent) => store.dispatch({ type: "intent", intent: i });

  el("claim").onclick = () => intent({ name: "claim" });
  el("select").onclick = () =>
    toolsEl.value && intent({ name: "select-tool", tool: toolsEl.value });
  el("plan").onclick = () => intent({ name: "request-plan" });
  el("confirm").onclick = () => intent({ name: "confirm" });
  el("reject").onclick = () => intent({ name: "reject" });
  el("retry").onclick = () => intent({ name: "retry" });
  el("stop").onclick = () => intent({ name: "stop" });
  el("abort").onclick = () => intent({ name: "abort" });
  el("banner").onclick = () => intent({ name: "dismiss-banner" });
  el("send-nl").onclick = () => {
    if (nlEl.value.trim()) intent({ name: "nl", text: nlEl.value.trim() });
  };
  heightEl.onchange = () =>
    intent({ name: "marker-height", z: parseFloat(heightEl.value) || 0 });

  canvas.onclick = (ev) => {
    const rect = canvas.getBoundingClientRect();
    const [x, y] = unprojectGround(
      ev.clientX - rect.left,
      ev.clientY - rect.top,
      vp,
    );
    intent({ name: "set-marker", at: [x, y, 0] });
  };
}

main();
