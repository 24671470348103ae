/**
 * Socket plumbing: owns the WebSocket, feeds the reducer, sends whatever
 * the reducer asks.  This is the only impure seam between the wire and
 * the view.
 */

import { Outbound, encodeClientMessage } from "./protocol";
import { Input, Reduced, ViewState, initialView, reduce } from "./state";

export interface Store {
  state: ViewState;
  dispatch(input: Input): void;
}

export function connect(
  url: string,
  onChange: (s: ViewState) => void,
): Store {
  let state = initialView();
  let sock: WebSocket | null = null;

  const send = (outs: Outbound[], base: number) => {
    // the reducer numbers outbound messages; base is its first seq
    outs.forEach((out, i) => {
      if (sock !== null && sock.readyState === WebSocket.OPEN) {
        sock.send(encodeClientMessage(base + i, out));
      }
    });
  };

  const dispatch = (input: Input) => {
    const reduced: Reduced = reduce(state, input);
    state = reduced.state;
    store.state = state;
    send(reduced.outbound, state.nextSeq - reduced.outbound.length);
    onChange(state);
  };

  const open = () => {
    sock = new WebSocket(url);
    sock.binaryType = "arraybuffer";
    sock.onopen = () => dispatch({ type: "socket-open" });
    sock.onclose = () => {
      dispatch({ type: "socket-closed" });
      setTimeout(open, 1000);
    };
    sock.onmessage = (ev) => {
      const raw =
        typeof ev.data === "string"
          ? ev.data
          : new TextDecoder().decode(ev.data as ArrayBuffer);
      dispatch({ type: "server", raw });
    };
  };

  const store: Store = { state, dispatch };
  open();
  return store;
}
