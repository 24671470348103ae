"""Single-threaded TCP service bridging operator consoles to the executive.

Many observer sessions, one controller chosen by claim_control.  The
service owns no world state: it reads snapshots and forwards commands to
the task executive, whose tick hook pumps these sockets during motion so
a stop lands within one control tick.  A WebSocket listener carries the
same JSON bodies for browser clients.
"""

from __future__ import annotations

import base64
import hashlib
import selectors
import socket
import struct
import time
from collections import deque

from ..geometry import Pose
from ..language import (AmbiguousAction, ChunkError, build_graph,
                        bundled_corpus, chunk, command_from_grounding,
                        default_symbols, infer, train)
from ..planning import PickAndPlaceExecutive
from .bandwidth import BandwidthLedger
from .protocol import (FrameReader, MalformedCommand, Message, MessageStream,
                       ProtocolError, SequenceChecker, decode, frame)
from .state import ChangeDetector, publish_state

COMMAND_EVENTS = {"select_tool": "SelectTool", "set_marker": "SetMarker",
                  "request_plan": "RequestPlan", "confirm": "Confirm",
                  "reject": "Reject", "retry": "Retry", "stop": "Stop",
                  "abort": "Abort", "open_gripper": "GripperOpen",
                  "close_gripper": "GripperClose", "goto": "GotoNamedPose"}

_KIND_CHANNEL = {"state": "scene-state", "nl": "nl"}
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_OUTBOX_LIMIT = 1 << 20


class NotController(Exception):
    pass


def _channel_for(kind: str) -> str:
    # command/ack/error/warning traffic rides the low-rate supervised
    # channel that replaces continuous manipulator teleoperation
    return _KIND_CHANNEL.get(kind, "teleop-manip")


# --- websocket framing ------------------------------------------------------

def ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_encode(body: bytes, opcode: int = 2) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(body)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + body


class WsFrameReader:
    """Parses client frames; yields (opcode, payload, wire_bytes)."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf.extend(data)
        out = []
        while True:
            parsed = self._parse_one()
            if parsed is None:
                return out
            out.append(parsed)

    def _parse_one(self):
        buf = self._buf
        if len(buf) < 2:
            return None
        opcode = buf[0] & 0x0F
        masked = bool(buf[1] & 0x80)
        length = buf[1] & 0x7F
        offset = 2
        if length == 126:
            if len(buf) < offset + 2:
                return None
            (length,) = struct.unpack_from(">H", buf, offset)
            offset += 2
        elif length == 127:
            if len(buf) < offset + 8:
                return None
            (length,) = struct.unpack_from(">Q", buf, offset)
            offset += 8
        mask = b""
        if masked:
            if len(buf) < offset + 4:
                return None
            mask = bytes(buf[offset:offset + 4])
            offset += 4
        if len(buf) < offset + length:
            return None
        payload = bytes(buf[offset:offset + length])
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        del buf[:offset + length]
        return opcode, payload, offset + length


# --- sessions ---------------------------------------------------------------

class _Session:
    def __init__(self, sid: int, sock: socket.socket, transport: str):
        self.id = sid
        self.sock = sock
        self.transport = transport  # "tcp" | "ws"
        self.handshaken = transport == "tcp"
        self.http_buf = bytearray()
        self.reader = FrameReader()
        self.ws_reader = WsFrameReader()
        self.out = MessageStream()
        self.in_check = SequenceChecker()
        self.outbox = bytearray()
        self.closing = False

    def wire_frame(self, msg: Message) -> bytes:
        if self.transport == "ws":
            return ws_encode(msg.encode())
        return frame(msg)


class OperatorService:
    """Command/state endpoint around one world and its task executive."""

    def __init__(self, world, planner=None, monitor=None,
                 host: str = "127.0.0.1", port: int = 0,
                 ws_port: int | None = None, state_interval: float = 0.2,
                 window: float = 5.0):
        self.world = world
        self.executive = PickAndPlaceExecutive(world, planner, monitor)
        self.executive.tick_hook = self._pump
        self.ledger = BandwidthLedger(window=window)
        self.detector = ChangeDetector()
        self.wire_log: list = []
        self.sessions: dict = {}
        self._controller: _Session | None = None
        self._queue: deque = deque()
        self._applying = False
        self._next_sid = 1
        self._state_interval = state_interval
        self._last_pub = -1e9
        self._last_pub_phase = None
        self._symbols = None
        self._nl_model = None
        self._sel = selectors.DefaultSelector()
        self._lsock = self._listen(host, port)
        self.port = self._lsock.getsockname()[1]
        self._ws_lsock = None
        self.ws_port = None
        if ws_port is not None:
            self._ws_lsock = self._listen(host, ws_port)
            self.ws_port = self._ws_lsock.getsockname()[1]

    def _listen(self, host, port):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.listen(16)
        sock.setblocking(False)
        self._sel.register(sock, selectors.EVENT_READ)
        return sock

    # -- main loop

    def serve_forever(self, stop=None, poll: float = 0.05):
        try:
            while stop is None or not stop():
                self._pump(timeout=poll)
                self._drain_queue()
        finally:
            self.close()

    def close(self):
        for sess in list(self.sessions.values()):
            self._drop(sess)
        for sock in (self._lsock, self._ws_lsock):
            if sock is not None:
                try:
                    self._sel.unregister(sock)
                except (KeyError, ValueError):
                    pass
                sock.close()
        self._lsock = self._ws_lsock = None

    # -- socket pump (also the executive's per-tick hook)

    def _pump(self, timeout: float = 0.0):
        if self._lsock is None:
            return
        for key, events in self._sel.select(timeout):
            sock = key.fileobj
            if sock is self._lsock or sock is self._ws_lsock:
                self._accept(sock)
            else:
                sess = key.data
                if events & selectors.EVENT_READ:
                    self._read(sess)
                if events & selectors.EVENT_WRITE:
                    self._flush(sess)
        now = time.monotonic()
        phase = self.executive.state.phase
        # phase flips publish immediately; anything else at the state rate
        if (phase != self._last_pub_phase
                or now - self._last_pub >= self._state_interval):
            self._publish()
            self._last_pub = now
            self._last_pub_phase = phase

    def _accept(self, lsock):
        try:
            sock, _ = lsock.accept()
        except OSError:
            return
        sock.setblocking(False)
        transport = "ws" if lsock is self._ws_lsock else "tcp"
        sess = _Session(self._next_sid, sock, transport)
        self._next_sid += 1
        self.sessions[sess.id] = sess
        self._sel.register(sock, selectors.EVENT_READ, sess)

    def _drop(self, sess):
        if sess.id not in self.sessions:
            return
        del self.sessions[sess.id]
        if self._controller is sess:
            self._controller = None
        try:
            self._sel.unregister(sess.sock)
        except (KeyError, ValueError):
            pass
        sess.sock.close()

    def _watch_writes(self, sess, enable: bool):
        events = selectors.EVENT_READ | (selectors.EVENT_WRITE if enable
                                         else 0)
        try:
            self._sel.modify(sess.sock, events, sess)
        except (KeyError, ValueError):
            pass

    def _flush(self, sess):
        if not sess.outbox:
            self._watch_writes(sess, False)
            return
        try:
            sent = sess.sock.send(bytes(sess.outbox))
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop(sess)
            return
        del sess.outbox[:sent]
        if not sess.outbox:
            self._watch_writes(sess, False)
            if sess.closing:
                self._drop(sess)

    def _read(self, sess):
        try:
            data = sess.sock.recv(65536)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop(sess)
            return
        if not data:
            self._drop(sess)
            return
        if sess.transport == "ws" and not sess.handshaken:
            data = self._ws_handshake(sess, data)
            if not data:
                return
        frames = []
        try:
            if sess.transport == "tcp":
                for body in sess.reader.feed(data):
                    frames.append((body, len(body) + 4))
            else:
                for opcode, payload, nbytes in sess.ws_reader.feed(data):
                    if opcode == 8:
                        sess.outbox.extend(ws_encode(b"", opcode=8))
                        sess.closing = True
                        self._watch_writes(sess, True)
                        return
                    if opcode == 9:
                        sess.outbox.extend(ws_encode(payload, opcode=10))
                        self._watch_writes(sess, True)
                        continue
                    if opcode in (1, 2):
                        frames.append((payload, nbytes))
        except ProtocolError as exc:
            self._send_error(sess, None, type(exc).__name__, str(exc))
            self._drop(sess)
            return
        for body, nbytes in frames:
            self._ingest(sess, body, nbytes)

    def _ws_handshake(self, sess, data: bytes) -> bytes:
        sess.http_buf.extend(data)
        end = sess.http_buf.find(b"\r\n\r\n")
        if end < 0:
            return b""
        header = bytes(sess.http_buf[:end]).decode("latin-1")
        rest = bytes(sess.http_buf[end + 4:])
        sess.http_buf.clear()
        key = None
        for line in header.split("\r\n")[1:]:
            name, _, value = line.partition(":")
            if name.strip().lower() == "sec-websocket-key":
                key = value.strip()
        if key is None:
            self._drop(sess)
            return b""
        response = ("HTTP/1.1 101 Switching Protocols\r\n"
                    "Upgrade: websocket\r\n"
                    "Connection: Upgrade\r\n"
                    f"Sec-WebSocket-Accept: {ws_accept_key(key)}\r\n\r\n")
        sess.outbox.extend(response.encode("latin-1"))
        self._watch_writes(sess, True)
        sess.handshaken = True
        return rest

    def _ingest(self, sess, body: bytes, nbytes: int):
        try:
            msg = decode(body)
            sess.in_check.check(msg.seq)
        except MalformedCommand as exc:
            self._send_error(sess, None, "MalformedCommand", str(exc))
            return
        except ProtocolError as exc:
            self._send_error(sess, None, "ProtocolError", str(exc))
            self._drop(sess)
            return
        self.ledger.account(_channel_for(msg.kind), nbytes, time.monotonic())
        self.wire_log.append({"dir": "in", "session": sess.id, "msg": msg})
        # a controller's stop takes effect before the queue is drained,
        # halting any motion in flight within one control tick
        if (msg.kind == "command" and msg.payload.get("name") == "stop"
                and sess is self._controller):
            self.executive.request_stop()
        self._queue.append((sess, msg))

    # -- command application

    def _drain_queue(self):
        if self._applying:
            return
        while self._queue:
            batch = sorted(
                self._queue,
                key=lambda it: 0 if (it[1].kind == "command"
                                     and it[1].payload.get("name") == "stop")
                else 1)
            self._queue.clear()
            for sess, msg in batch:
                if sess.id not in self.sessions:
                    continue
                self._applying = True
                try:
                    self._apply(sess, msg)
                finally:
                    self._applying = False

    def _apply(self, sess, msg: Message):
        if msg.kind == "command":
            self._apply_command(sess, msg)
        elif msg.kind == "nl":
            self._apply_nl(sess, msg)
        else:
            self._send_error(sess, msg.seq, "ProtocolError",
                             f"unexpected {msg.kind} message from client")

    def _ack(self, sess, msg: Message, **extra):
        payload = {"of": msg.seq, "phase": self.executive.state.phase}
        if self.executive.state.warning:
            payload["warning"] = self.executive.state.warning
        payload.update(extra)
        self._send(sess, "ack", payload)

    def _apply_command(self, sess, msg: Message):
        name = msg.payload["name"]
        if name == "claim_control":
            if self._controller is None or self._controller is sess:
                self._controller = sess
                self._ack(sess, msg, controller=True)
            else:
                self._send_error(sess, msg.seq, "NotController",
                                 "control held by another session")
            return
        if name == "release_control":
            if self._controller is sess:
                self._controller = None
            self._ack(sess, msg, controller=False)
            return
        if name == "request_state":
            payload = publish_state(self.world, self.executive, self.detector,
                                    ledger=self.ledger, now=time.monotonic(),
                                    force=True)
            self._send(sess, "state", payload)
            self._ack(sess, msg)
            return
        if sess is not self._controller:
            self._send_error(sess, msg.seq, "NotController",
                             "session is read-only; claim_control first")
            return
        event = COMMAND_EVENTS[name]
        payload = None
        if name == "select_tool":
            payload = msg.payload["tool"]
        elif name == "set_marker":
            payload = Pose(t=tuple(msg.payload["marker"]))
        elif name == "goto":
            payload = msg.payload["pose"]
        self.executive.handle(event, payload)
        self._ack(sess, msg)

    def _nl_pipeline(self):
        if self._nl_model is None:
            self._symbols = default_symbols(tuple(self.world.tools))
            corpus = bundled_corpus()
            self._nl_model = train(
                [(r["parse"], r["groundings"]) for r in corpus],
                self._symbols)
        return self._symbols, self._nl_model

    def _apply_nl(self, sess, msg: Message):
        if sess is not self._controller:
            self._send_error(sess, msg.seq, "NotController",
                             "session is read-only; claim_control first")
            return
        symbols, model = self._nl_pipeline()
        text = msg.payload["text"]
        try:
            tree = chunk(text)
        except ChunkError as exc:
            self._send_error(sess, msg.seq, "ChunkError", str(exc))
            return
        graph = build_graph(tree, symbols, world=self.world.tools)
        grounding = infer(graph, model)
        try:
            cmd = command_from_grounding(grounding, graph.symbols)
        except AmbiguousAction as exc:
            self._send_error(sess, msg.seq, "AmbiguousAction", str(exc),
                             grounding=grounding)
            return
        if cmd.tool is not None:
            self.executive.handle("SelectTool", cmd.tool)
        if cmd.event == "Stop":
            self.executive.request_stop()
        self.executive.handle(cmd.event, cmd.pose)
        self._ack(sess, msg, grounding=grounding,
                  command={"event": cmd.event, "tool": cmd.tool,
                           "pose": cmd.pose})

    # -- outbound

    def _send(self, sess, kind: str, payload: dict):
        msg = sess.out.make(kind, payload)
        data = sess.wire_frame(msg)
        self.ledger.account(_channel_for(kind), len(data), time.monotonic())
        self.wire_log.append({"dir": "out", "session": sess.id, "msg": msg})
        if len(sess.outbox) + len(data) > _OUTBOX_LIMIT:
            self._drop(sess)
            return
        sess.outbox.extend(data)
        self._flush(sess)
        if sess.id in self.sessions and sess.outbox:
            self._watch_writes(sess, True)

    def _send_error(self, sess, of, code: str, message: str, **extra):
        payload = {"message": message, "code": code, "of": of}
        payload.update(extra)
        self._send(sess, "error", payload)

    def _publish(self):
        if not self.sessions:
            return
        payload = publish_state(self.world, self.executive, self.detector,
                                ledger=self.ledger, now=time.monotonic())
        if payload is None:
            return
        for sess in list(self.sessions.values()):
            if sess.handshaken:
                self._send(sess, "state", payload)
