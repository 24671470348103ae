"""Wire protocol: length-prefixed canonical JSON messages.

Frames are a 4-byte big-endian body length followed by a UTF-8 JSON object
{"v", "seq", "kind", "payload"}.  Encoding is canonical (sorted keys, no
whitespace) so serialize(deserialize(m)) is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
KINDS = ("state", "command", "nl", "ack", "error", "warning")
HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20

COMMAND_NAMES = ("claim_control", "release_control", "request_state",
                 "select_tool", "set_marker", "request_plan", "confirm",
                 "reject", "retry", "stop", "abort", "open_gripper",
                 "close_gripper", "goto")


class ProtocolError(ValueError):
    pass


class MalformedCommand(ProtocolError):
    pass


def validate_payload(kind: str, payload):
    """Check the keys a kind requires; extra keys are allowed."""
    if not isinstance(payload, dict):
        raise ProtocolError(f"{kind} payload must be an object")
    need = {"command": ("name",), "nl": ("text",), "state": ("phase", "q"),
            "ack": ("of", "phase"), "error": ("message",),
            "warning": ("message",)}[kind]
    missing = [k for k in need if k not in payload]
    if missing:
        raise ProtocolError(f"{kind} payload missing {missing}")
    if kind == "command":
        name = payload["name"]
        if name not in COMMAND_NAMES:
            raise MalformedCommand(f"unknown command {name!r}")
        if name == "set_marker":
            marker = payload.get("marker")
            if (not isinstance(marker, (list, tuple)) or len(marker) != 3
                    or not all(isinstance(v, (int, float)) for v in marker)):
                raise MalformedCommand("set_marker needs marker: [x, y, z]")
        if name == "select_tool" and not isinstance(payload.get("tool"), str):
            raise MalformedCommand("select_tool needs tool: str")
        if name == "goto" and not isinstance(payload.get("pose"), str):
            raise MalformedCommand("goto needs pose: str")
    if kind == "nl" and not isinstance(payload["text"], str):
        raise ProtocolError("nl text must be a string")


@dataclass(frozen=True)
class Message:
    seq: int
    kind: str
    payload: dict

    def encode(self) -> bytes:
        return json.dumps(
            {"v": PROTOCOL_VERSION, "seq": self.seq, "kind": self.kind,
             "payload": self.payload},
            separators=(",", ":"), sort_keys=True).encode()

    @property
    def byte_size(self) -> int:
        """Size of the transmitted frame, header included."""
        return HEADER.size + len(self.encode())


def frame(msg: Message) -> bytes:
    body = msg.encode()
    return HEADER.pack(len(body)) + body


def decode(body: bytes) -> Message:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad frame body: {exc}") from None
    if not isinstance(data, dict):
        raise ProtocolError("frame body must be an object")
    if data.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {data.get('v')!r}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    seq = data.get("seq")
    if not isinstance(seq, int) or seq < 0:
        raise ProtocolError(f"bad sequence number {seq!r}")
    payload = data.get("payload")
    validate_payload(kind, payload)
    return Message(seq, kind, payload)


class FrameReader:
    """Reassembles frames from a TCP byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= HEADER.size:
            (length,) = HEADER.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise ProtocolError(f"frame of {length} bytes exceeds limit")
            if len(self._buf) < HEADER.size + length:
                break
            out.append(bytes(self._buf[HEADER.size:HEADER.size + length]))
            del self._buf[:HEADER.size + length]
        return out


class MessageStream:
    """Outbound sequence numbering for one direction of one session."""

    def __init__(self):
        self._next = 0

    def make(self, kind: str, payload: dict) -> Message:
        validate_payload(kind, payload)
        msg = Message(self._next, kind, payload)
        self._next += 1
        return msg


@dataclass
class SequenceChecker:
    """Enforces strictly increasing sequence numbers on a direction."""
    last: int | None = field(default=None)

    def check(self, seq: int):
        if self.last is not None and seq <= self.last:
            raise ProtocolError(
                f"sequence {seq} not greater than {self.last}")
        self.last = seq
