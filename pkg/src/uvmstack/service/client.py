"""Blocking convenience client for the operator wire protocol."""

from __future__ import annotations

import socket
import time
from collections import deque

from .protocol import (FrameReader, Message, MessageStream, SequenceChecker,
                       decode, frame)


class OperatorClient:
    """Connects over TCP, sends commands, and collects inbound messages."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(0.05)
        self.timeout = timeout
        self.reader = FrameReader()
        self.out = MessageStream()
        self.in_check = SequenceChecker()
        self.inbox: deque = deque()
        self.bytes_sent = 0
        self.bytes_received = 0

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- io

    def send(self, kind: str, payload: dict) -> Message:
        msg = self.out.make(kind, payload)
        data = frame(msg)
        self.sock.sendall(data)
        self.bytes_sent += len(data)
        return msg

    def pump(self):
        try:
            data = self.sock.recv(65536)
        except socket.timeout:
            return
        except OSError:
            return
        if not data:
            return
        self.bytes_received += len(data)
        for body in self.reader.feed(data):
            msg = decode(body)
            self.in_check.check(msg.seq)
            self.inbox.append(msg)

    def recv(self, timeout: float | None = None) -> Message | None:
        deadline = time.monotonic() + (timeout if timeout is not None
                                       else self.timeout)
        while not self.inbox:
            if time.monotonic() > deadline:
                return None
            self.pump()
        return self.inbox.popleft()

    def wait_for(self, pred, timeout: float | None = None) -> Message | None:
        """Next message matching ``pred``; others stay queued in order."""
        deadline = time.monotonic() + (timeout if timeout is not None
                                       else self.timeout)
        scanned: deque = deque()
        while True:
            while self.inbox:
                msg = self.inbox.popleft()
                if pred(msg):
                    self.inbox.extendleft(reversed(scanned))
                    return msg
                scanned.append(msg)
            if time.monotonic() > deadline:
                self.inbox.extendleft(reversed(scanned))
                return None
            self.pump()

    # -- conveniences

    def command(self, name: str, timeout: float | None = None,
                **args) -> Message:
        """Send a command and wait for its ack or error."""
        sent = self.send("command", {"name": name, **args})
        reply = self.wait_for(
            lambda m: m.kind in ("ack", "error")
            and m.payload.get("of") == sent.seq, timeout)
        if reply is None:
            raise TimeoutError(f"no reply to {name!r}")
        return reply

    def nl(self, text: str, timeout: float | None = None) -> Message:
        sent = self.send("nl", {"text": text})
        reply = self.wait_for(
            lambda m: m.kind in ("ack", "error")
            and m.payload.get("of") == sent.seq, timeout)
        if reply is None:
            raise TimeoutError("no reply to nl message")
        return reply

    def states(self) -> list:
        self.pump()
        return [m for m in self.inbox if m.kind == "state"]
