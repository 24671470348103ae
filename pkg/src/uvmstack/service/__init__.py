"""Operator command/state service and its wire protocol."""

from .bandwidth import (CHANNELS, NL_TEXT, SCENE_STATE_BAND, TELEOP_MANIP,
                        BandwidthLedger, ModeSpec, estimate_bandwidth)
from .client import OperatorClient
from .protocol import (COMMAND_NAMES, KINDS, PROTOCOL_VERSION, FrameReader,
                       MalformedCommand, Message, MessageStream,
                       ProtocolError, SequenceChecker, decode, frame,
                       validate_payload)
from .server import (COMMAND_EVENTS, NotController, OperatorService,
                     WsFrameReader, ws_accept_key, ws_encode)
from .state import (ChangeDetector, StateThresholds, build_state_payload,
                    publish_state)

__all__ = [
    "CHANNELS", "COMMAND_EVENTS", "COMMAND_NAMES", "ChangeDetector",
    "BandwidthLedger", "FrameReader", "KINDS", "MalformedCommand",
    "Message", "MessageStream", "ModeSpec", "NL_TEXT", "NotController",
    "OperatorClient", "OperatorService", "PROTOCOL_VERSION",
    "ProtocolError", "SCENE_STATE_BAND", "SequenceChecker",
    "StateThresholds", "TELEOP_MANIP", "WsFrameReader",
    "build_state_payload", "decode", "estimate_bandwidth", "frame",
    "publish_state", "validate_payload", "ws_accept_key", "ws_encode",
]
