"""Mapping from grounded utterances to supervised task events.

A grounding never executes anything by itself: the mapped events still go
through the task state machine, so motion only starts after an explicit
Confirm from the operator.
"""

from __future__ import annotations

from dataclasses import dataclass

ACTION_EVENTS = {
    "grasp-sequence": "RequestPlan",
    "go-to-sample": "RequestPlan",
    "execute-now": "Confirm",
    "release": "GripperOpen",
    "stow": "GotoNamedPose",
    "stop": "Stop",
}


class AmbiguousAction(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    """One task event; ``tool`` asks for a SelectTool first, ``pose`` names
    the target of a direct motion."""
    event: str
    tool: str | None = None
    pose: str | None = None


def command_from_grounding(grounding_ids, symbols) -> Command:
    """Turn an inferred grounding set into a single task event.

    Exactly one action symbol must be present; zero or several raise
    AmbiguousAction so a garbled utterance never moves the arm.
    """
    by_id = {s.id: s for s in symbols}
    syms = [by_id[g] for g in grounding_ids if g in by_id]
    actions = [s for s in syms if s.kind == "action"]
    if len(actions) != 1:
        raise AmbiguousAction(
            f"expected exactly one action symbol, got "
            f"{sorted(s.id for s in actions) or 'none'}")
    action = actions[0]
    objects = sorted((s for s in syms if s.kind == "object"),
                     key=lambda s: s.id)
    tool = objects[0].attr("tool") if objects else None
    event = ACTION_EVENTS[action.id]
    if action.id == "stow":
        return Command(event, pose="stow")
    if action.id == "grasp-sequence":
        return Command(event, tool=tool)
    return Command(event)
