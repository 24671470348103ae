"""Generator for the bundled operator-command corpus.

Sixty utterances over the six command verbs, three tray tools, and two
sites, each parsed by the chunker and annotated with its gold grounding.
"""

from __future__ import annotations

import importlib.resources

from .parsing import chunk, load_corpus

_RETRIEVE = ("get", "grab", "retrieve", "fetch", "take")
_TOOLS = ("pushcore", "slurpgun", "probe")


def _specs() -> list:
    """(utterance, grounding ids) pairs covering the command grammar."""
    out = []
    for verb in _RETRIEVE:
        for tool in _TOOLS:
            out.append((f"{verb} the {tool}", ["grasp-sequence", tool]))
    for verb in ("get", "retrieve", "grab"):
        for tool in _TOOLS:
            out.append((f"{verb} the {tool} from the tooltray",
                        ["grasp-sequence", tool, "tooltray"]))
    for utt, tool in (("take the probe from the tray", "probe"),
                      ("fetch the slurpgun from the tooltray", "slurpgun"),
                      ("grab the pushcore from the tray", "pushcore"),
                      ("fetch the probe from the tray", "probe"),
                      ("take the slurpgun from the tooltray", "slurpgun"),
                      ("get the probe from the tray", "probe")):
        out.append((utt, ["grasp-sequence", tool, "tooltray"]))
    for utt in ("go to the sample site", "move to the sample site",
                "go to the marker", "move to the marker",
                "head to the sample site", "go to the sample",
                "move to the site", "head to the marker",
                "go to the site", "move to the sample"):
        out.append((utt, ["go-to-sample", "sample-site"]))
    for utt in ("execute now", "execute the plan", "run the plan",
                "execute", "run the sequence"):
        out.append((utt, ["execute-now"]))
    for utt, extra in (("release the tool", None), ("drop the tool", None),
                       ("open the gripper", None), ("release", None),
                       ("release the probe", "probe"),
                       ("drop the slurpgun", "slurpgun"),
                       ("release the slurpgun", "slurpgun")):
        out.append((utt, ["release"] + ([extra] if extra else [])))
    for utt in ("stow the arm", "park the arm", "stow the manipulator",
                "stow", "park the manipulator"):
        out.append((utt, ["stow"]))
    for utt in ("stop", "halt", "stop now", "halt the arm",
                "stop the arm", "halt now"):
        out.append((utt, ["stop"]))
    return out


def make_corpus() -> list:
    return [{"utterance": utt, "parse": chunk(utt),
             "groundings": sorted(gold)} for utt, gold in _specs()]


def bundled_corpus() -> list:
    """The corpus shipped with the package."""
    path = importlib.resources.files("uvmstack.language") / "corpus.jsonl"
    return load_corpus(path)
