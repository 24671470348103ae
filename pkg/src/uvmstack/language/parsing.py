"""Rule-based chunker for the operator command grammar.

Commands follow verb + optional noun phrase + optional prepositional phrase
("get the pushcore from the tooltray").  Trailing adverbs fold into the verb
so phrasal commands like "execute now" stay one constituent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

VERBS = {"get", "grab", "retrieve", "fetch", "take", "go", "move", "head",
         "execute", "run", "release", "drop", "open", "stow", "park",
         "stop", "halt"}
DETERMINERS = {"the", "a", "an", "that", "this"}
PREPOSITIONS = {"from", "to", "at", "in", "on", "into"}
ADVERBS = {"now", "please", "again"}


class ChunkError(ValueError):
    pass


@dataclass
class Node:
    """Parse constituent: leaves carry a word, interior nodes carry children."""
    label: str
    word: str | None = None
    children: list = field(default_factory=list)

    def tokens(self) -> list:
        if self.word is not None:
            return self.word.split()
        out = []
        for c in self.children:
            out.extend(c.tokens())
        return out

    def is_leaf(self) -> bool:
        return self.word is not None


def tokenize(utterance: str) -> list:
    return re.findall(r"[a-z]+", utterance.lower())


def chunk(utterance: str) -> Node:
    """Parse an utterance into a VP tree (VB [NP] [PP]*)."""
    toks = tokenize(utterance)
    if not toks:
        raise ChunkError("empty utterance")
    if toks[0] not in VERBS:
        raise ChunkError(f"expected a command verb, got {toks[0]!r}")
    verb = toks[0]
    i = 1
    while i < len(toks) and toks[i] in ADVERBS:
        verb += " " + toks[i]
        i += 1
    children = [Node("VB", word=verb)]
    np: list = []

    def flush():
        if np:
            children.append(Node("NP", children=list(np)))
            np.clear()

    while i < len(toks):
        t = toks[i]
        if t in PREPOSITIONS:
            flush()
            j = i + 1
            inner = []
            while j < len(toks) and toks[j] not in PREPOSITIONS:
                label = "DT" if toks[j] in DETERMINERS else "NN"
                inner.append(Node(label, word=toks[j]))
                j += 1
            if not any(n.label == "NN" for n in inner):
                raise ChunkError(f"preposition {t!r} with no object")
            children.append(Node("PP", children=[Node("IN", word=t),
                                                 Node("NP", children=inner)]))
            i = j
        elif t in ADVERBS:
            i += 1
        else:
            np.append(Node("DT" if t in DETERMINERS else "NN", word=t))
            i += 1
    flush()
    return Node("VP", children=children)


# --- serialization ----------------------------------------------------------

def tree_to_json(node: Node) -> dict:
    if node.is_leaf():
        return {"label": node.label, "word": node.word}
    return {"label": node.label,
            "children": [tree_to_json(c) for c in node.children]}


def tree_from_json(data: dict) -> Node:
    if "word" in data:
        return Node(data["label"], word=data["word"])
    return Node(data["label"],
                children=[tree_from_json(c) for c in data["children"]])


def load_corpus(path) -> list:
    """Read JSON-lines utterances: {"utterance", "parse", "groundings"}."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append({"utterance": rec["utterance"],
                        "parse": tree_from_json(rec["parse"]),
                        "groundings": list(rec["groundings"])})
    return out


def save_corpus(records: list, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"utterance": rec["utterance"],
                                 "parse": tree_to_json(rec["parse"]),
                                 "groundings": sorted(rec["groundings"])})
                     + "\n")
