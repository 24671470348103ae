"""Grounding graphs over parse trees with trained factor weights.

Each grammatical constituent gets a block of Boolean correspondence
variables, one per candidate symbol.  A block's factor sees its own words,
its label, and whether any child block grounds the same symbol, so the
joint objective splits per symbol and exact inference is a tree sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .parsing import Node

BLOCK_LABELS = ("VB", "NP", "PP", "VP")


class EmptySymbolSpace(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class UnknownGoldSymbol(ValueError):
    pass


@dataclass(frozen=True)
class GroundingSymbol:
    """A thing an utterance can refer to: an action, object, or location."""
    id: str
    kind: str  # object | action | location
    attributes: tuple = ()

    def attr(self, key, default=None):
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def triggers(self) -> frozenset:
        return frozenset(self.attr("triggers", ()))


def default_symbols(tool_ids=("pushcore", "slurpgun", "probe")) -> list:
    """Symbol space for the testbed: six verbs, the tray tools, two sites."""
    syms = [
        GroundingSymbol("grasp-sequence", "action",
                        (("triggers", ("get", "grab", "retrieve", "fetch",
                                       "take")),)),
        GroundingSymbol("go-to-sample", "action",
                        (("triggers", ("go", "move", "head")),)),
        GroundingSymbol("execute-now", "action",
                        (("triggers", ("execute", "run")),)),
        GroundingSymbol("release", "action",
                        (("triggers", ("release", "drop", "open")),)),
        GroundingSymbol("stow", "action",
                        (("triggers", ("stow", "park")),)),
        GroundingSymbol("stop", "action",
                        (("triggers", ("stop", "halt")),)),
        GroundingSymbol("tooltray", "location",
                        (("triggers", ("tooltray", "tray")),)),
        GroundingSymbol("sample-site", "location",
                        (("triggers", ("sample", "site", "marker")),)),
    ]
    for tool in tool_ids:
        syms.append(GroundingSymbol(tool, "object",
                                    (("tool", tool), ("triggers", (tool,)))))
    return syms


# --- graph construction -----------------------------------------------------

@dataclass
class Block:
    node: Node
    children: list = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.node.label

    def own_tokens(self) -> list:
        """Words of this constituent not claimed by a child block."""
        if self.node.is_leaf():
            return self.node.tokens()
        out = []
        for c in self.node.children:
            if c.label not in BLOCK_LABELS:
                out.extend(c.tokens())
        return out

    def subtree_tokens(self) -> list:
        return self.node.tokens()


def _build_block(node: Node) -> Block:
    blk = Block(node)
    if not node.is_leaf():
        for c in node.children:
            if c.label in BLOCK_LABELS:
                blk.children.append(_build_block(c))
            else:
                # leaves without blocks (DT, NN, IN) contribute words only;
                # the grammar never nests a block under them
                pass
    return blk


@dataclass
class DcgGraph:
    """Factor blocks mirroring a parse tree, with candidate symbols."""
    root: Block
    symbols: list

    def blocks(self) -> list:
        out = []

        def walk(b):
            out.append(b)
            for c in b.children:
                walk(c)

        walk(self.root)
        return out


def build_graph(tree: Node, symbols, world=None) -> DcgGraph:
    """Candidate symbols per constituent, filtered by what the scene holds.

    ``world`` may be a simulator world or an iterable of present tool ids;
    object symbols for absent tools are dropped.
    """
    syms = list(symbols)
    if not syms:
        raise EmptySymbolSpace("no candidate symbols")
    if world is not None:
        present = set(world.tools) if hasattr(world, "tools") else set(world)
        syms = [s for s in syms
                if s.kind != "object" or s.attr("tool") in present]
        if not syms:
            raise EmptySymbolSpace("symbol space empty after scene filter")
    return DcgGraph(_build_block(tree), syms)


# --- features and factors ---------------------------------------------------

def features(block: Block, sym: GroundingSymbol, ctx: bool) -> list:
    """Binary indicator features for one correspondence variable."""
    feats = [("lab", block.label, sym.id), ("labk", block.label, sym.kind)]
    for tok in block.own_tokens():
        feats.append(("w", tok, sym.id))
        feats.append(("wk", tok, sym.kind))
    if ctx:
        feats.append(("ctx", block.label, sym.id))
        feats.append(("ctxk", block.label, sym.kind))
    return feats


def _score(weights: dict, feats) -> float:
    return sum(weights.get(f, 0.0) for f in feats)


def _log_sigmoid(s: float) -> float:
    # log sigma(s), stable for large |s|
    if s >= 0:
        return -math.log1p(math.exp(-s))
    return s - math.log1p(math.exp(s))


def factor_logp(weights: dict, block: Block, sym: GroundingSymbol,
                ctx: bool, phi: bool) -> float:
    s = _score(weights, features(block, sym, ctx))
    return _log_sigmoid(s) if phi else _log_sigmoid(-s)


@dataclass
class LanguageModelWeights:
    """Trained factor weights; serializes to versioned JSON."""
    weights: dict
    version: int = 1

    def to_json(self) -> str:
        flat = {"|".join(k): v for k, v in sorted(self.weights.items())}
        return json.dumps({"v": self.version, "weights": flat}, indent=0)

    @classmethod
    def from_json(cls, text: str) -> "LanguageModelWeights":
        data = json.loads(text)
        w = {tuple(k.split("|")): float(v)
             for k, v in data["weights"].items()}
        return cls(weights=w, version=int(data["v"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "LanguageModelWeights":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# --- inference --------------------------------------------------------------

def _best_subtree(weights: dict, block: Block, sym: GroundingSymbol):
    """Max log-prob of this subtree for each own truth value.

    The block's factor conditions on whether any child grounds the symbol,
    so the children split into an all-false case and a some-true case.
    """
    child_vals = [_best_subtree(weights, c, sym) for c in block.children]
    out = []
    for phi in (False, True):
        if not child_vals:
            out.append(factor_logp(weights, block, sym, False, phi))
            continue
        all_false = (factor_logp(weights, block, sym, False, phi)
                     + sum(v[0] for v in child_vals))
        free = sum(max(v) for v in child_vals)
        # cheapest flip if no child already prefers true
        forfeit = min(max(v) - v[1] for v in child_vals)
        some_true = (factor_logp(weights, block, sym, True, phi)
                     + free - forfeit)
        out.append(max(all_false, some_true))
    return out


def infer(graph: DcgGraph, model: LanguageModelWeights) -> list:
    """Most probable grounding set at the root, symbol ids sorted."""
    out = []
    for sym in graph.symbols:
        off, on = _best_subtree(model.weights, graph.root, sym)
        if on > off:
            out.append(sym.id)
    return sorted(out)


def brute_force_infer(graph: DcgGraph, model: LanguageModelWeights):
    """Joint argmax by powerset enumeration; oracle for the tree sweep.

    Returns (root grounding ids, max joint log-prob).  Exponential in
    blocks x symbols, so only viable for tiny graphs.
    """
    blocks = graph.blocks()
    nb, ns = len(blocks), len(graph.symbols)
    child_idx = [[blocks.index(c) for c in b.children] for b in blocks]
    best_lp = -math.inf
    best_root: list = []
    for mask in range(1 << (nb * ns)):
        phi = [[bool(mask >> (i * ns + j) & 1) for j in range(ns)]
               for i in range(nb)]
        lp = 0.0
        for i, b in enumerate(blocks):
            for j, sym in enumerate(graph.symbols):
                ctx = any(phi[c][j] for c in child_idx[i])
                lp += factor_logp(model.weights, b, sym, ctx, phi[i][j])
        if lp > best_lp:
            best_lp = lp
            best_root = sorted(graph.symbols[j].id for j in range(ns)
                               if phi[0][j])
    return best_root, best_lp


def max_logp(graph: DcgGraph, model: LanguageModelWeights) -> float:
    """Max joint log-prob via the per-symbol tree sweep."""
    total = 0.0
    for sym in graph.symbols:
        total += max(_best_subtree(model.weights, graph.root, sym))
    return total


# --- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 5.0
    epochs: int = 12000
    l2: float = 3e-5
    tol: float = 1e-12
    seed: int = 0


def gold_block_truth(block: Block, sym: GroundingSymbol,
                     gold_ids: set) -> bool:
    """A constituent grounds a gold symbol iff its words mention it."""
    if sym.id not in gold_ids:
        return False
    return bool(sym.triggers() & set(block.subtree_tokens()))


def _instances(examples, symbols):
    """(features, label) pairs; context bits come from gold child truth."""
    known = {s.id for s in symbols}
    insts = []
    for tree, gold_ids in examples:
        bad = set(gold_ids) - known
        if bad:
            raise UnknownGoldSymbol(f"grounding ids not in symbol space: "
                                    f"{sorted(bad)}")
        gold = set(gold_ids)
        root = _build_block(tree)

        def walk(block):
            for sym in symbols:
                ctx = any(gold_block_truth(c, sym, gold)
                          for c in block.children)
                label = gold_block_truth(block, sym, gold)
                insts.append((features(block, sym, ctx), label))
            for c in block.children:
                walk(c)

        walk(root)
    return insts


def train(examples, symbols, config: TrainConfig | None = None
          ) -> LanguageModelWeights:
    """Fit factor weights by full-batch logistic regression.

    ``examples`` is a list of (parse tree, gold grounding ids).  The mean
    gradient makes the result invariant to corpus duplication; the step
    size backtracks so the regularized loss never increases.
    """
    import numpy as np

    cfg = config or TrainConfig()
    ex = list(examples)
    if not ex:
        raise EmptyCorpus("no training utterances")
    insts = _instances(ex, list(symbols))
    feat_ids = sorted({f for feats, _ in insts for f in feats})
    index = {f: i for i, f in enumerate(feat_ids)}
    flat = np.array([index[f] for feats, _ in insts for f in feats])
    lens = np.array([len(feats) for feats, _ in insts])
    offs = np.concatenate(([0], np.cumsum(lens)[:-1]))
    y = np.array([1.0 if label else 0.0 for _, label in insts])
    n = len(insts)
    w = np.zeros(len(feat_ids))

    def loss_of(wv):
        s = np.add.reduceat(wv[flat], offs)
        nll = np.logaddexp(0.0, -s) * y + np.logaddexp(0.0, s) * (1.0 - y)
        return nll.mean() + 0.5 * cfg.l2 * float(wv @ wv)

    loss = loss_of(w)
    for _ in range(cfg.epochs):
        s = np.add.reduceat(w[flat], offs)
        err = (1.0 / (1.0 + np.exp(-s)) - y) / n
        grad = cfg.l2 * w
        np.add.at(grad, flat, np.repeat(err, lens))
        step = cfg.lr
        for _ in range(40):
            cand = w - step * grad
            cand_loss = loss_of(cand)
            if cand_loss <= loss:
                break
            step *= 0.5
        else:
            break
        done = loss - cand_loss < cfg.tol
        w, loss = cand, cand_loss
        if done:
            break
    return LanguageModelWeights({f: float(w[i]) for f, i in index.items()
                                 if w[i] != 0.0})


def accuracy(examples, symbols, model: LanguageModelWeights) -> float:
    """Fraction of utterances whose inferred root set matches gold exactly."""
    ex = list(examples)
    if not ex:
        raise EmptyCorpus("no evaluation utterances")
    hits = 0
    for tree, gold_ids in ex:
        graph = build_graph(tree, symbols)
        if infer(graph, model) == sorted(gold_ids):
            hits += 1
    return hits / len(ex)


def train_test_split(records, test_frac=0.2, seed=0, hold_out=()):
    """Deterministic split; ``hold_out`` utterances always land in test."""
    import numpy as np

    forced = set(hold_out)
    free = [i for i, r in enumerate(records) if r["utterance"] not in forced]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(free))
    n_test = max(0, int(round(test_frac * len(records))) - (len(records)
                                                           - len(free)))
    test = {free[i] for i in order[:n_test]}
    test |= {i for i, r in enumerate(records) if r["utterance"] in forced}
    train_recs = [r for i, r in enumerate(records) if i not in test]
    test_recs = [r for i, r in enumerate(records) if i in test]
    return train_recs, test_recs
