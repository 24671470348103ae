"""Natural-language command grounding for the operator console."""

from .commands import ACTION_EVENTS, AmbiguousAction, Command, \
    command_from_grounding
from .corpus import bundled_corpus, make_corpus
from .dcg import Block, DcgGraph, EmptyCorpus, EmptySymbolSpace, \
    GroundingSymbol, LanguageModelWeights, TrainConfig, UnknownGoldSymbol, \
    accuracy, brute_force_infer, build_graph, default_symbols, factor_logp, \
    features, gold_block_truth, infer, max_logp, train, train_test_split
from .parsing import ChunkError, Node, chunk, load_corpus, save_corpus, \
    tokenize, tree_from_json, tree_to_json

__all__ = [
    "ACTION_EVENTS", "AmbiguousAction", "Block", "ChunkError", "Command",
    "DcgGraph", "EmptyCorpus", "EmptySymbolSpace", "GroundingSymbol",
    "LanguageModelWeights", "Node", "TrainConfig", "UnknownGoldSymbol",
    "accuracy", "brute_force_infer", "build_graph", "bundled_corpus",
    "chunk", "command_from_grounding", "default_symbols", "factor_logp",
    "features", "gold_block_truth", "infer", "load_corpus", "make_corpus",
    "max_logp", "save_corpus", "tokenize", "train", "train_test_split",
    "tree_from_json", "tree_to_json",
]
