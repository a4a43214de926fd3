from .decoding import brute_force_decode, constrained_viterbi, loss_augmented_max, viterbi
from .factor_graph import FactorGraph, FactorGraphModel, SharedChainModel

__all__ = [
    "FactorGraph",
    "FactorGraphModel",
    "SharedChainModel",
    "brute_force_decode",
    "constrained_viterbi",
    "loss_augmented_max",
    "viterbi",
]
