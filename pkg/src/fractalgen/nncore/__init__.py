"""Minimal numpy tensor engine for the fractal layer vocabulary."""

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import MemoryLedger, Tape, backprop, forward_backward, run_graph
from .ops import softmax_cross_entropy
from .optim import sgd_step
from .state import ModelState, init_state, param_key

__all__ = [
    "MemoryLedger",
    "ModelState",
    "Tape",
    "backprop",
    "forward_backward",
    "init_state",
    "load_checkpoint",
    "param_key",
    "run_graph",
    "save_checkpoint",
    "sgd_step",
    "softmax_cross_entropy",
]
