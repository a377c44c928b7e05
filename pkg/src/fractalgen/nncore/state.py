"""Trainable parameters, momentum buffers and batch-norm running statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..arch import OP_CONV, OP_LINEAR, OP_NORM, ComputationGraph


def param_key(node_id: int, name: str) -> str:
    return f"{node_id}.{name}"


@dataclass
class ModelState:
    """Flat parameter store keyed ``"<node id>.<name>"``.

    ``velocity`` mirrors ``params`` one-to-one; ``buffers`` holds the running
    mean/variance of batch-norm nodes.  ``step`` counts optimizer updates and
    seeds dropout masks.
    """

    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    seed: int = 0
    step: int = 0
    epoch: int = 0
    model_id: str = ""

    def copy(self) -> ModelState:
        return ModelState(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.velocity.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.seed,
            self.step,
            self.epoch,
            self.model_id,
        )

    def num_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())


def init_state(graph: ComputationGraph, seed: int = 0, model_id: str = "") -> ModelState:
    """He-normal conv weights, 1/sqrt(fan_in) normal linear weights, zero biases.

    Each node draws from its own generator seeded by ``(seed, node id)`` so the
    initialization of one node never depends on the rest of the graph.
    """
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for node in graph.nodes:
        rng = np.random.default_rng([seed, node.id])
        if node.op == OP_CONV:
            w_shape = node.params["weight"]
            fan_in = w_shape[1] * w_shape[2] * w_shape[3]
            params[param_key(node.id, "weight")] = (
                rng.standard_normal(w_shape) * math.sqrt(2.0 / fan_in)
            ).astype(np.float32)
            params[param_key(node.id, "bias")] = np.zeros(node.params["bias"], np.float32)
        elif node.op == OP_NORM:
            c = node.attrs["channels"]
            params[param_key(node.id, "gamma")] = np.ones(c, np.float32)
            params[param_key(node.id, "beta")] = np.zeros(c, np.float32)
            buffers[param_key(node.id, "running_mean")] = np.zeros(c, np.float32)
            buffers[param_key(node.id, "running_var")] = np.ones(c, np.float32)
        elif node.op == OP_LINEAR:
            w_shape = node.params["weight"]
            params[param_key(node.id, "weight")] = (
                rng.standard_normal(w_shape) * math.sqrt(1.0 / w_shape[1])
            ).astype(np.float32)
            params[param_key(node.id, "bias")] = np.zeros(node.params["bias"], np.float32)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(params, velocity, buffers, seed=seed, model_id=model_id)
