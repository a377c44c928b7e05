"""Graph executor with optional per-block activation checkpointing.

With checkpointing off, every node output is retained until the backward pass
has consumed it.  With checkpointing on, the outputs strictly inside a fractal
block are dropped during the forward pass; only the tensor entering each block
and the block's output survive.  When backprop reaches a block's output node,
the block interior is recomputed from the retained entry tensor with the same
dropout seeds and without touching batch-norm running statistics, so both
settings produce bit-identical gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ..arch import (
    OP_ACT,
    OP_CONV,
    OP_DROPOUT,
    OP_GAP,
    OP_INPUT,
    OP_JOIN,
    OP_LINEAR,
    OP_NORM,
    OP_POOL,
    ComputationGraph,
    LayerNode,
)
from ..errors import ShapeError
from . import ops
from .state import ModelState, param_key

Mode = Literal["train", "eval"]


@dataclass
class MemoryLedger:
    """Running count of retained activation scalars and its high-water mark."""

    current: int = 0
    peak: int = 0

    def hold(self, n: int) -> None:
        self.current += n
        if self.current > self.peak:
            self.peak = self.current

    def release(self, n: int) -> None:
        self.current -= n
        if self.current < 0:
            raise RuntimeError("memory ledger released more than it held")


@dataclass
class Tape:
    graph: ComputationGraph
    state: ModelState
    train: bool
    checkpointing: bool
    ledger: MemoryLedger
    step: int
    saved: dict[int, np.ndarray] = field(default_factory=dict)
    interior: dict[int, list[int]] = field(default_factory=dict)
    """Block output node id -> interior node ids recomputed under checkpointing."""


def dropout_rng(seed: int, node_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, node_id, step])


def block_interiors(graph: ComputationGraph) -> dict[int, list[int]]:
    """Map each fractal block's output node to the nodes strictly inside it."""
    out = {}
    for ids in graph.blocks().values():
        out[ids[-1]] = ids[:-1]
    return out


def _forward_node(
    node: LayerNode, ins: list[np.ndarray], state: ModelState, train: bool, step: int, update_stats: bool
) -> np.ndarray:
    p = state.params
    k = node.id
    if node.op == OP_CONV:
        return ops.conv2d_forward(ins[0], p[param_key(k, "weight")], p[param_key(k, "bias")])
    if node.op == OP_NORM:
        return ops.batchnorm_forward(
            ins[0],
            p[param_key(k, "gamma")],
            p[param_key(k, "beta")],
            state.buffers[param_key(k, "running_mean")],
            state.buffers[param_key(k, "running_var")],
            train,
            update_stats,
        )
    if node.op == OP_ACT:
        return ops.activation_forward(node.attrs["kind"], ins[0])
    if node.op == OP_DROPOUT:
        prob = node.attrs["p"]
        rng = dropout_rng(state.seed, k, step) if train and prob > 0 else None
        return ops.dropout_forward(ins[0], prob, rng, train)
    if node.op == OP_JOIN:
        return ops.mean_join_forward(ins)
    if node.op == OP_POOL:
        return ops.maxpool2x2_forward(ins[0])
    if node.op == OP_GAP:
        return ops.global_avg_pool_forward(ins[0])
    if node.op == OP_LINEAR:
        return ops.linear_forward(ins[0], p[param_key(k, "weight")], p[param_key(k, "bias")])
    raise ShapeError(f"cannot execute op {node.op!r}")


def _backward_node(
    node: LayerNode, grad: np.ndarray, ins: list[np.ndarray], state: ModelState, train: bool, step: int
) -> tuple[list[np.ndarray], dict[str, np.ndarray]]:
    p = state.params
    k = node.id
    if node.op == OP_CONV:
        gx, gw, gb = ops.conv2d_backward(grad, ins[0], p[param_key(k, "weight")])
        return [gx], {param_key(k, "weight"): gw, param_key(k, "bias"): gb}
    if node.op == OP_NORM:
        gx, gg, gb = ops.batchnorm_backward(
            grad,
            ins[0],
            p[param_key(k, "gamma")],
            state.buffers[param_key(k, "running_mean")],
            state.buffers[param_key(k, "running_var")],
            train,
        )
        return [gx], {param_key(k, "gamma"): gg, param_key(k, "beta"): gb}
    if node.op == OP_ACT:
        return [ops.activation_backward(node.attrs["kind"], grad, ins[0])], {}
    if node.op == OP_DROPOUT:
        prob = node.attrs["p"]
        rng = dropout_rng(state.seed, k, step) if train and prob > 0 else None
        return [ops.dropout_backward(grad, prob, rng, train)], {}
    if node.op == OP_JOIN:
        return ops.mean_join_backward(grad, len(ins)), {}
    if node.op == OP_POOL:
        return [ops.maxpool2x2_backward(grad, ins[0])], {}
    if node.op == OP_GAP:
        return [ops.global_avg_pool_backward(grad, ins[0])], {}
    if node.op == OP_LINEAR:
        gx, gw, gb = ops.linear_backward(grad, ins[0], p[param_key(k, "weight")])
        return [gx], {param_key(k, "weight"): gw, param_key(k, "bias"): gb}
    raise ShapeError(f"cannot differentiate op {node.op!r}")


def run_graph(
    graph: ComputationGraph,
    x: np.ndarray,
    state: ModelState,
    mode: Mode = "train",
    checkpointing: bool = False,
    ledger: MemoryLedger | None = None,
) -> tuple[np.ndarray, Tape]:
    """Forward pass.  In train mode the returned tape feeds :func:`backprop`."""
    if x.shape[1:] != graph.input_shape:
        raise ShapeError(f"graph expects samples of shape {graph.input_shape}, got {x.shape[1:]}")
    train = mode == "train"
    ledger = ledger if ledger is not None else MemoryLedger()
    tape = Tape(graph, state, train, checkpointing, ledger, state.step)
    if checkpointing:
        tape.interior = block_interiors(graph)
    dropped = {i for ids in tape.interior.values() for i in ids}
    remaining = [len(c) for c in graph.consumers()]
    live = tape.saved
    for node in graph.nodes:
        if node.op == OP_INPUT:
            out = x
        else:
            out = _forward_node(node, [live[i] for i in node.inputs], state, train, tape.step, True)
        live[node.id] = out
        ledger.hold(out.size)
        for i in node.inputs:
            remaining[i] -= 1
            if remaining[i] == 0 and (not train or i in dropped):
                ledger.release(live.pop(i).size)
    output = live[graph.output_node]
    if not train:
        for t in live.values():
            ledger.release(t.size)
        live.clear()
    return output, tape


def backprop(tape: Tape, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass over a train-mode tape; returns parameter gradients by key.

    The tape's retained activations are released as they are consumed, so a
    tape can be backpropagated once.
    """
    if not tape.train:
        raise RuntimeError("backprop needs a tape recorded in train mode")
    graph, state, ledger, saved = tape.graph, tape.state, tape.ledger, tape.saved
    grads: dict[int, np.ndarray] = {graph.output_node: upstream}
    pgrads: dict[str, np.ndarray] = {}
    for node in reversed(graph.nodes):
        for j in tape.interior.get(node.id, ()):
            inner = graph.nodes[j]
            out = _forward_node(inner, [saved[i] for i in inner.inputs], state, True, tape.step, False)
            saved[j] = out
            ledger.hold(out.size)
        g = grads.pop(node.id, None)
        if g is not None and node.op != OP_INPUT:
            gins, pg = _backward_node(node, g, [saved[i] for i in node.inputs], state, True, tape.step)
            pgrads.update(pg)
            for i, gi in zip(node.inputs, gins):
                grads[i] = gi if i not in grads else grads[i] + gi
        ledger.release(saved.pop(node.id).size)
    return pgrads


def forward_backward(
    graph: ComputationGraph,
    x: np.ndarray,
    labels: np.ndarray,
    state: ModelState,
    checkpointing: bool = False,
    ledger: MemoryLedger | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """One training-mode pass: (loss, parameter gradients, logits)."""
    logits, tape = run_graph(graph, x, state, "train", checkpointing, ledger)
    loss, grad = ops.softmax_cross_entropy(logits, labels)
    return loss, backprop(tape, grad), logits
