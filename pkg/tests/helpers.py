"""Shared oracles for the test-suite."""

from __future__ import annotations

from typing import Callable

import numpy as np

from fractalgen.arch import OP_CONV, OP_INPUT, OP_JOIN, ComputationGraph

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def record_skip(criterion: int, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[SKIP] criterion {criterion}: {detail}")


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, np.float64)
    n = np.asarray(numeric, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def all_conv_paths(graph: ComputationGraph) -> list[int]:
    """Conv count of every input->output path, by exhaustive DFS."""
    preds = {n.id: n.inputs for n in graph.nodes}
    out: list[int] = []

    def walk(node_id: int, convs: int) -> None:
        node = graph.nodes[node_id]
        convs += node.op == OP_CONV
        if node.op == OP_INPUT:
            out.append(convs)
            return
        for p in preds[node_id]:
            walk(p, convs)

    walk(graph.output_node, 0)
    return out


def brute_counts(graph: ComputationGraph) -> tuple[int, int]:
    return (
        sum(1 for n in graph.nodes if n.op == OP_CONV),
        sum(1 for n in graph.nodes if n.op == OP_JOIN),
    )


def param_sum(graph: ComputationGraph) -> int:
    total = 0
    for n in graph.nodes:
        for shape in n.params.values():
            total += int(np.prod(shape))
    return total
