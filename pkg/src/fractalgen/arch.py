"""Architecture IR: conv-unit and model specs, fractal expansion, shape-checked graphs.

A fractal block with ``C`` columns is produced by the recursion::

    f(1, z)   = unit(z)
    f(C+1, z) = join(f(C, f(C, z)), unit(z))

where ``join`` is an elementwise mean.  A model stacks ``depth_n`` blocks, each
followed by a 2x2 stride-2 max-pool, then a global average pool and a linear
classifier.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .errors import ShapeError

NORMS = ("batch_norm", "none")
ACTIVATIONS = ("relu", "leaky_relu", "gelu", "silu")
POST_OPS = ("norm", "activation", "dropout")
CHANNEL_GROWTH = ("double_per_block", "constant")

# Node op kinds understood by the engine.
OP_INPUT = "input"
OP_CONV = "conv"
OP_NORM = "batch_norm"
OP_ACT = "activation"
OP_DROPOUT = "dropout"
OP_JOIN = "join"
OP_POOL = "maxpool"
OP_GAP = "gap"
OP_LINEAR = "linear"


@dataclass(frozen=True)
class ConvUnitSpec:
    """Conv layer followed by the active subset of {norm, activation, dropout} in a fixed order."""

    kernel_size: int = 3
    norm: str = "batch_norm"
    activation: str = "relu"
    dropout_p: float = 0.0
    post_conv_order: tuple[str, ...] = ("norm", "activation")

    def __post_init__(self) -> None:
        object.__setattr__(self, "post_conv_order", tuple(self.post_conv_order))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        order = self.post_conv_order
        if len(set(order)) != len(order) or not set(order) <= set(POST_OPS):
            raise ValueError(f"post_conv_order must be a permutation of a subset of {POST_OPS}: {order}")

    @property
    def active_ops(self) -> frozenset[str]:
        ops = {"activation"}
        if self.norm != "none":
            ops.add("norm")
        if self.dropout_p > 0.0:
            ops.add("dropout")
        return frozenset(ops)

    @property
    def is_canonical(self) -> bool:
        return set(self.post_conv_order) == self.active_ops

    def to_dict(self) -> dict[str, Any]:
        return {
            "kernel_size": self.kernel_size,
            "norm": self.norm,
            "activation": self.activation,
            "dropout_p": self.dropout_p,
            "post_conv_order": list(self.post_conv_order),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ConvUnitSpec:
        return cls(
            kernel_size=int(d["kernel_size"]),
            norm=str(d["norm"]),
            activation=str(d["activation"]),
            dropout_p=float(d["dropout_p"]),
            post_conv_order=tuple(d["post_conv_order"]),
        )


def canonicalize(unit: ConvUnitSpec) -> ConvUnitSpec:
    """Drop inactive ops (``norm='none'``, ``dropout_p=0``) from the post-conv order.

    Activation is always active; if a raw order omits it, it is appended.
    """
    active = unit.active_ops
    order = [op for op in unit.post_conv_order if op in active]
    for op in POST_OPS:
        if op in active and op not in order:
            order.append(op)
    if tuple(order) == unit.post_conv_order:
        return unit
    return ConvUnitSpec(unit.kernel_size, unit.norm, unit.activation, unit.dropout_p, tuple(order))


@dataclass(frozen=True)
class ModelSpec:
    depth_n: int
    num_columns: int
    unit: ConvUnitSpec
    base_channels: int = 16
    channel_growth: str = "double_per_block"
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.depth_n < 1 or self.num_columns < 1:
            raise ValueError("depth_n and num_columns must be >= 1")
        if self.base_channels < 1 or self.num_classes < 1:
            raise ValueError("base_channels and num_classes must be positive")
        if self.channel_growth not in CHANNEL_GROWTH:
            raise ValueError(f"unknown channel_growth {self.channel_growth!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (channels, height, width), got {self.input_shape}")

    def block_channels(self) -> list[tuple[int, int]]:
        """(in_channels, out_channels) for each fractal block."""
        out = []
        cin = self.input_shape[0]
        for b in range(self.depth_n):
            cout = self.base_channels * (2**b if self.channel_growth == "double_per_block" else 1)
            out.append((cin, cout))
            cin = cout
        return out

    @property
    def model_id(self) -> str:
        payload = json.dumps(self.to_dict(include_id=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self, include_id: bool = True) -> dict[str, Any]:
        d: dict[str, Any] = {
            "depth_n": self.depth_n,
            "num_columns": self.num_columns,
            "unit": self.unit.to_dict(),
            "base_channels": self.base_channels,
            "channel_growth": self.channel_growth,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
        }
        if include_id:
            d["model_id"] = self.model_id
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelSpec:
        spec = cls(
            depth_n=int(d["depth_n"]),
            num_columns=int(d["num_columns"]),
            unit=ConvUnitSpec.from_dict(d["unit"]),
            base_channels=int(d["base_channels"]),
            channel_growth=str(d["channel_growth"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(d["input_shape"]),
        )
        if "model_id" in d and d["model_id"] != spec.model_id:
            raise ValueError(f"model_id mismatch: record says {d['model_id']}, fields give {spec.model_id}")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ModelSpec:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LayerNode:
    id: int
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    """Per-sample output shape (batch axis excluded)."""
    attrs: dict[str, Any] = field(default_factory=dict)
    params: dict[str, tuple[int, ...]] = field(default_factory=dict)
    block: int | None = None

    @property
    def num_params(self) -> int:
        total = 0
        for shape in self.params.values():
            n = 1
            for s in shape:
                n *= s
            total += n
        return total


@dataclass(frozen=True)
class ComputationGraph:
    nodes: tuple[LayerNode, ...]
    output_node: int

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, i: int) -> LayerNode:
        return self.nodes[i]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.nodes[0].shape

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.nodes[self.output_node].shape

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    @property
    def param_count(self) -> int:
        return sum(n.num_params for n in self.nodes)

    def consumers(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for n in self.nodes:
            for i in n.inputs:
                out[i].append(n.id)
        return out

    def blocks(self) -> dict[int, list[int]]:
        """Node ids grouped by fractal block index, in topological order."""
        out: dict[int, list[int]] = {}
        for n in self.nodes:
            if n.block is not None:
                out.setdefault(n.block, []).append(n.id)
        return out

    def conv_path_lengths(self) -> tuple[int, int]:
        """(shortest, longest) number of conv nodes on any input -> output path."""
        lo: list[int] = [0] * len(self.nodes)
        hi: list[int] = [0] * len(self.nodes)
        for n in self.nodes:
            inc = 1 if n.op == OP_CONV else 0
            if n.inputs:
                lo[n.id] = min(lo[i] for i in n.inputs) + inc
                hi[n.id] = max(hi[i] for i in n.inputs) + inc
            else:
                lo[n.id] = hi[n.id] = inc
        return lo[self.output_node], hi[self.output_node]

    def check(self) -> None:
        """Re-verify the structural invariants; raise ShapeError on violation."""
        for pos, n in enumerate(self.nodes):
            if n.id != pos:
                raise ShapeError(f"node at position {pos} has id {n.id}")
            if any(i >= n.id for i in n.inputs):
                raise ShapeError(f"node {n.id} consumes a later node")
            shapes = [self.nodes[i].shape for i in n.inputs]
            if infer_shape(n.op, n.attrs, shapes) != n.shape:
                raise ShapeError(f"node {n.id} stores an inconsistent shape")

    def describe(self) -> str:
        lines = []
        for n in self.nodes:
            extra = " ".join(f"{k}={v}" for k, v in sorted(n.attrs.items()))
            blk = "-" if n.block is None else str(n.block)
            lines.append(f"{n.id:4d} [{blk}] {n.op:<11s} in={list(n.inputs)} out={n.shape} {extra}".rstrip())
        return "\n".join(lines)


def infer_shape(op: str, attrs: dict[str, Any], in_shapes: Sequence[tuple[int, ...]]) -> tuple[int, ...]:
    """Per-sample output shape of a node, or ShapeError."""
    if op == OP_INPUT:
        return tuple(attrs["shape"])
    if not in_shapes:
        raise ShapeError(f"{op} node needs at least one input")
    x = in_shapes[0]
    if op == OP_JOIN:
        if len(in_shapes) < 2:
            raise ShapeError("join needs >= 2 inputs")
        if any(s != x for s in in_shapes):
            raise ShapeError(f"join inputs disagree: {list(in_shapes)}")
        return x
    if len(in_shapes) != 1:
        raise ShapeError(f"{op} takes exactly one input")
    if op == OP_CONV:
        if len(x) != 3 or x[0] != attrs["in_channels"]:
            raise ShapeError(f"conv expects ({attrs['in_channels']}, H, W), got {x}")
        return (attrs["out_channels"], x[1], x[2])
    if op in (OP_NORM, OP_ACT, OP_DROPOUT):
        if op == OP_NORM and (len(x) != 3 or x[0] != attrs["channels"]):
            raise ShapeError(f"batch_norm expects {attrs['channels']} channels, got {x}")
        return x
    if op == OP_POOL:
        if len(x) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {x}")
        h, w = x[1] // 2, x[2] // 2
        if h < 1 or w < 1:
            raise ShapeError(f"2x2 max-pool would reduce {x[1]}x{x[2]} below 1x1")
        return (x[0], h, w)
    if op == OP_GAP:
        if len(x) != 3:
            raise ShapeError(f"global average pool expects (C, H, W), got {x}")
        return (x[0],)
    if op == OP_LINEAR:
        if x != (attrs["in_features"],):
            raise ShapeError(f"linear expects ({attrs['in_features']},), got {x}")
        return (attrs["out_features"],)
    raise ShapeError(f"unknown op {op!r}")


class GraphBuilder:
    """Append-only node list with shape inference on every insertion."""

    def __init__(self) -> None:
        self.nodes: list[LayerNode] = []

    def add(
        self,
        op: str,
        inputs: Iterable[int] = (),
        attrs: dict[str, Any] | None = None,
        params: dict[str, tuple[int, ...]] | None = None,
        block: int | None = None,
    ) -> int:
        inputs = tuple(inputs)
        attrs = attrs or {}
        shape = infer_shape(op, attrs, [self.nodes[i].shape for i in inputs])
        nid = len(self.nodes)
        self.nodes.append(LayerNode(nid, op, inputs, shape, attrs, params or {}, block))
        return nid

    def build(self, output: int | None = None) -> ComputationGraph:
        return ComputationGraph(tuple(self.nodes), len(self.nodes) - 1 if output is None else output)


def _emit_unit(g: GraphBuilder, src: int, unit: ConvUnitSpec, cin: int, cout: int, block: int | None) -> int:
    k = unit.kernel_size
    x = g.add(
        OP_CONV,
        [src],
        {"in_channels": cin, "out_channels": cout, "kernel_size": k},
        {"weight": (cout, cin, k, k), "bias": (cout,)},
        block,
    )
    for op in canonicalize(unit).post_conv_order:
        if op == "norm":
            x = g.add(OP_NORM, [x], {"channels": cout}, {"gamma": (cout,), "beta": (cout,)}, block)
        elif op == "activation":
            x = g.add(OP_ACT, [x], {"kind": unit.activation}, block=block)
        else:
            x = g.add(OP_DROPOUT, [x], {"p": unit.dropout_p}, block=block)
    return x


def _emit_fractal(
    g: GraphBuilder, src: int, columns: int, unit: ConvUnitSpec, cin: int, cout: int, block: int | None
) -> int:
    if columns == 1:
        return _emit_unit(g, src, unit, cin, cout, block)
    deep = _emit_fractal(g, src, columns - 1, unit, cin, cout, block)
    deep = _emit_fractal(g, deep, columns - 1, unit, cout, cout, block)
    shallow = _emit_unit(g, src, unit, cin, cout, block)
    return g.add(OP_JOIN, [deep, shallow], block=block)


def expand_fractal(
    columns: int,
    unit: ConvUnitSpec,
    in_channels: int,
    out_channels: int,
    spatial: tuple[int, int] = (8, 8),
) -> ComputationGraph:
    """Expand one fractal block as a standalone fragment.

    Node 0 is the input port of shape ``(in_channels, *spatial)``; the last node
    is the output port.  All fragment nodes carry ``block=0``.
    """
    if columns < 1:
        raise ValueError("columns must be >= 1")
    if in_channels < 1 or out_channels < 1:
        raise ValueError("channel counts must be positive")
    g = GraphBuilder()
    src = g.add(OP_INPUT, attrs={"shape": (in_channels, *spatial)})
    out = _emit_fractal(g, src, columns, unit, in_channels, out_channels, 0)
    return g.build(out)


def build_model(spec: ModelSpec) -> ComputationGraph:
    """Expand a ModelSpec into a shape-checked graph; ShapeError if pooling underflows."""
    g = GraphBuilder()
    x = g.add(OP_INPUT, attrs={"shape": spec.input_shape})
    for b, (cin, cout) in enumerate(spec.block_channels()):
        x = _emit_fractal(g, x, spec.num_columns, spec.unit, cin, cout, b)
        x = g.add(OP_POOL, [x])
    x = g.add(OP_GAP, [x])
    feat = g.nodes[x].shape[0]
    x = g.add(
        OP_LINEAR,
        [x],
        {"in_features": feat, "out_features": spec.num_classes},
        {"weight": (spec.num_classes, feat), "bias": (spec.num_classes,)},
    )
    return g.build(x)


def param_count(spec: ModelSpec) -> int:
    """Trainable scalar count from the closed form; raises ShapeError like build_model."""
    build_model(spec)
    k2 = spec.unit.kernel_size**2
    units = 2**spec.num_columns - 1
    entry_units = spec.num_columns  # units reading the block input
    total = 0
    for cin, cout in spec.block_channels():
        total += entry_units * (k2 * cin * cout + cout)
        total += (units - entry_units) * (k2 * cout * cout + cout)
        if spec.unit.norm == "batch_norm":
            total += units * 2 * cout
    feat = spec.block_channels()[-1][1]
    total += feat * spec.num_classes + spec.num_classes
    return total
