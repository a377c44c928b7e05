"""Deterministic enumeration of the fractal variant grid."""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .arch import POST_OPS, ConvUnitSpec, ModelSpec, build_model, canonicalize
from .errors import ShapeError

NAME_PREFIX = "img-classification_cifar-10_acc_FractalNet-"

_NORM_CODE = {"batch_norm": "bn", "none": "nonorm"}
_OP_CODE = {"norm": "norm", "activation": "act", "dropout": "drop"}


@dataclass(frozen=True)
class SearchSpace:
    """Choice sets per axis plus the fixed model fields.

    Axis order (depth, columns, activation, norm, dropout, order) is also the
    lexicographic order of enumeration; within an axis the listed order counts.
    """

    depth_n_choices: tuple[int, ...] = (1, 2, 3, 4)
    num_columns_choices: tuple[int, ...] = (1, 2, 3, 4)
    activation_choices: tuple[str, ...] = ("relu", "leaky_relu", "gelu", "silu")
    norm_choices: tuple[str, ...] = ("batch_norm", "none")
    dropout_choices: tuple[float, ...] = (0.0, 0.2, 0.4)
    order_choices: tuple[tuple[str, ...], ...] = tuple(itertools.permutations(POST_OPS))
    kernel_size: int = 3
    base_channels: int = 16
    channel_growth: str = "double_per_block"
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10

    def __post_init__(self) -> None:
        for name in (
            "depth_n_choices",
            "num_columns_choices",
            "activation_choices",
            "norm_choices",
            "dropout_choices",
            "order_choices",
        ):
            value = getattr(self, name)
            if name == "order_choices":
                value = tuple(tuple(o) for o in value)
            else:
                value = tuple(value)
            if not value:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    @property
    def raw_size(self) -> int:
        n = 1
        for axis in self._axes():
            n *= len(axis)
        return n

    def _axes(self) -> list[tuple[Any, ...]]:
        return [
            self.depth_n_choices,
            self.num_columns_choices,
            self.activation_choices,
            self.norm_choices,
            self.dropout_choices,
            self.order_choices,
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "depth_n_choices": list(self.depth_n_choices),
            "num_columns_choices": list(self.num_columns_choices),
            "activation_choices": list(self.activation_choices),
            "norm_choices": list(self.norm_choices),
            "dropout_choices": list(self.dropout_choices),
            "order_choices": [list(o) for o in self.order_choices],
            "kernel_size": self.kernel_size,
            "base_channels": self.base_channels,
            "channel_growth": self.channel_growth,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SearchSpace:
        """Missing keys fall back to the default grid."""
        known = cls().to_dict().keys()
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown search-space keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items()})


@dataclass(frozen=True)
class ManifestEntry:
    spec: ModelSpec
    name: str
    feasible: bool
    reason: str = ""
    train_overrides: dict[str, Any] = field(default_factory=dict)
    """TrainConfig fields replaced for this entry only (e.g. a divergence fixture)."""

    @property
    def model_id(self) -> str:
        return self.spec.model_id

    def to_dict(self) -> dict[str, Any]:
        d = {
            "model_id": self.model_id,
            "name": self.name,
            "feasible": self.feasible,
            "reason": self.reason,
            "spec": self.spec.to_dict(),
        }
        if self.train_overrides:
            d["train_overrides"] = dict(self.train_overrides)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ManifestEntry:
        spec = ModelSpec.from_dict(d["spec"])
        if d.get("model_id", spec.model_id) != spec.model_id:
            raise ValueError(f"manifest model_id {d['model_id']} does not match its spec")
        return cls(
            spec,
            d.get("name") or model_name(spec),
            bool(d.get("feasible", True)),
            d.get("reason", ""),
            dict(d.get("train_overrides", {})),
        )


def model_name(spec: ModelSpec) -> str:
    """Prefixed result name.  Unique over any grid that varies only the searched axes."""
    u = spec.unit
    order = ".".join(_OP_CODE[op] for op in canonicalize(u).post_conv_order)
    suffix = (
        f"N{spec.depth_n}-C{spec.num_columns}-k{u.kernel_size}-b{spec.base_channels}"
        f"-{u.activation}-{_NORM_CODE[u.norm]}-p{u.dropout_p:g}-{order}"
    )
    return NAME_PREFIX + suffix


def check_feasible(spec: ModelSpec) -> tuple[bool, str]:
    try:
        build_model(spec)
    except ShapeError as exc:
        return False, f"ShapeError: {exc}"
    return True, ""


def enumerate_specs(space: SearchSpace | None = None) -> list[ManifestEntry]:
    """Cartesian product of the axes, canonicalized and deduplicated.

    The first occurrence of each canonical spec wins, so the output order is
    lexicographic over choice indices.  Infeasible specs are kept and flagged.
    """
    space = space or SearchSpace()
    seen: set[str] = set()
    out: list[ManifestEntry] = []
    feasible_cache: dict[tuple[int, int], tuple[bool, str]] = {}
    for depth, cols, act, norm, p, order in itertools.product(*space._axes()):
        unit = canonicalize(ConvUnitSpec(space.kernel_size, norm, act, float(p), order))
        spec = ModelSpec(
            depth,
            cols,
            unit,
            space.base_channels,
            space.channel_growth,
            space.num_classes,
            space.input_shape,
        )
        mid = spec.model_id
        if mid in seen:
            continue
        seen.add(mid)
        # feasibility only depends on pooling depth and width
        key = (depth, cols)
        if key not in feasible_cache:
            feasible_cache[key] = check_feasible(spec)
        ok, reason = feasible_cache[key]
        out.append(ManifestEntry(spec, model_name(spec), ok, reason))
    return out


def write_manifest(path: str | os.PathLike, entries: Iterable[ManifestEntry]) -> Path:
    """One JSON record per line, written atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ManifestEntry.from_dict(json.loads(line)))
    return out


def load_space(path: str | os.PathLike) -> SearchSpace:
    return SearchSpace.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
