import itertools

import pytest

from fractalgen.arch import POST_OPS, ConvUnitSpec, ModelSpec, canonicalize
from fractalgen.generator import (
    NAME_PREFIX,
    ManifestEntry,
    SearchSpace,
    enumerate_specs,
    load_space,
    model_name,
    read_manifest,
    write_manifest,
)


def _oracle_unique(space):
    """Independent dedupe: canonical (norm, act, p, order) tuples computed by hand."""
    keys = set()
    for d, c, act, norm, p, order in itertools.product(*space._axes()):
        active = {"activation"} | ({"norm"} if norm != "none" else set()) | ({"dropout"} if p > 0 else set())
        kept = [op for op in order if op in active]
        kept += [op for op in POST_OPS if op in active and op not in kept]
        keys.add((d, c, act, norm, p, tuple(kept)))
    return len(keys)


def test_default_count_matches_oracle():
    space = SearchSpace()
    entries = enumerate_specs(space)
    assert len(entries) == _oracle_unique(space) == 1216
    assert space.raw_size == 4 * 4 * 4 * 2 * 3 * 6


def test_singleton_space():
    space = SearchSpace((1,), (2,), ("relu",), ("none",), (0.0,), (("activation",),))
    assert len(enumerate_specs(space)) == 1


def test_orders_collapse_without_norm_and_dropout():
    space = SearchSpace((1,), (2,), ("relu",), ("none",), (0.0,))
    assert len(enumerate_specs(space)) == 1


def test_infeasible_flagged_not_dropped():
    space = SearchSpace((1, 6), (1,), ("relu",), ("none",), (0.0,), input_shape=(3, 8, 8))
    entries = enumerate_specs(space)
    assert [e.feasible for e in entries] == [True, False]
    assert "ShapeError" in entries[1].reason


def test_names():
    entries = enumerate_specs()
    names = [e.name for e in entries]
    assert all(n.startswith(NAME_PREFIX) for n in names)
    assert len(set(names)) == len(names)
    spec = entries[0].spec
    assert model_name(spec) == model_name(ModelSpec.from_dict(spec.to_dict()))


def test_every_spec_is_canonical():
    for e in enumerate_specs():
        assert e.spec.unit.is_canonical
        assert canonicalize(e.spec.unit) == e.spec.unit


def test_manifest_roundtrip(tmp_path):
    entries = enumerate_specs(SearchSpace((1, 2), (1, 2), ("relu", "gelu")))
    entries.append(ManifestEntry(entries[0].spec, "custom", True, "", {"lr": 0.5}))
    path = write_manifest(tmp_path / "m.jsonl", entries)
    back = read_manifest(path)
    assert back == entries
    assert path.read_bytes() == write_manifest(tmp_path / "m2.jsonl", back).read_bytes()


def test_space_file(tmp_path):
    p = tmp_path / "space.json"
    p.write_text('{"depth_n_choices": [1], "num_columns_choices": [3]}')
    space = load_space(p)
    assert space.depth_n_choices == (1,) and space.activation_choices == SearchSpace().activation_choices
    p.write_text('{"depth": [1]}')
    with pytest.raises(ValueError):
        load_space(p)


def test_manifest_id_mismatch():
    d = ManifestEntry(ModelSpec(1, 1, ConvUnitSpec()), "x", True).to_dict()
    d["model_id"] = "deadbeefdeadbeef"
    d["spec"].pop("model_id", None)
    with pytest.raises(ValueError):
        ManifestEntry.from_dict(d)
