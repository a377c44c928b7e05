import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalgen.arch import (
    ACTIVATIONS,
    OP_CONV,
    OP_GAP,
    OP_INPUT,
    OP_JOIN,
    OP_LINEAR,
    OP_POOL,
    POST_OPS,
    ConvUnitSpec,
    ModelSpec,
    build_model,
    canonicalize,
    expand_fractal,
    param_count,
)
from fractalgen.errors import ShapeError

from helpers import all_conv_paths, param_sum

units = st.builds(
    ConvUnitSpec,
    kernel_size=st.sampled_from([1, 3, 5]),
    norm=st.sampled_from(["batch_norm", "none"]),
    activation=st.sampled_from(ACTIVATIONS),
    dropout_p=st.sampled_from([0.0, 0.2, 0.4]),
    post_conv_order=st.sampled_from(
        [p for r in range(0, 4) for p in itertools.permutations(POST_OPS, r)]
    ),
)


def test_single_column_is_one_unit():
    g = expand_fractal(1, ConvUnitSpec(), 3, 8)
    assert g.count(OP_CONV) == 1
    assert g.count(OP_JOIN) == 0


def test_three_columns():
    g = expand_fractal(3, ConvUnitSpec(), 3, 8)
    assert (g.count(OP_CONV), g.count(OP_JOIN)) == (7, 3)
    assert max(all_conv_paths(g)) == 4


def test_two_columns_unrolled():
    g = expand_fractal(2, ConvUnitSpec(norm="none", post_conv_order=("activation",)), 3, 8)
    join = g.nodes[g.output_node]
    assert join.op == OP_JOIN and len(join.inputs) == 2
    assert sorted(all_conv_paths(g)) == [1, 2]
    convs = [n for n in g.nodes if n.op == OP_CONV]
    # deep branch: 3->8 then 8->8; shallow: 3->8
    assert [(n.attrs["in_channels"], n.attrs["out_channels"]) for n in convs] == [(3, 8), (8, 8), (3, 8)]


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 5), cin=st.integers(1, 6), cout=st.integers(1, 6))
def test_first_unit_on_every_path_maps_in_to_out(c, cin, cout):
    g = expand_fractal(c, ConvUnitSpec(), cin, cout)
    for n in g.nodes:
        if n.op != OP_CONV:
            continue
        # a conv is "first" iff no conv precedes it on its input chain
        j = n.inputs[0]
        while g.nodes[j].op not in (OP_CONV, OP_INPUT, OP_JOIN):
            j = g.nodes[j].inputs[0]
        expect_in = cin if g.nodes[j].op == OP_INPUT else cout
        assert n.attrs["in_channels"] == expect_in
        assert n.attrs["out_channels"] == cout
    assert g.output_shape == (cout, 8, 8)
    g.check()


def test_smallest_model_layout():
    unit = ConvUnitSpec(norm="none", post_conv_order=("activation",))
    g = build_model(ModelSpec(1, 1, unit, base_channels=8))
    assert [n.op for n in g.nodes] == [OP_INPUT, OP_CONV, "activation", OP_POOL, OP_GAP, OP_LINEAR]
    assert g.output_shape == (10,)
    assert g.nodes[-1].params["weight"] == (10, 8)


def test_pool_underflow_raises():
    with pytest.raises(ShapeError):
        build_model(ModelSpec(6, 1, ConvUnitSpec(), input_shape=(3, 8, 8)))
    with pytest.raises(ShapeError):
        param_count(ModelSpec(6, 1, ConvUnitSpec(), input_shape=(3, 8, 8)))


def test_two_block_channels():
    g = build_model(ModelSpec(2, 2, ConvUnitSpec(), base_channels=16))
    convs = [(n.block, n.attrs["in_channels"], n.attrs["out_channels"]) for n in g.nodes if n.op == OP_CONV]
    assert len(convs) == 6
    assert [c for c in convs if c[0] == 0] == [(0, 3, 16), (0, 16, 16), (0, 3, 16)]
    assert [c for c in convs if c[0] == 1] == [(1, 16, 32), (1, 32, 32), (1, 16, 32)]


def test_param_count_examples():
    plain = ModelSpec(1, 1, ConvUnitSpec(norm="none", post_conv_order=("activation",)), base_channels=8)
    assert param_count(plain) == 314
    assert build_model(plain).param_count == 314
    bn = ModelSpec(1, 1, ConvUnitSpec(), base_channels=8)
    assert param_count(bn) == 314 + 16


@settings(max_examples=40, deadline=None)
@given(unit=units, depth=st.integers(1, 3), cols=st.integers(1, 4), base=st.integers(1, 8))
def test_param_count_closed_form_matches_graph(unit, depth, cols, base):
    spec = ModelSpec(depth, cols, canonicalize(unit), base_channels=base, input_shape=(3, 16, 16))
    g = build_model(spec)
    assert param_count(spec) == param_sum(g) == g.param_count


def test_canonicalize_examples():
    u = ConvUnitSpec(norm="none", dropout_p=0.2, post_conv_order=("norm", "activation", "dropout"))
    assert canonicalize(u).post_conv_order == ("activation", "dropout")
    v = ConvUnitSpec(norm="none", post_conv_order=("activation",))
    assert canonicalize(v) is v


@given(unit=units)
def test_canonicalize_idempotent(unit):
    c = canonicalize(unit)
    assert c.is_canonical
    assert canonicalize(c) == c
    # active ops keep their relative order
    kept = [op for op in unit.post_conv_order if op in unit.active_ops]
    assert list(c.post_conv_order[: len(kept)]) == kept


def test_inactive_positions_collapse():
    seen = {}
    for order in itertools.permutations(POST_OPS):
        u = canonicalize(ConvUnitSpec(norm="none", dropout_p=0.0, post_conv_order=order))
        seen[u] = order
    assert len(seen) == 1


@given(unit=units, depth=st.integers(1, 4), cols=st.integers(1, 4))
def test_spec_json_roundtrip(unit, depth, cols):
    spec = ModelSpec(depth, cols, unit)
    back = ModelSpec.from_json(spec.to_json())
    assert back == spec
    assert back.model_id == spec.model_id


def test_model_id_rejects_tampering():
    d = ModelSpec(1, 1, ConvUnitSpec()).to_dict()
    d["model_id"] = "0" * 16
    with pytest.raises(ValueError):
        ModelSpec.from_dict(d)


def test_invalid_unit():
    with pytest.raises(ValueError):
        ConvUnitSpec(kernel_size=2)
    with pytest.raises(ValueError):
        ConvUnitSpec(activation="tanh")
    with pytest.raises(ValueError):
        ConvUnitSpec(post_conv_order=("norm", "norm"))
    with pytest.raises(ValueError):
        ModelSpec(0, 1, ConvUnitSpec())


def test_blocks_group_fractal_nodes():
    g = build_model(ModelSpec(2, 3, ConvUnitSpec(), base_channels=4, input_shape=(3, 8, 8)))
    blocks = g.blocks()
    assert sorted(blocks) == [0, 1]
    for ids in blocks.values():
        assert g.nodes[ids[-1]].op == OP_JOIN
    assert "conv" in g.describe()
