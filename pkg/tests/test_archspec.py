import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepframe.archspec import (
    ArchSpec,
    Edge,
    SpecError,
    expand_family,
    from_widths,
    param_count,
    parse_spec,
    serialize_spec,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
)

from helpers import conv_specs, random_custom_spec, random_family_spec


def edge_set(spec):
    return {(e.src, e.dst, e.kind) for e in spec.edges}


class TestParsing:
    def test_chain_widths(self):
        s = parse_spec('{"family": "chain", "widths": [2, 3, 2]}')
        assert s.depth == 2
        assert s.widths == (2, 3, 2)
        assert edge_set(s) == {(0, 1, "learned"), (1, 2, "learned")}

    def test_family_defaults_to_chain(self):
        assert parse_spec('{"widths": [2, 3]}').family == "chain"

    def test_densenet_three_layers(self):
        s = spec_from_dict({"family": "densenet", "widths": [3, 4, 4, 4]})
        assert s.family == "dense"
        assert {(a, b) for a, b, _ in edge_set(s)} == {(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)}
        assert all(k == "learned" for *_, k in edge_set(s))

    def test_resnet_identity_skips(self):
        s = spec_from_dict({"family": "resnet", "widths": [4, 4, 4, 4]})
        assert s.family == "residual"
        assert edge_set(s) == {(0, 1, "learned"), (1, 2, "learned"), (2, 3, "learned"),
                               (1, 3, "identity")}

    def test_family_expansion(self):
        s = expand_family("chain", 3, 16)
        assert s.widths == (16,) * 4
        d = expand_family("dense", 2, 4)
        assert {(e.src, e.dst) for e in d.edges} == {(0, 1), (0, 2), (1, 2)}
        r = expand_family("residual", 4, 8)
        assert {(e.src, e.dst) for e in r.edges if e.kind == "identity"} == {(1, 3)}
        assert sum(e.kind == "learned" for e in r.edges) == 4

    def test_depth_width_shorthand(self):
        s = parse_spec('{"family": "resnet", "depth": 5, "width": 6, "input_dim": 3}')
        assert s.widths == (3, 6, 6, 6, 6, 6)
        assert {(e.src, e.dst) for e in s.edges if e.kind == "identity"} == {(1, 3), (3, 5)}

    def test_conv_inference(self):
        s = spec_from_dict({
            "input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
            "layers": [{"kind": "conv", "out_channels": 5, "kernel": 3},
                       {"kind": "conv", "out_channels": 4, "kernel": 3, "stride": 2}]})
        assert s.family == "chain"
        assert s.layers[1].spatial_extent == (8,)
        assert s.layers[1].in_channels == 5
        assert s.widths == (16, 40, 16)

    def test_lambda_forms(self):
        assert parse_spec('{"widths": [2, 3, 3], "lambda": 0.5}').lambdas == (0.5, 0.5)
        assert parse_spec('{"widths": [2, 3, 3], "lambda": [0.1, 0.2]}').lambdas == (0.1, 0.2)


class TestParamCount:
    def test_chain(self):
        assert param_count(from_widths("chain", (2, 3, 2))) == 12

    def test_fig3_conv_layer(self):
        assert param_count(conv_specs()[0]) == 30

    def test_identity_edge_free(self):
        r = from_widths("residual", (4, 4, 4, 4))
        c = from_widths("chain", (4, 4, 4, 4))
        assert param_count(r) == param_count(c)

    def test_dense_counts_input_edges(self):
        assert param_count(from_widths("dense", (2, 2, 2))) == 12


class TestValidation:
    @pytest.mark.parametrize("doc, path", [
        ({"widths": [2]}, "widths"),
        ({"widths": [2, 0]}, "widths[1]"),
        ({"family": "nope", "widths": [2, 3]}, "family"),
        ({"widths": [2, 3], "edges": [{"src": 0, "dst": 3}]}, "edges[0].dst"),
        ({"widths": [2, 3, 3], "edges": [{"src": 0, "dst": 1}, {"src": 1, "dst": 1}]},
         "edges[1]"),
        ({"widths": [2, 3, 4], "edges": [{"src": 0, "dst": 1}, {"src": 1, "dst": 2,
                                                              "kind": "identity"}]}, "edges[1]"),
        ({"widths": [2, 3, 3], "edges": [{"src": 0, "dst": 1}]}, "edges"),
        ({"family": "chain", "widths": [2, 3, 3],
          "edges": [{"src": 0, "dst": 1}, {"src": 0, "dst": 2}]}, "edges"),
        ({"input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
          "layers": [{"kind": "conv", "out_channels": 5, "kernel": [4]}]}, "layers[0].kernel[0]"),
        ({"input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
          "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3], "stride": [3]}]},
         "layers[0].stride[0]"),
        ({"input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
          "layers": [{"kind": "conv", "out_channels": 5, "kernel": [9]}]}, "layers[0].kernel[0]"),
        ({"widths": [2, 3], "lambda": -1}, "lambda"),
        ({"widths": [2, 3, 3], "lambda": [1.0]}, "lambda"),
    ])
    def test_error_paths(self, doc, path):
        with pytest.raises(SpecError) as info:
            spec_from_dict(doc)
        assert info.value.path == path

    def test_malformed_json(self):
        with pytest.raises(SpecError):
            parse_spec("{not json")

    def test_custom_chain_is_retagged(self):
        s = spec_from_dict({"widths": [2, 3, 3],
                            "edges": [{"src": 0, "dst": 1}, {"src": 1, "dst": 2}]})
        assert s.family == "chain"


class TestCanonicalForm:
    def test_round_trip(self):
        for s in [from_widths("dense", (3, 4, 5)), *conv_specs()]:
            again = parse_spec(serialize_spec(s))
            assert again == s
            assert serialize_spec(again) == serialize_spec(s)

    def test_hash_ignores_id_only(self):
        a = spec_from_dict({"widths": [2, 3], "id": "a"})
        b = spec_from_dict({"widths": [2, 3], "id": "b"})
        c = spec_from_dict({"widths": [2, 4]})
        assert spec_hash(a) == spec_hash(b) != spec_hash(c)
        assert len(spec_hash(a)) == 64

    def test_edge_order_irrelevant(self):
        a = spec_from_dict({"widths": [2, 3, 3], "edges": [{"src": 0, "dst": 1},
                                                          {"src": 0, "dst": 2}]})
        b = spec_from_dict({"widths": [2, 3, 3], "edges": [{"src": 0, "dst": 2},
                                                          {"src": 0, "dst": 1}]})
        assert spec_hash(a) == spec_hash(b)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), family=st.sampled_from(["chain", "residual", "dense",
                                                                   "custom"]))
    def test_round_trip_property(self, seed, family):
        rng = np.random.default_rng(seed)
        s = random_custom_spec(rng) if family == "custom" else random_family_spec(rng, family)
        doc = json.loads(serialize_spec(s))
        assert spec_from_dict(doc) == s
        assert spec_to_dict(spec_from_dict(doc)) == doc
