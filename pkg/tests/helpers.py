"""Random architecture generators and finite-difference oracles shared by the tests."""

from __future__ import annotations

import numpy as np

from deepframe.archspec import ArchSpec, Edge, dense_geom, from_widths, spec_from_dict, validate_spec
from deepframe.dictionary import build_dictionary, flatten_params, load_params
from deepframe.potential import frame_potential

FAMILIES = ("chain", "residual", "dense")


def random_widths(rng, depth: int, lo: int = 1, hi: int = 8) -> list[int]:
    return [int(v) for v in rng.integers(lo, hi + 1, size=depth + 1)]


def random_family_spec(rng, family: str, max_depth: int = 4, hi: int = 8) -> ArchSpec:
    depth = int(rng.integers(1, max_depth + 1))
    k = random_widths(rng, depth, hi=hi)
    if family == "residual":
        # identity skips (j-1 -> j+1) need equal widths at both ends
        for j in range(2, depth, 2):
            k[j + 1] = k[j - 1]
    return from_widths(family, k)


def random_custom_spec(rng, max_depth: int = 4, hi: int = 6) -> ArchSpec:
    """Random lower-triangular edge set, some identity edges where widths allow."""
    while True:
        depth = int(rng.integers(2, max_depth + 1))
        k = random_widths(rng, depth, hi=hi)
        edges = []
        for j in range(1, depth + 1):
            srcs = [s for s in range(j) if rng.random() < 0.5] or [j - 1]
            for s in srcs:
                ident = s >= 1 and j > 1 and rng.random() < 0.3
                if ident:
                    k[j] = k[s]
                edges.append(Edge(s, j, "identity" if ident else "learned"))
        # widths may have changed after earlier identity edges; rebuild once
        edges = [e if e.kind == "learned" or k[e.src] == k[e.dst] else Edge(e.src, e.dst)
                 for e in edges]
        if not any(e.dst == 1 and e.kind == "learned" for e in edges):
            continue
        spec = ArchSpec(dense_geom(k[0]), tuple(dense_geom(v) for v in k[1:]), tuple(edges),
                        family="custom")
        if sorted((e.src, e.dst) for e in edges) == [(j - 1, j) for j in range(1, depth + 1)]:
            continue
        try:
            return validate_spec(spec)
        except ValueError:
            continue


def conv_specs() -> list[ArchSpec]:
    """Conv architectures with two input channels, five output channels and 3-wide filters."""
    docs = [
        {"family": "chain", "input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
         "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3]}]},
        {"family": "chain", "input": {"kind": "conv", "spatial_extent": [8], "channels": 2},
         "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3]},
                    {"kind": "conv", "out_channels": 5, "kernel": [3], "stride": [2]}]},
        {"family": "chain", "input": {"kind": "conv", "spatial_extent": [4, 4], "channels": 2},
         "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3, 3]}]},
        {"family": "dense", "input": {"kind": "conv", "spatial_extent": [4, 4], "channels": 2},
         "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3, 3]},
                    {"kind": "conv", "out_channels": 5, "kernel": [3, 3]}]},
        {"family": "residual", "input": {"kind": "conv", "spatial_extent": [6], "channels": 2},
         "layers": [{"kind": "conv", "out_channels": 5, "kernel": [3]},
                    {"kind": "conv", "out_channels": 5, "kernel": [3]},
                    {"kind": "conv", "out_channels": 5, "kernel": [3]}]},
    ]
    return [spec_from_dict(d) for d in docs]


def central_difference(f, v: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (f(v + e) - f(v - e)) / (2 * h)
    return g


def potential_fd(d, h: float = 1e-5) -> np.ndarray:
    v = flatten_params(d)
    return central_difference(lambda p: frame_potential(load_params(d, p)), v, h)


def random_dictionary(rng, family: str | None = None):
    fam = family or FAMILIES[int(rng.integers(len(FAMILIES)))]
    spec = random_family_spec(rng, fam)
    return build_dictionary(spec, seed=int(rng.integers(2**31)))
