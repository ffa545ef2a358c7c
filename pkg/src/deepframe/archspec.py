"""Architecture descriptions: parsing, validation and canonical form.

An :class:`ArchSpec` lists the layer geometries of a feed-forward network and
the directed edges between them.  Layer 0 is the input; layers ``1..l`` carry
activations.  Every edge goes from a lower to a higher index, so the induced
dictionary is block lower-triangular.

JSON documents follow this layout::

    {"family": "chain" | "resnet" | "densenet" | "custom",
     "widths": [k0, k1, ...],                  # dense shorthand
     "depth": int, "width": int, "input_dim": int,   # family shorthand
     "input": {"kind": "dense" | "conv", ...},
     "layers": [{"kind": ...}, ...],
     "edges": [{"src": int, "dst": int, "kind": "learned" | "identity"}],
     "lambda": number | [number, ...],
     "id": string}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

FAMILIES = ("chain", "residual", "dense", "custom")
FAMILY_ALIASES = {
    "chain": "chain",
    "residual": "residual",
    "resnet": "residual",
    "dense": "dense",
    "densenet": "dense",
    "custom": "custom",
}
EDGE_KINDS = ("learned", "identity")


class SpecError(ValueError):
    """Invalid architecture description.

    ``path`` names the offending field, e.g. ``"edges[3].dst"``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class LayerGeom:
    """Geometry of one layer's activations.

    Dense layers only have ``units``.  For a conv layer ``spatial_extent`` is
    the extent of the layer's *input*; its output extent is
    ``spatial_extent // stride`` per dimension.  The network input uses
    ``kernel == stride == 1`` and ``in_channels == out_channels``.
    """

    kind: str
    units: int = 0
    spatial_extent: tuple[int, ...] = ()
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, ...] = ()
    stride: tuple[int, ...] = ()

    @property
    def is_conv(self) -> bool:
        return self.kind == "conv"

    @property
    def spatial_dims(self) -> int:
        return len(self.spatial_extent)

    @property
    def out_extent(self) -> tuple[int, ...]:
        return tuple(e // s for e, s in zip(self.spatial_extent, self.stride))

    @property
    def n_units(self) -> int:
        if self.is_conv:
            return self.out_channels * math.prod(self.out_extent)
        return self.units

    def to_dict(self) -> dict:
        if not self.is_conv:
            return {"kind": "dense", "units": self.units}
        return {
            "kind": "conv",
            "spatial_extent": list(self.spatial_extent),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": list(self.kernel),
            "stride": list(self.stride),
        }


def dense_geom(units: int) -> LayerGeom:
    return LayerGeom(kind="dense", units=int(units))


def conv_input_geom(spatial_extent: Sequence[int], channels: int) -> LayerGeom:
    ext = tuple(int(e) for e in spatial_extent)
    return LayerGeom(
        kind="conv",
        spatial_extent=ext,
        in_channels=int(channels),
        out_channels=int(channels),
        kernel=(1,) * len(ext),
        stride=(1,) * len(ext),
    )


def conv_geom(spatial_extent, in_channels, out_channels, kernel, stride=None) -> LayerGeom:
    ext = tuple(int(e) for e in spatial_extent)
    if stride is None:
        stride = (1,) * len(ext)
    return LayerGeom(
        kind="conv",
        spatial_extent=ext,
        in_channels=int(in_channels),
        out_channels=int(out_channels),
        kernel=tuple(int(k) for k in kernel),
        stride=tuple(int(s) for s in stride),
    )


@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    kind: str = "learned"

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "kind": self.kind}


@dataclass(frozen=True)
class ArchSpec:
    input_geom: LayerGeom
    layers: tuple[LayerGeom, ...]
    edges: tuple[Edge, ...]
    family: str = "custom"
    lam: float | tuple[float, ...] = 0.0
    id: str | None = field(default=None, compare=False)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def geom(self, j: int) -> LayerGeom:
        return self.input_geom if j == 0 else self.layers[j - 1]

    @property
    def widths(self) -> tuple[int, ...]:
        """Unit counts ``(k_0, k_1, ..., k_l)``."""
        return (self.input_geom.n_units,) + tuple(g.n_units for g in self.layers)

    @property
    def lambdas(self) -> tuple[float, ...]:
        if isinstance(self.lam, tuple):
            return self.lam
        return (float(self.lam),) * self.depth

    def incoming(self, j: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == j]

    @property
    def chain_form(self) -> bool:
        """Whether the dictionary uses the chain encoding (learned diagonal, -I subdiagonal)."""
        return self.family == "chain"


# ---------------------------------------------------------------------------
# family expansion


def family_edges(family: str, depth: int) -> tuple[Edge, ...]:
    family = _canonical_family(family, "family")
    if family == "chain":
        edges = [Edge(j - 1, j) for j in range(1, depth + 1)]
    elif family == "residual":
        edges = [Edge(j - 1, j) for j in range(1, depth + 1)]
        edges += [Edge(j - 1, j + 1, "identity") for j in range(2, depth, 2)]
    elif family == "dense":
        edges = [Edge(k, j) for j in range(1, depth + 1) for k in range(j)]
    else:
        raise SpecError("family", "custom family has no canonical edge set")
    return tuple(sorted(edges, key=_edge_key))


def expand_family(family: str, depth: int, width: int, input_dim: int | None = None,
                  lam: float = 0.0) -> ArchSpec:
    """Fully-connected network of ``depth`` layers, each ``width`` units wide.

    ``input_dim`` defaults to ``width``.
    """
    if depth < 1:
        raise SpecError("depth", f"must be >= 1, got {depth}")
    if width < 1:
        raise SpecError("width", f"must be >= 1, got {width}")
    k0 = width if input_dim is None else input_dim
    family = _canonical_family(family, "family")
    if family == "custom":
        raise SpecError("family", "cannot expand the custom family")
    spec = ArchSpec(
        input_geom=dense_geom(k0),
        layers=tuple(dense_geom(width) for _ in range(depth)),
        edges=family_edges(family, depth),
        family=family,
        lam=float(lam),
    )
    validate_spec(spec)
    return spec


def chain_spec(widths: Sequence[int], lam: float = 0.0) -> ArchSpec:
    return from_widths("chain", widths, lam=lam)


def from_widths(family: str, widths: Sequence[int], lam: float = 0.0) -> ArchSpec:
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise SpecError("widths", "need the input width and at least one layer")
    family = _canonical_family(family, "family")
    spec = ArchSpec(
        input_geom=dense_geom(widths[0]),
        layers=tuple(dense_geom(w) for w in widths[1:]),
        edges=family_edges(family, len(widths) - 1),
        family=family,
        lam=float(lam),
    )
    validate_spec(spec)
    return spec


# ---------------------------------------------------------------------------
# validation


def _edge_key(e: Edge):
    return (e.dst, e.src)


def _canonical_family(name: Any, path: str) -> str:
    if not isinstance(name, str) or name.lower() not in FAMILY_ALIASES:
        raise SpecError(path, f"unknown family {name!r}")
    return FAMILY_ALIASES[name.lower()]


def _check_geom(g: LayerGeom, path: str) -> None:
    if g.kind == "dense":
        if g.units < 1:
            raise SpecError(f"{path}.units", f"must be >= 1, got {g.units}")
        return
    if g.kind != "conv":
        raise SpecError(f"{path}.kind", f"unknown layer kind {g.kind!r}")
    nd = len(g.spatial_extent)
    if nd not in (1, 2):
        raise SpecError(f"{path}.spatial_extent", "conv layers need 1 or 2 spatial dims")
    if len(g.kernel) != nd or len(g.stride) != nd:
        raise SpecError(f"{path}.kernel", "kernel and stride need one entry per spatial dim")
    if g.in_channels < 1 or g.out_channels < 1:
        raise SpecError(f"{path}.out_channels", "channel counts must be >= 1")
    for d in range(nd):
        e, k, s = g.spatial_extent[d], g.kernel[d], g.stride[d]
        if e < 1:
            raise SpecError(f"{path}.spatial_extent[{d}]", f"must be >= 1, got {e}")
        if k < 1 or k % 2 == 0:
            raise SpecError(f"{path}.kernel[{d}]", f"kernel extent must be odd, got {k}")
        if k > e:
            raise SpecError(f"{path}.kernel[{d}]", f"kernel extent {k} exceeds spatial extent {e}")
        if s < 1 or e % s:
            raise SpecError(f"{path}.stride[{d}]", f"stride {s} must divide spatial extent {e}")


def _output_channels(g: LayerGeom) -> int:
    return g.out_channels if g.is_conv else 0


def validate_spec(spec: ArchSpec) -> ArchSpec:
    """Raise :class:`SpecError` unless ``spec`` is well formed; return it otherwise."""
    if spec.family not in FAMILIES:
        raise SpecError("family", f"unknown family {spec.family!r}")
    _check_geom(spec.input_geom, "input")
    if spec.input_geom.is_conv and (spec.input_geom.kernel != (1,) * spec.input_geom.spatial_dims
                                    or spec.input_geom.stride != (1,) * spec.input_geom.spatial_dims):
        raise SpecError("input", "the input geometry carries no kernel or stride")
    l = spec.depth
    if l < 1:
        raise SpecError("layers", "at least one layer is required")
    for j, g in enumerate(spec.layers, start=1):
        _check_geom(g, f"layers[{j - 1}]")
    lams = spec.lambdas
    if len(lams) != l:
        raise SpecError("lambda", f"expected {l} per-layer values, got {len(lams)}")
    if any(not math.isfinite(v) or v < 0 for v in lams):
        raise SpecError("lambda", "sparsity weights must be finite and nonnegative")

    seen = set()
    for n, e in enumerate(spec.edges):
        path = f"edges[{n}]"
        if e.kind not in EDGE_KINDS:
            raise SpecError(f"{path}.kind", f"unknown edge kind {e.kind!r}")
        if not 0 <= e.src <= l:
            raise SpecError(f"{path}.src", f"dangling source index {e.src}")
        if not 1 <= e.dst <= l:
            raise SpecError(f"{path}.dst", f"dangling destination index {e.dst}")
        if e.src >= e.dst:
            raise SpecError(path, f"edge {e.src}->{e.dst} is not feed-forward")
        if (e.src, e.dst) in seen:
            raise SpecError(path, f"duplicate edge {e.src}->{e.dst}")
        seen.add((e.src, e.dst))
        src, dst = spec.geom(e.src), spec.geom(e.dst)
        if e.kind == "identity":
            if src.n_units != dst.n_units or _output_channels(src) != _output_channels(dst) or (
                    src.is_conv and src.out_extent != dst.out_extent):
                raise SpecError(path, f"identity edge {e.src}->{e.dst} joins layers of "
                                      f"different sizes ({src.n_units} vs {dst.n_units})")
        elif dst.is_conv:
            if not src.is_conv:
                raise SpecError(path, f"conv layer {e.dst} cannot read dense layer {e.src}")
            if src.out_extent != dst.spatial_extent:
                raise SpecError(path, f"layer {e.src} output extent {list(src.out_extent)} does not "
                                      f"match layer {e.dst} input extent {list(dst.spatial_extent)}")
            if e.src == e.dst - 1 and src.out_channels != dst.in_channels:
                raise SpecError(f"layers[{e.dst - 1}].in_channels",
                                f"expected {src.out_channels} channels from layer {e.src}")

    for j in range(1, l + 1):
        if not any(e.dst == j for e in spec.edges):
            raise SpecError("edges", f"layer {j} has no incoming edge")
    incoming_first = spec.incoming(1)
    if incoming_first[0].kind == "identity" and spec.chain_form:
        raise SpecError("edges", "chain networks need a learned first layer")

    if spec.family != "custom":
        expected = family_edges(spec.family, l)
        if tuple(sorted(spec.edges, key=_edge_key)) != expected:
            raise SpecError("edges", f"edge set does not match the {spec.family} family")
    elif _is_chain_edges(spec.edges, l):
        raise SpecError("family", "a chain edge set must be tagged 'chain'")
    return spec


def _is_chain_edges(edges: Iterable[Edge], depth: int) -> bool:
    return sorted(edges, key=_edge_key) == [Edge(j - 1, j) for j in range(1, depth + 1)]


# ---------------------------------------------------------------------------
# parsing and serialization


def _int(value: Any, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise SpecError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise SpecError(path, f"must be >= {minimum}, got {value}")
    return int(value)


def _int_list(value: Any, path: str, minimum: int = 1) -> tuple[int, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise SpecError(path, f"expected a nonempty list of integers, got {value!r}")
    return tuple(_int(v, f"{path}[{i}]", minimum) for i, v in enumerate(value))


def _parse_geom(doc: Any, path: str, prev: LayerGeom | None, is_input: bool) -> LayerGeom:
    if not isinstance(doc, Mapping):
        raise SpecError(path, "expected an object")
    kind = doc.get("kind", "dense")
    if kind == "dense":
        if "units" not in doc:
            raise SpecError(f"{path}.units", "missing")
        return dense_geom(_int(doc["units"], f"{path}.units", 1))
    if kind != "conv":
        raise SpecError(f"{path}.kind", f"unknown layer kind {kind!r}")
    if is_input:
        if "spatial_extent" not in doc:
            raise SpecError(f"{path}.spatial_extent", "missing")
        ext = _int_list(doc["spatial_extent"], f"{path}.spatial_extent")
        ch = doc.get("channels", doc.get("out_channels", doc.get("in_channels")))
        if ch is None:
            raise SpecError(f"{path}.channels", "missing")
        return conv_input_geom(ext, _int(ch, f"{path}.channels", 1))
    if "spatial_extent" in doc:
        ext = _int_list(doc["spatial_extent"], f"{path}.spatial_extent")
    elif prev is not None and prev.is_conv:
        ext = prev.out_extent
    else:
        raise SpecError(f"{path}.spatial_extent", "missing and not inferable from the previous layer")
    if "in_channels" in doc:
        cin = _int(doc["in_channels"], f"{path}.in_channels", 1)
    elif prev is not None and prev.is_conv:
        cin = prev.out_channels
    else:
        raise SpecError(f"{path}.in_channels", "missing and not inferable from the previous layer")
    if "out_channels" not in doc:
        raise SpecError(f"{path}.out_channels", "missing")
    cout = _int(doc["out_channels"], f"{path}.out_channels", 1)
    if "kernel" not in doc:
        raise SpecError(f"{path}.kernel", "missing")
    kernel = _int_list(doc["kernel"], f"{path}.kernel")
    if len(kernel) == 1 and len(ext) > 1:
        kernel = kernel * len(ext)
    stride = _int_list(doc.get("stride", [1] * len(ext)), f"{path}.stride")
    if len(stride) == 1 and len(ext) > 1:
        stride = stride * len(ext)
    return conv_geom(ext, cin, cout, kernel, stride)


def _parse_lambda(value: Any) -> float | tuple[float, ...]:
    if isinstance(value, list):
        out = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SpecError(f"lambda[{i}]", f"expected a number, got {v!r}")
            out.append(float(v))
        return tuple(out)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError("lambda", f"expected a number, got {value!r}")
    return float(value)


def spec_from_dict(doc: Mapping) -> ArchSpec:
    if not isinstance(doc, Mapping):
        raise SpecError("", "spec document must be a JSON object")
    # without edges the only sensible default is a plain chain
    family = _canonical_family(doc.get("family", "custom" if "edges" in doc else "chain"), "family")
    lam = _parse_lambda(doc.get("lambda", 0.0))
    spec_id = doc.get("id")
    if spec_id is not None and not isinstance(spec_id, str):
        raise SpecError("id", "expected a string")

    if "widths" in doc:
        if "layers" in doc or "input" in doc:
            raise SpecError("widths", "give either 'widths' or 'input'/'layers', not both")
        widths = _int_list(doc["widths"], "widths")
        if len(widths) < 2:
            raise SpecError("widths", "need the input width and at least one layer")
        input_geom = dense_geom(widths[0])
        layers = tuple(dense_geom(w) for w in widths[1:])
    elif "layers" in doc:
        input_geom = _parse_geom(doc.get("input"), "input", None, True) if "input" in doc else None
        if input_geom is None:
            raise SpecError("input", "missing")
        raw = doc["layers"]
        if not isinstance(raw, list) or not raw:
            raise SpecError("layers", "expected a nonempty list")
        parsed: list[LayerGeom] = []
        prev = input_geom
        for i, g in enumerate(raw):
            prev = _parse_geom(g, f"layers[{i}]", prev, False)
            parsed.append(prev)
        layers = tuple(parsed)
    elif "depth" in doc or "width" in doc:
        if family == "custom":
            raise SpecError("family", "depth/width shorthand needs a named family")
        depth = _int(doc.get("depth"), "depth", 1)
        width = _int(doc.get("width"), "width", 1)
        k0 = _int(doc["input_dim"], "input_dim", 1) if "input_dim" in doc else width
        input_geom = dense_geom(k0)
        layers = tuple(dense_geom(width) for _ in range(depth))
    else:
        raise SpecError("layers", "missing: give 'widths', 'layers' or 'depth'/'width'")

    if "edges" in doc:
        raw_edges = doc["edges"]
        if not isinstance(raw_edges, list):
            raise SpecError("edges", "expected a list")
        edges = []
        for n, e in enumerate(raw_edges):
            path = f"edges[{n}]"
            if not isinstance(e, Mapping):
                raise SpecError(path, "expected an object")
            for key in ("src", "dst"):
                if key not in e:
                    raise SpecError(f"{path}.{key}", "missing")
            edges.append(Edge(_int(e["src"], f"{path}.src"), _int(e["dst"], f"{path}.dst"),
                              e.get("kind", "learned")))
        edges = tuple(sorted(edges, key=_edge_key))
        if family == "custom" and _is_chain_edges(edges, len(layers)):
            family = "chain"
    else:
        if family == "custom":
            raise SpecError("edges", "custom specs must list their edges")
        edges = family_edges(family, len(layers))

    spec = ArchSpec(input_geom=input_geom, layers=layers, edges=edges, family=family,
                    lam=lam, id=spec_id)
    return validate_spec(spec)


def parse_spec(text: str | bytes | Mapping) -> ArchSpec:
    """Parse a JSON document (or an already-decoded mapping) into a validated spec."""
    if isinstance(text, Mapping):
        return spec_from_dict(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError("", f"malformed JSON: {exc}") from None
    return spec_from_dict(doc)


def spec_to_dict(spec: ArchSpec, with_id: bool = True) -> dict:
    doc = {
        "family": spec.family,
        "input": spec.input_geom.to_dict(),
        "layers": [g.to_dict() for g in spec.layers],
        "edges": [e.to_dict() for e in sorted(spec.edges, key=_edge_key)],
        "lambda": list(spec.lam) if isinstance(spec.lam, tuple) else spec.lam,
    }
    if spec.input_geom.is_conv:
        g = spec.input_geom
        doc["input"] = {"kind": "conv", "spatial_extent": list(g.spatial_extent),
                        "channels": g.out_channels}
    if with_id and spec.id is not None:
        doc["id"] = spec.id
    return doc


def serialize_spec(spec: ArchSpec) -> str:
    """Canonical JSON text: sorted keys, no whitespace."""
    return json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))


def spec_hash(spec: ArchSpec) -> str:
    """Content digest of the canonical form, ignoring the ``id`` label."""
    text = json.dumps(spec_to_dict(spec, with_id=False), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def edge_param_count(spec: ArchSpec, edge: Edge) -> int:
    if edge.kind != "learned":
        return 0
    src, dst = spec.geom(edge.src), spec.geom(edge.dst)
    if dst.is_conv:
        return math.prod(dst.kernel) * src.out_channels * dst.out_channels
    return src.n_units * dst.n_units


def param_count(spec: ArchSpec) -> int:
    return sum(edge_param_count(spec, e) for e in spec.edges)
