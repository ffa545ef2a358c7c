"""The architecture-induced block dictionary.

Column block ``j`` (``j = 1..l``) holds the atoms of layer ``j``.  Row block
``j`` holds the reconstruction residual of layer ``j``'s update rule, so a
block ``(i, j)`` is present only when ``i >= j``.  Two encodings are used:

* chain networks: block ``(j, j)`` is the learned synthesis map ``B_j``
  (``k_{j-1} x k_j``) and block ``(j + 1, j)`` is ``-I``;
* every other family: block ``(1, 1)`` is the learned ``B_1``, block
  ``(j, j)`` is ``I`` for ``j > 1`` and each edge ``k -> j`` (``k >= 1``)
  fills block ``(j, k)`` with a learned analysis map or ``-I``.

Edges out of the input into layers ``j > 1`` act on the data, not on a
coefficient vector.  They are kept in column 0 of the grid, which is excluded
from the dictionary proper and only enters the sparse-coding target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .archspec import ArchSpec, parse_spec, serialize_spec, spec_to_dict
from .conv import ConvMap, conv_map

BLOCK_KINDS = ("learned_dense", "learned_conv", "identity", "neg_identity")
DEFAULT_MATERIALIZE_CAP = 10**7


class MaterializationError(RuntimeError):
    """Raised when a dense expansion would exceed the configured entry cap."""


@dataclass(frozen=True)
class Block:
    kind: str
    rows: int
    cols: int
    payload: np.ndarray | None = None
    conv: ConvMap | None = None
    transposed: bool = False
    fan_in: int = 1

    @property
    def learned(self) -> bool:
        return self.kind.startswith("learned")

    @property
    def sign(self) -> float:
        return -1.0 if self.kind == "neg_identity" else 1.0

    @property
    def n_params(self) -> int:
        return 0 if self.payload is None else self.payload.size

    def with_payload(self, payload: np.ndarray) -> "Block":
        payload = np.array(payload, dtype=float).reshape(self.payload.shape)
        payload.setflags(write=False)
        return replace(self, payload=payload)

    def dense(self) -> np.ndarray:
        if self.kind == "learned_dense":
            return np.array(self.payload)
        if self.kind == "learned_conv":
            return self.conv.dense(self.payload, self.transposed)
        return self.sign * np.eye(self.rows)

    def sparse(self) -> sp.csr_matrix:
        if self.kind == "learned_conv":
            return self.conv.sparse(self.payload, self.transposed)
        if self.kind == "learned_dense":
            return sp.csr_matrix(self.payload)
        return self.sign * sp.identity(self.rows, format="csr")

    def operator(self):
        """Cheapest exact representation: ndarray for dense, csr for conv, None for +-I."""
        if self.kind == "learned_dense":
            return self.payload
        if self.kind == "learned_conv":
            return self.sparse()
        return None

    def pattern(self) -> sp.csr_matrix:
        if self.kind == "learned_dense":
            return sp.csr_matrix(np.ones((self.rows, self.cols)))
        if self.kind == "learned_conv":
            return self.conv.pattern(self.transposed)
        return sp.identity(self.rows, format="csr")

    def col_sq_norms(self) -> np.ndarray:
        if self.kind == "learned_dense":
            return np.einsum("ij,ij->j", self.payload, self.payload)
        if self.kind == "learned_conv":
            if not self.transposed:
                w = self.payload.reshape(self.payload.shape[0], -1)
                per_channel = np.einsum("oi,oi->o", w, w)
                return np.repeat(per_channel, self.cols // self.payload.shape[0])
            m = self.sparse()
            return np.asarray(m.multiply(m).sum(axis=0)).ravel()
        return np.ones(self.cols)

    def param_grad(self, block_grad: np.ndarray) -> np.ndarray:
        if self.kind == "learned_dense":
            return block_grad
        return self.conv.filter_grad(block_grad, self.transposed)


@dataclass(frozen=True)
class BlockDictionary:
    """Block grid of the induced dictionary.

    ``blocks`` maps ``(row_block, col_block)`` to :class:`Block`; column
    index 0 holds data-side input edges.  Absent keys are zero blocks.
    """

    spec: ArchSpec
    row_dims: tuple[int, ...]
    col_dims: tuple[int, ...]
    blocks: Mapping[tuple[int, int], Block] = field(repr=False)
    lam: tuple[float, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.col_dims)

    @property
    def n_rows(self) -> int:
        return sum(self.row_dims)

    @property
    def n_atoms(self) -> int:
        return sum(self.col_dims)

    @property
    def row_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_dims)])

    @property
    def col_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.col_dims)])

    def column(self, j: int) -> list[tuple[int, Block]]:
        """Row-sorted ``(i, block)`` pairs in dictionary column block ``j``."""
        return sorted(((i, b) for (i, jj), b in self.blocks.items() if jj == j),
                      key=lambda t: t[0])

    def row(self, i: int) -> list[tuple[int, Block]]:
        return sorted(((j, b) for (ii, j), b in self.blocks.items() if ii == i),
                      key=lambda t: t[0])

    def learned_keys(self) -> list[tuple[int, int]]:
        return sorted(k for k, b in self.blocks.items() if b.learned)

    @property
    def n_params(self) -> int:
        return sum(self.blocks[k].n_params for k in self.learned_keys())


# ---------------------------------------------------------------------------
# construction


def _learned_block(spec: ArchSpec, src: int, dst: int, transposed: bool) -> Block:
    sg, dg = spec.geom(src), spec.geom(dst)
    if dg.is_conv:
        cmap = conv_map(sg.out_channels, dg.out_channels, dg.spatial_extent, dg.kernel, dg.stride)
        rows, cols = cmap.shape(transposed)
        payload = np.zeros(cmap.filter_shape)
        return Block("learned_conv", rows, cols, payload, cmap, transposed,
                     fan_in=int(np.prod(dg.kernel)) * sg.out_channels)
    shape = (dg.n_units, sg.n_units) if transposed else (sg.n_units, dg.n_units)
    return Block("learned_dense", shape[0], shape[1], np.zeros(shape), None, transposed,
                 fan_in=sg.n_units)


def block_structure(spec: ArchSpec) -> tuple[tuple[int, ...], tuple[int, ...], dict]:
    """Row dims, column dims and zero-initialized block grid for ``spec``."""
    k = spec.widths
    l = spec.depth
    blocks: dict[tuple[int, int], Block] = {}
    if spec.chain_form:
        row_dims = tuple(k[j - 1] for j in range(1, l + 1))
        for j in range(1, l + 1):
            blocks[(j, j)] = _learned_block(spec, j - 1, j, transposed=False)
            if j > 1:
                blocks[(j, j - 1)] = Block("neg_identity", k[j - 1], k[j - 1])
    else:
        row_dims = (k[0],) + tuple(k[j] for j in range(2, l + 1))
        for e in spec.edges:
            if e.dst == 1:
                if e.kind == "learned":
                    blocks[(1, 1)] = _learned_block(spec, 0, 1, transposed=False)
                else:
                    blocks[(1, 1)] = Block("identity", k[0], k[1])
                continue
            if e.kind == "learned":
                blocks[(e.dst, e.src)] = _learned_block(spec, e.src, e.dst, transposed=True)
            else:
                blocks[(e.dst, e.src)] = Block("neg_identity", k[e.dst], k[e.src])
        for j in range(2, l + 1):
            blocks[(j, j)] = Block("identity", k[j], k[j])
    col_dims = tuple(k[1:])
    return row_dims, col_dims, blocks


def gaussian_init(block: Block, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian entries with standard deviation ``fan_in ** -0.5``."""
    return rng.standard_normal(block.payload.shape) / math.sqrt(block.fan_in)


InitPolicy = Callable[[Block, np.random.Generator], np.ndarray]


def build_dictionary(spec: ArchSpec, init: InitPolicy | str = "gaussian",
                     seed: int | np.random.Generator | None = 0) -> BlockDictionary:
    """Induced dictionary of ``spec`` with learned payloads drawn by ``init``.

    Blocks are initialized in row-major grid order from a single generator, so
    the result is a deterministic function of ``(spec, init, seed)``.
    """
    if isinstance(init, str):
        if init == "gaussian":
            init = gaussian_init
        elif init == "zeros":
            init = lambda b, rng: np.zeros(b.payload.shape)  # noqa: E731
        else:
            raise ValueError(f"unknown init policy {init!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    row_dims, col_dims, blocks = block_structure(spec)
    for key in sorted(blocks):
        b = blocks[key]
        if b.learned:
            blocks[key] = b.with_payload(init(b, rng))
    return BlockDictionary(spec, row_dims, col_dims, blocks, spec.lambdas)


def with_blocks(d: BlockDictionary, updates: Mapping[tuple[int, int], np.ndarray]) -> BlockDictionary:
    blocks = dict(d.blocks)
    for key, payload in updates.items():
        blocks[key] = blocks[key].with_payload(payload)
    return replace(d, blocks=blocks)


# ---------------------------------------------------------------------------
# parameters


def flatten_params(d: BlockDictionary) -> np.ndarray:
    """Learned payloads concatenated in row-major grid order."""
    keys = d.learned_keys()
    if not keys:
        return np.zeros(0)
    return np.concatenate([d.blocks[k].payload.ravel() for k in keys])


def param_slices(d: BlockDictionary) -> dict[tuple[int, int], slice]:
    out, pos = {}, 0
    for k in d.learned_keys():
        n = d.blocks[k].n_params
        out[k] = slice(pos, pos + n)
        pos += n
    return out


def load_params(d: BlockDictionary, v: np.ndarray) -> BlockDictionary:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != d.n_params:
        raise ValueError(f"parameter vector has length {v.size}, dictionary needs {d.n_params}")
    return with_blocks(d, {k: v[s] for k, s in param_slices(d).items()})


# ---------------------------------------------------------------------------
# dense expansion


def materialize(d: BlockDictionary, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Dense ``(sum row_dims) x (sum col_dims)`` matrix with conv blocks expanded."""
    if d.n_rows * d.n_atoms > cap:
        raise MaterializationError(
            f"dictionary is {d.n_rows} x {d.n_atoms}, above the cap of {cap} entries")
    ro, co = d.row_offsets, d.col_offsets
    out = np.zeros((d.n_rows, d.n_atoms))
    for (i, j), b in d.blocks.items():
        if j == 0:
            continue
        out[ro[i - 1]:ro[i], co[j - 1]:co[j]] = b.dense()
    return out


def input_operator(d: BlockDictionary, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Dense map ``T`` with the sparse-coding target ``x_tilde = T x``.

    Row block 1 copies the input; data-side edges ``0 -> j`` contribute
    ``-X_j0`` to row block ``j``.
    """
    k0 = d.spec.widths[0]
    if d.n_rows * k0 > cap:
        raise MaterializationError(f"target map is {d.n_rows} x {k0}, above the cap of {cap}")
    ro = d.row_offsets
    T = np.zeros((d.n_rows, k0))
    T[: ro[1]] = np.eye(ro[1], k0)
    for (i, j), b in d.blocks.items():
        if j == 0:
            T[ro[i - 1]:ro[i]] = -b.dense()
    return T


# ---------------------------------------------------------------------------
# serialization


def save_dictionary(d: BlockDictionary, path: str | Path) -> Path:
    """Write block-grid metadata as JSON plus a sidecar of little-endian float64 parameters."""
    path = Path(path)
    sidecar = path.with_suffix(".params.f64")
    flatten_params(d).astype("<f8").tofile(sidecar)
    meta = {
        "spec": spec_to_dict(d.spec),
        "row_dims": list(d.row_dims),
        "col_dims": list(d.col_dims),
        "blocks": [
            {"row": i, "col": j, "kind": b.kind, "rows": b.rows, "cols": b.cols,
             "payload_shape": list(b.payload.shape) if b.payload is not None else None,
             "transposed": b.transposed}
            for (i, j), b in sorted(d.blocks.items())
        ],
        "lambda": list(d.lam),
        "params_file": sidecar.name,
        "n_params": d.n_params,
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_dictionary(path: str | Path) -> BlockDictionary:
    path = Path(path)
    meta = json.loads(path.read_text())
    spec = parse_spec(meta["spec"])
    d = build_dictionary(spec, init="zeros")
    grid = {(b["row"], b["col"]): b["kind"] for b in meta["blocks"]}
    if grid != {k: b.kind for k, b in d.blocks.items()}:
        raise ValueError(f"{path}: block grid does not match its spec")
    v = np.fromfile(path.parent / meta["params_file"], dtype="<f8")
    return load_params(d, v)


def spec_text(d: BlockDictionary) -> str:
    return serialize_spec(d.spec)
