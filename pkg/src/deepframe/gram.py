"""Normalized Gram matrix of a block dictionary, computed block by block."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .archspec import ArchSpec
from .conv import shift_correlation
from .dictionary import (DEFAULT_MATERIALIZE_CAP, Block, BlockDictionary, block_structure,
                         materialize)


class ZeroColumnError(ValueError):
    """A dictionary atom has zero norm, so normalization is undefined."""

    def __init__(self, layer: int, unit: int):
        self.layer = layer
        self.unit = unit
        super().__init__(f"atom {unit} of layer {layer} has zero norm")


@dataclass(frozen=True)
class GramBlocks:
    """Nonzero blocks ``G[j, j']`` (``j <= j'``) of the normalized Gram matrix."""

    blocks: dict[tuple[int, int], np.ndarray]
    col_norms: tuple[np.ndarray, ...]
    n_offdiag: int
    trace: int

    @property
    def depth(self) -> int:
        return len(self.col_norms)

    def block(self, j: int, jp: int) -> np.ndarray | None:
        if j <= jp:
            return self.blocks.get((j, jp))
        g = self.blocks.get((jp, j))
        return None if g is None else g.T

    def dense(self) -> np.ndarray:
        dims = [n.size for n in self.col_norms]
        off = np.concatenate([[0], np.cumsum(dims)])
        out = np.zeros((off[-1], off[-1]))
        for (j, jp), g in self.blocks.items():
            out[off[j - 1]:off[j], off[jp - 1]:off[jp]] = g
            out[off[jp - 1]:off[jp], off[j - 1]:off[j]] = g.T
        return out


def column_norms(d: BlockDictionary) -> tuple[np.ndarray, ...]:
    """Per-layer Euclidean norms of the global dictionary's columns."""
    out = []
    for j in range(1, d.depth + 1):
        sq = np.zeros(d.col_dims[j - 1])
        for _, b in d.column(j):
            sq = sq + b.col_sq_norms()
        zero = np.flatnonzero(sq == 0.0)
        if zero.size:
            raise ZeroColumnError(j, int(zero[0]))
        out.append(np.sqrt(sq))
    return tuple(out)


def _is_identity(b: Block) -> bool:
    return b.kind in ("identity", "neg_identity")


def cross_product(a: Block, b: Block) -> np.ndarray:
    """Dense ``a.T @ b`` for two blocks sharing a row block."""
    if _is_identity(a):
        if _is_identity(b):
            return a.sign * b.sign * np.eye(a.cols)
        return a.sign * b.dense()
    if _is_identity(b):
        return b.sign * a.dense().T
    if a.kind == b.kind == "learned_conv":
        sa = a.conv.shift_basis(a.payload, a.transposed)
        sb = b.conv.shift_basis(b.payload, b.transposed)
        if (sa is not None and sb is not None and sa[1] == sb[1] and sa[2] == sb[2]
                and sa[0].shape[1:] == sb[0].shape[1:]):
            return shift_correlation(sa[0], sb[0], sa[1], sa[2])
    oa, ob = a.operator(), b.operator()
    out = oa.T @ ob
    return out.toarray() if sp.issparse(out) else np.asarray(out)


def gram_blocks(d: BlockDictionary, norms: tuple[np.ndarray, ...] | None = None) -> GramBlocks:
    """Blocks ``G[j, j'] = sum_i N_j^-1 B_ij^T B_ij' N_j'^-1`` over shared row blocks."""
    if norms is None:
        norms = column_norms(d)
    inv = [1.0 / n for n in norms]
    rows_of = {}
    for (i, j), b in d.blocks.items():
        if j > 0:
            rows_of.setdefault(j, {})[i] = b
    blocks = {}
    for j in range(1, d.depth + 1):
        for jp in range(j, d.depth + 1):
            shared = sorted(set(rows_of[j]) & set(rows_of[jp]))
            if not shared:
                continue
            acc = None
            for i in shared:
                term = cross_product(rows_of[j][i], rows_of[jp][i])
                acc = term if acc is None else acc + term
            blocks[(j, jp)] = inv[j - 1][:, None] * acc * inv[jp - 1][None, :]
    return GramBlocks(blocks, tuple(norms), count_offdiag(d.spec), d.n_atoms)


def gram_oracle(d: BlockDictionary, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Brute-force ``G`` from the materialized, column-normalized dictionary."""
    B = materialize(d, cap)
    norms = np.linalg.norm(B, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        off = d.col_offsets
        j = int(np.searchsorted(off, zero[0], side="right"))
        raise ZeroColumnError(j, int(zero[0] - off[j - 1]))
    Bn = B / norms
    return Bn.T @ Bn


def chain_gram_blocks(d: BlockDictionary) -> dict[tuple[int, int], np.ndarray]:
    """Chain-network Gram blocks from per-layer quantities only.

    With ``C_j`` the column norms of ``B_j`` and ``N_j^2 = C_j^2 + 1``
    (``N_l = C_l`` for the last layer)::

        G[j, j]   = N_j^-1 (B_j^T B_j + I) N_j^-1      (no "+ I" for j = l)
        G[j, j+1] = -N_j^-1 B_{j+1} N_{j+1}^-1
    """
    if not d.spec.chain_form:
        raise ValueError("chain_gram_blocks needs a chain network")
    l = d.depth
    mats = [d.blocks[(j, j)].dense() for j in range(1, l + 1)]
    c2 = [np.sum(m * m, axis=0) for m in mats]
    n = [np.sqrt(c2[j] + (1.0 if j < l - 1 else 0.0)) for j in range(l)]
    out = {}
    for j in range(l):
        inner = mats[j].T @ mats[j]
        if j < l - 1:
            inner = inner + np.eye(inner.shape[0])
        out[(j + 1, j + 1)] = inner / np.outer(n[j], n[j])
        if j < l - 1:
            out[(j + 1, j + 2)] = -mats[j + 1] / np.outer(n[j], n[j + 1])
    return out


# ---------------------------------------------------------------------------
# structural nonzero count


@lru_cache(maxsize=512)
def _structural_counts(spec: ArchSpec) -> tuple[int, dict]:
    _, col_dims, blocks = block_structure(spec)
    rows_of: dict[int, dict[int, Block]] = {}
    for (i, j), b in blocks.items():
        if j > 0:
            rows_of.setdefault(j, {})[i] = b
    l = len(col_dims)
    total, per_block = 0, {}
    for j in range(1, l + 1):
        for jp in range(j, l + 1):
            shared = sorted(set(rows_of[j]) & set(rows_of[jp]))
            if not shared:
                continue
            acc = None
            for i in shared:
                prod = (rows_of[j][i].pattern().T @ rows_of[jp][i].pattern()).astype(bool)
                acc = prod if acc is None else (acc + prod).astype(bool)
            nnz = int(acc.nnz)
            if j == jp:
                nnz -= int(acc.diagonal().astype(bool).sum())
                total += nnz
            else:
                total += 2 * nnz
            per_block[(j, jp)] = nnz
    return total, per_block


def count_offdiag(spec: ArchSpec) -> int:
    """Number of structurally nonzero off-diagonal Gram entries, both triangles."""
    return _structural_counts(spec)[0]


def structural_pattern(spec: ArchSpec) -> np.ndarray:
    """Boolean generic-parameter nonzero pattern of the full Gram matrix."""
    _, col_dims, blocks = block_structure(spec)
    off = np.concatenate([[0], np.cumsum(col_dims)])
    n = off[-1]
    P = np.zeros((n, n), dtype=bool)
    rows_of: dict[int, dict[int, Block]] = {}
    for (i, j), b in blocks.items():
        if j > 0:
            rows_of.setdefault(j, {})[i] = b
    for j in range(1, len(col_dims) + 1):
        for jp in range(j, len(col_dims) + 1):
            for i in set(rows_of[j]) & set(rows_of[jp]):
                prod = (rows_of[j][i].pattern().T @ rows_of[jp][i].pattern()).toarray() != 0
                P[off[j - 1]:off[j], off[jp - 1]:off[jp]] |= prod
                P[off[jp - 1]:off[jp], off[j - 1]:off[j]] |= prod.T
    return P
