"""Deep frame potential, mutual coherence and the analytic potential gradient."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .dictionary import BlockDictionary, load_params, materialize, param_slices
from .gram import GramBlocks, ZeroColumnError, column_norms, count_offdiag, gram_blocks


@dataclass(frozen=True)
class PotentialReport:
    frame_potential: float
    coherence: float
    one_sided_coherence: float
    grad_norm: float
    n_offdiag: int
    atom_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _offdiag_sq_rows(G: GramBlocks) -> list[np.ndarray]:
    """Per-atom sums of squared off-diagonal Gram entries."""
    rows = [np.zeros(n.size) for n in G.col_norms]
    for (j, jp), g in G.blocks.items():
        g2 = g * g
        rows[j - 1] += g2.sum(axis=1)
        if j != jp:
            rows[jp - 1] += g2.sum(axis=0)
    for r in rows:
        r -= 1.0  # unit diagonal
    return rows


def frame_potential(d: BlockDictionary | GramBlocks) -> float:
    """Mean squared structural off-diagonal entry of the normalized Gram matrix.

    Returns exactly 0 when the architecture has no structural off-diagonal
    entries.
    """
    G = d if isinstance(d, GramBlocks) else gram_blocks(d)
    if G.n_offdiag == 0:
        return 0.0
    total = 0.0
    for (j, jp), g in sorted(G.blocks.items()):
        if j == jp:
            # square only off-diagonal entries; subtracting the unit diagonal loses digits
            off = g.copy()
            np.fill_diagonal(off, 0.0)
            total += float(np.sum(off * off))
        else:
            total += 2.0 * float(np.sum(g * g))
    return total / G.n_offdiag


def mutual_coherence(d: BlockDictionary | GramBlocks, one_sided: bool = False) -> float:
    """Largest off-diagonal Gram entry, in magnitude or (one-sided) signed and clamped at 0."""
    G = d if isinstance(d, GramBlocks) else gram_blocks(d)
    best = 0.0
    for (j, jp), g in G.blocks.items():
        vals = g.copy()
        if j == jp:
            np.fill_diagonal(vals, 0.0)
        m = float(vals.max()) if one_sided else float(np.abs(vals).max())
        best = max(best, m)
    return best


def _apply(block, mat: np.ndarray) -> np.ndarray:
    if block.kind in ("identity", "neg_identity"):
        return block.sign * mat
    op = block.operator()
    out = op @ mat
    return out.toarray() if sp.issparse(out) else out


def potential_and_gradient(d: BlockDictionary) -> tuple[float, np.ndarray, GramBlocks]:
    """Frame potential and its gradient, aligned with :func:`flatten_params`.

    With ``Q = (G - I) - diag(sum_b G_ab^2 for b != a)`` the gradient with
    respect to the full dictionary is ``(4/N) B N^-1 Q N^-1``; each learned
    block keeps its own slice (pulled back onto filters for conv blocks).
    """
    G = gram_blocks(d)
    slices = param_slices(d)
    grad = np.zeros(d.n_params)
    if G.n_offdiag == 0:
        return 0.0, grad, G
    N = G.n_offdiag
    inv = [1.0 / n for n in G.col_norms]
    r = _offdiag_sq_rows(G)
    value = float(sum(x.sum() for x in r)) / N
    scale = 4.0 / N

    def q_block(jp: int, j: int) -> np.ndarray | None:
        g = G.block(jp, j)
        if g is None:
            return None
        if jp == j:
            g = g - np.diag(1.0 + r[j - 1])
        return inv[jp - 1][:, None] * g

    for (i, j), b in sorted(d.blocks.items()):
        if not b.learned or j == 0:
            continue
        acc = None
        for jp, bp in d.row(i):
            if jp == 0:
                continue
            q = q_block(jp, j)
            if q is None:
                continue
            term = _apply(bp, q)
            acc = term if acc is None else acc + term
        if acc is None:
            continue
        block_grad = scale * acc * inv[j - 1][None, :]
        grad[slices[(i, j)]] = b.param_grad(block_grad).ravel()
    return value, grad, G


class DenseEvaluator:
    """Potential and gradient of a fixed architecture as a function of the parameter vector.

    The dictionary is expanded once into a template plus a scatter map from
    parameters to matrix entries, so each evaluation is a handful of dense
    products.  Only worthwhile when the expanded matrix fits in memory.
    """

    def __init__(self, d: BlockDictionary, cap: int = 4 * 10**6):
        self.template = materialize(load_params(d, np.zeros(d.n_params)), cap=cap)
        self.n_params = d.n_params
        self.n_offdiag = count_offdiag(d.spec)
        self.col_offsets = d.col_offsets
        n_atoms = self.template.shape[1]
        ro, co = d.row_offsets, d.col_offsets
        flat, pidx = [], []
        for key, s in param_slices(d).items():
            i, j = key
            if j == 0:
                continue
            b = d.blocks[key]
            if b.kind == "learned_dense":
                rr, cc = np.indices(b.payload.shape)
                rr, cc, p = rr.ravel(), cc.ravel(), np.arange(s.start, s.stop)
            else:
                rr, cc = (b.conv.cols, b.conv.rows) if b.transposed else (b.conv.rows, b.conv.cols)
                p = s.start + b.conv.widx
            flat.append((ro[i - 1] + rr) * n_atoms + co[j - 1] + cc)
            pidx.append(p)
        self.flat = np.concatenate(flat) if flat else np.zeros(0, dtype=int)
        self.pidx = np.concatenate(pidx) if pidx else np.zeros(0, dtype=int)

    def matrix(self, v: np.ndarray) -> np.ndarray:
        B = self.template.ravel() + np.bincount(self.flat, weights=v[self.pidx],
                                                minlength=self.template.size)
        return B.reshape(self.template.shape)

    def column_norms(self, v: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.matrix(v), axis=0)

    def __call__(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        B = self.matrix(v)
        n = np.linalg.norm(B, axis=0)
        self.last_norms = n
        if self.n_offdiag == 0:
            return 0.0, np.zeros(self.n_params)
        zero = np.flatnonzero(n == 0.0)
        if zero.size:
            layer = int(np.searchsorted(self.col_offsets, zero[0], side="right"))
            raise ZeroColumnError(layer, int(zero[0] - self.col_offsets[layer - 1]))
        D = B / n
        G = D.T @ D
        np.fill_diagonal(G, 0.0)
        r = np.einsum("ij,ij->i", G, G)
        scale = 4.0 / self.n_offdiag
        gB = scale * (D @ G - D * r) / n
        grad = np.bincount(self.pidx, weights=gB.ravel()[self.flat], minlength=self.n_params)
        return float(r.sum()) / self.n_offdiag, grad


def potential_gradient(d: BlockDictionary) -> np.ndarray:
    return potential_and_gradient(d)[1]


def potential_report(d: BlockDictionary) -> PotentialReport:
    value, grad, G = potential_and_gradient(d)
    return PotentialReport(
        frame_potential=value,
        coherence=mutual_coherence(G),
        one_sided_coherence=mutual_coherence(G, one_sided=True),
        grad_norm=float(np.linalg.norm(grad)),
        n_offdiag=G.n_offdiag,
        atom_count=G.trace,
    )


def shallow_frame_potential(B: np.ndarray) -> float:
    """Classical averaged frame potential ``(||G||_F^2 - k) / (k (k - 1))`` of one dense dictionary."""
    Bn = B / np.linalg.norm(B, axis=0)
    G = Bn.T @ Bn
    k = B.shape[1]
    if k < 2:
        return 0.0
    return float((np.sum(G * G) - k) / (k * (k - 1)))


__all__ = [
    "DenseEvaluator",
    "PotentialReport",
    "column_norms",
    "frame_potential",
    "mutual_coherence",
    "potential_and_gradient",
    "potential_gradient",
    "potential_report",
    "shallow_frame_potential",
]
