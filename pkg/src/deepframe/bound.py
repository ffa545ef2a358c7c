"""Closed-form reference bounds: Welch bound and the chain-network lower bound.

For a chain network write ``c_jn`` for the norm of column ``n`` of ``B_j``.
The matrix ``H = B~ B~^T`` has the same Frobenius norm as ``G``; its
off-diagonal blocks have exact norms and its diagonal blocks are bounded by
Cauchy-Schwarz on their traces.  With ``u_jn = c_jn^2 / (c_jn^2 + 1)`` and
``S_j = sum_n u_jn``::

    ||H_{j,j+1}||^2  =  sum_n u_jn (1 - u_jn)
    ||H_jj||^2      >=  (S_j + k_{j-1} - S_{j-1})^2 / k_{j-1}

where ``S_0 = k_0`` and ``S_l = k_l`` (the last layer is normalized by its
own column norms).  The frame potential is at least
``(||H||^2 - sum_j k_j) / N(G)`` minimized over all admissible ``c``.

For fixed layer sums ``S_j`` the cross terms are concave in the individual
``u_jn`` and are smallest when all but one unit sits at 0 or 1, leaving
``h(S_j) = frac(S_j) (1 - frac(S_j))``.  The per-unit bound therefore
minimizes a convex quadratic in ``S`` plus ``2 sum_j h(S_j)`` over the box
``0 <= S_j <= k_j``; :func:`chain_lower_bound` solves this to a certified
tolerance by spatial branch and bound.
"""

from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .archspec import chain_spec
from .gram import count_offdiag

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def welch_bound(d: int, k: int) -> float:
    """Smallest possible coherence of ``k`` unit vectors in ``R^d``."""
    if d < 1 or k < d:
        raise ValueError(f"welch_bound needs k >= d >= 1, got d={d}, k={k}")
    if k == 1:
        return 0.0
    return math.sqrt((k - d) / (d * (k - 1)))


def _u(c):
    c2 = np.square(np.asarray(c, dtype=float))
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(c2), 1.0, c2 / (c2 + 1.0))


def chain_h_cross_norm(k_j: int, c_j) -> float:
    """Exact ``||H_{j,j+1}||_F^2``; ``c_j`` is one scalar for the layer or one value per unit."""
    c = np.broadcast_to(np.asarray(c_j, dtype=float), (k_j,))
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.where(np.isinf(c), 0.0, (c / (c * c + 1.0)) ** 2)
    return float(np.sum(terms))


def chain_h_diag_bound(widths: Sequence[int], c: Sequence, j: int) -> float:
    """Cauchy-Schwarz lower bound on ``||H_jj||_F^2`` (``j`` is 1-based).

    ``c[j-1]`` holds the column magnitudes of layer ``j`` (scalar or per
    unit).  The last layer is normalized by its own norms, so its
    contribution to the trace is ``k_l`` whatever ``c_l`` is.
    """
    k = list(widths)
    l = len(k) - 1
    if not 1 <= j <= l:
        raise IndexError(f"layer index {j} outside 1..{l}")
    if j == l:
        own = float(k[j])
    else:
        own = float(np.sum(np.broadcast_to(_u(c[j - 1]), (k[j],))))
    prev = 0.0
    if j > 1:
        prev = float(np.sum(np.broadcast_to(1.0 - _u(c[j - 2]), (k[j - 1],))))
    return (own + prev) ** 2 / k[j - 1]


def chain_h_norm_bound(widths: Sequence[int], c: Sequence) -> float:
    """Assembled lower bound on ``||G||_F^2 = ||H||_F^2`` at magnitudes ``c``."""
    k = list(widths)
    l = len(k) - 1
    total = sum(chain_h_diag_bound(k, c, j) for j in range(1, l + 1))
    total += 2.0 * sum(chain_h_cross_norm(k[j], c[j - 1]) for j in range(1, l))
    return total


def chain_bound_value(widths: Sequence[int], c: Sequence) -> float:
    """Frame-potential lower bound at fixed magnitudes ``c`` (unclamped)."""
    k = list(widths)
    n = count_offdiag(chain_spec(k))
    if n == 0:
        return 0.0
    return (chain_h_norm_bound(k, c) - sum(k[1:])) / n


# ---------------------------------------------------------------------------
# reduced objectives


def _frac_term(S: np.ndarray) -> np.ndarray:
    f = S - np.floor(S)
    return f * (1.0 - f)


def sum_objective(widths: Sequence[int], S) -> np.ndarray:
    """``||H||^2`` lower bound minimized over units with fixed layer sums ``S`` (vectorized).

    ``S`` has shape ``(..., l - 1)``.
    """
    k = np.asarray(widths, dtype=float)
    l = len(k) - 1
    S = np.asarray(S, dtype=float)
    full = [np.full(S.shape[:-1], k[0])] + [S[..., i] for i in range(l - 1)] + [
        np.full(S.shape[:-1], k[l])]
    total = np.zeros(S.shape[:-1])
    for j in range(1, l + 1):
        total = total + (full[j] + k[j - 1] - full[j - 1]) ** 2 / k[j - 1]
    if l > 1:
        total = total + 2.0 * np.sum(_frac_term(S), axis=-1)
    return total


def uniform_objective(widths: Sequence[int], u) -> np.ndarray:
    """``||H||^2`` bound with one magnitude per layer, ``u_j = c_j^2 / (c_j^2 + 1)``."""
    k = np.asarray(widths, dtype=float)
    l = len(k) - 1
    u = np.asarray(u, dtype=float)
    full = [np.ones(u.shape[:-1])] + [u[..., i] for i in range(l - 1)] + [np.ones(u.shape[:-1])]
    total = np.zeros(u.shape[:-1])
    for j in range(1, l + 1):
        total = total + (k[j] * full[j] + k[j - 1] * (1.0 - full[j - 1])) ** 2 / k[j - 1]
    for j in range(1, l):
        total = total + 2.0 * k[j] * full[j] * (1.0 - full[j])
    return total


@dataclass
class ChainBound:
    bound: float
    raw: float
    c_star: list
    u_star: list
    iterations: int
    converged: bool
    mode: str
    gap: float = 0.0
    n_offdiag: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc(x):
            if isinstance(x, list):
                return [enc(v) for v in x]
            return None if math.isinf(x) else float(x)

        return {"bound": self.bound, "c_star": enc(self.c_star), "iterations": self.iterations,
                "converged": self.converged, "mode": self.mode, "gap": self.gap,
                "raw": self.raw}


def _c_from_u(u: float) -> float:
    if u >= 1.0:
        return math.inf
    return math.sqrt(max(u, 0.0) / (1.0 - u))


def _units_from_sum(S: float, k: int) -> list[float]:
    """Per-unit magnitudes attaining the minimal cross term for layer sum ``S``."""
    n_full = min(int(math.floor(S)), k)
    f = S - n_full
    u = [1.0] * n_full
    if n_full < k:
        u.append(f)
        u += [0.0] * (k - n_full - 1)
    return [_c_from_u(x) for x in u[:k]]


# ---------------------------------------------------------------------------
# per-unit bound: spatial branch and bound


class _BoxQP:
    """Minimizes ``||A S - r||^2 + g.S`` over a box via bounded least squares."""

    def __init__(self, widths: Sequence[int]):
        k = [float(v) for v in widths]
        l = len(k) - 1
        m = l - 1
        A = np.zeros((l, m))
        r = np.zeros(l)
        for j in range(1, l + 1):
            s = 1.0 / math.sqrt(k[j - 1])
            const = k[j - 1]
            if j <= m:
                A[j - 1, j - 1] += s
            else:
                const += k[l]
            if j - 1 >= 1:
                A[j - 1, j - 2] -= s
            else:
                const -= k[0]
            r[j - 1] = -const * s
        self.A, self.r = A, r
        self.AtA_inv = np.linalg.inv(A.T @ A)

    def solve(self, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        shift = 0.5 * self.A @ (self.AtA_inv @ g)
        res = lsq_linear(self.A, self.r - shift, bounds=(lo, hi), method="bvls", tol=1e-15)
        return np.clip(res.x, lo, hi)

    def quad(self, S: np.ndarray) -> float:
        e = self.A @ S - self.r
        return float(e @ e)


def _relaxation(lo: np.ndarray, hi: np.ndarray):
    """Linear under-estimator ``a.S + b`` of ``sum_j h(S_j)`` on the box."""
    a = np.zeros(lo.size)
    b = 0.0
    for j in range(lo.size):
        n = math.floor(lo[j])
        if hi[j] <= n + 1.0:
            hl = (lo[j] - n) * (n + 1.0 - lo[j])
            hh = (hi[j] - n) * (n + 1.0 - hi[j])
            if hi[j] > lo[j]:
                slope = (hh - hl) / (hi[j] - lo[j])
            else:
                slope = 0.0
            a[j] = slope
            b += hl - slope * lo[j]
    return a, b


def _per_unit_bnb(widths: Sequence[int], tol: float, max_nodes: int):
    k = list(widths)
    m = len(k) - 2
    qp = _BoxQP(k)

    def true_val(S):
        return qp.quad(S) + 2.0 * float(np.sum(_frac_term(S)))

    def node(lo, hi):
        a, b = _relaxation(lo, hi)
        S = qp.solve(2.0 * a, lo, hi)
        lb = qp.quad(S) + 2.0 * (float(a @ S) + b)
        return lb, S

    lo0 = np.zeros(m)
    hi0 = np.array(k[1:-1], dtype=float)
    lb, S = node(lo0, hi0)
    best_S, best = S, true_val(S)
    # integer and rounded candidates often beat the relaxed optimum
    for cand in (np.round(S), np.floor(S), np.minimum(np.ceil(S), hi0)):
        v = true_val(cand)
        if v < best:
            best, best_S = v, cand
    heap = [(lb, 0, lo0, hi0, S)]
    counter, nodes = 1, 1
    global_lb = lb
    while heap:
        lb, _, lo, hi, S = heapq.heappop(heap)
        global_lb = lb
        if best - lb <= tol:
            break
        if nodes >= max_nodes:
            break
        # branch on the coordinate with the largest relaxation gap
        gaps = []
        for j in range(m):
            n = math.floor(lo[j])
            if hi[j] > n + 1.0:
                gaps.append((math.inf, j))
            else:
                a, b = _relaxation(lo[j:j + 1], hi[j:j + 1])
                gaps.append((float(_frac_term(S[j:j + 1])[0] - (a[0] * S[j] + b)), j))
        _, j = max(gaps)
        n = math.floor(lo[j])
        if hi[j] > n + 1.0:
            split = min(max(round(S[j]), math.floor(lo[j]) + 1), math.ceil(hi[j]) - 1)
            if not lo[j] < split < hi[j]:
                split = math.floor(lo[j]) + 1
        else:
            split = S[j]
            width = hi[j] - lo[j]
            if not lo[j] + 0.05 * width < split < hi[j] - 0.05 * width:
                split = 0.5 * (lo[j] + hi[j])
        for a_lo, a_hi in ((lo[j], split), (split, hi[j])):
            clo, chi = lo.copy(), hi.copy()
            clo[j], chi[j] = a_lo, a_hi
            clb, cS = node(clo, chi)
            nodes += 1
            v = true_val(cS)
            if v < best:
                best, best_S = v, cS
            if clb < best - tol:
                heapq.heappush(heap, (clb, counter, clo, chi, cS))
                counter += 1
    else:
        global_lb = best
    converged = best - global_lb <= tol
    return best, best_S, global_lb, nodes, converged, best - global_lb


def _golden(f, a: float, b: float, tol: float) -> tuple[float, float]:
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    x = 0.5 * (a + b)
    return x, f(x)


def _uniform_coordinate_descent(widths: Sequence[int], tol: float, max_sweeps: int = 500):
    k = list(widths)
    m = len(k) - 2
    best_u, best, iters = None, math.inf, 0
    starts = [np.full(m, 0.5)]
    starts += [np.array(v, dtype=float) for v in itertools.islice(
        itertools.product((0.0, 1.0), repeat=m), 64)]
    for u0 in starts:
        u = u0.copy()
        val = float(uniform_objective(k, u))
        for _ in range(max_sweeps):
            iters += 1
            prev = val
            for j in range(m):
                def f(x, j=j):
                    w = u.copy()
                    w[j] = x
                    return float(uniform_objective(k, w))
                x, fx = _golden(f, 0.0, 1.0, 1e-12)
                for cand in (0.0, 1.0):
                    fc = f(cand)
                    if fc < fx:
                        x, fx = cand, fc
                if fx <= val:
                    u[j], val = x, fx
            if prev - val <= tol:
                break
        if val < best:
            best, best_u = val, u.copy()
    return best, best_u, iters


def chain_lower_bound(widths: Sequence[int], mode: str = "per_unit", tol: float = 1e-10,
                      max_nodes: int = 200_000) -> ChainBound:
    """Lower bound on the minimum frame potential of a dense chain network.

    ``mode="per_unit"`` (the default) minimizes over every column magnitude
    and is a valid bound.  ``mode="uniform"`` restricts to one magnitude per
    layer; it is kept for comparison and is *not* a lower bound in general.
    """
    k = [int(v) for v in widths]
    if len(k) < 2 or min(k) < 1:
        raise ValueError(f"need at least two positive widths, got {widths}")
    if sum(k[1:]) <= sum(k[:-1]):
        warnings.warn(f"widths {k} do not give an overcomplete dictionary",
                      stacklevel=2)
    n = count_offdiag(chain_spec(k))
    l = len(k) - 1
    notes = []
    if n == 0:
        return ChainBound(0.0, 0.0, [[1.0] * k[1]], [], 0, True, mode, 0.0, 0)
    if l == 1:
        raw = (k[1] ** 2 / k[0] - k[1]) / n
        return ChainBound(max(raw, 0.0), raw, [[1.0] * k[1]], [], 0, True, mode, 0.0, n)
    if mode == "per_unit":
        best, S, lb, iters, converged, gap = _per_unit_bnb(k, tol * n, max_nodes)
        if not converged:
            notes.append("node cap reached; reporting the certified lower bound")
            best = lb
        raw = (best - sum(k[1:])) / n
        c_star = [_units_from_sum(float(S[j - 1]), k[j]) for j in range(1, l)] + [[1.0] * k[l]]
        u_star = [float(s) for s in S]
        gap /= n
    elif mode == "uniform":
        best, u, iters = _uniform_coordinate_descent(k, tol * n)
        converged, gap = True, 0.0
        raw = (best - sum(k[1:])) / n
        c_star = [[_c_from_u(float(x))] * k[j + 1] for j, x in enumerate(u)] + [[1.0] * k[l]]
        u_star = [float(x) for x in u]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ChainBound(max(raw, 0.0), raw, c_star, u_star, iters, converged, mode, gap, n, notes)


def chain_bound_grid_oracle(widths: Sequence[int], mode: str = "per_unit", points: int = 8,
                            zoom_rounds: int = 60, keep: int = 24) -> float:
    """Brute-force grid search with zooming refinement; independent of the optimizer above.

    The coarse grid has ``points`` samples per unit of each layer sum (per
    unit) or of ``u`` (uniform).  Returns the unclamped bound.
    """
    k = [int(v) for v in widths]
    l = len(k) - 1
    n = count_offdiag(chain_spec(k))
    if n == 0:
        return 0.0
    if l == 1:
        return (k[1] ** 2 / k[0] - k[1]) / n
    if mode == "per_unit":
        hi = np.array(k[1:-1], dtype=float)
        obj = lambda X: sum_objective(k, X)  # noqa: E731
        axes = [np.linspace(0.0, h, int(h) * points + 1) for h in hi]
    else:
        hi = np.ones(l - 1)
        obj = lambda X: uniform_objective(k, X)  # noqa: E731
        axes = [np.linspace(0.0, 1.0, 8 * points + 1) for _ in hi]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, l - 1)
    vals = obj(mesh)
    order = np.argsort(vals)[:keep]
    step = np.array([a[1] - a[0] for a in axes])
    best = float(vals[order[0]])
    offsets = np.stack(np.meshgrid(*([np.linspace(-1.0, 1.0, 9)] * (l - 1)), indexing="ij"),
                       axis=-1).reshape(-1, l - 1)
    for idx in order:
        x, h = mesh[idx].copy(), step.copy()
        fx = float(vals[idx])
        for _ in range(zoom_rounds):
            cand = np.clip(x + offsets * h, 0.0, hi)
            cv = obj(cand)
            i = int(np.argmin(cv))
            if cv[i] < fx:
                x, fx = cand[i], float(cv[i])
            h = h / 2.0
        best = min(best, fx)
    return (best - sum(k[1:])) / n
