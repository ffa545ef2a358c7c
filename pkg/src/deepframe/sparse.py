"""Sparse-coding backbone behind the induced dictionaries.

The feed-forward pass of a network is read as one proximal step per layer
on the nonnegative sparse-coding problem

    min_{w >= 0}  1/2 ||B w - x_tilde||^2 + sum_j lambda_j ||w_j||_1

whose dictionary ``B`` is the architecture-induced block matrix.  This
module provides that pass, a plain proximal-gradient solver for the global
problem, and the coherence thresholds that say when sparse codes are unique
and stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dictionary import BlockDictionary, input_operator, materialize
from .potential import mutual_coherence


def nonneg_soft_threshold(v, lam):
    """Proximal operator of ``lam * ||w||_1`` restricted to ``w >= 0``.

    Parameters
    ----------
    v : array_like
        Input vector.
    lam : float or array_like
        Nonnegative threshold, scalar or broadcastable to ``v``.

    Returns
    -------
    ndarray
        ``max(v - lam, 0)``, i.e. a ReLU with bias ``-lam``.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("threshold must be nonnegative")
    return np.maximum(np.asarray(v, dtype=float) - lam, 0.0)


@dataclass
class SparseProblem:
    """Global sparse-coding problem for one input and one dictionary.

    The target ``x_tilde`` is the input padded with zeros, minus the
    contribution of any data-side input edges.
    """

    dictionary: BlockDictionary
    x: np.ndarray
    lambdas: tuple[float, ...] | None = None
    B: np.ndarray = field(init=False, repr=False)
    target: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.dictionary
        self.x = np.asarray(self.x, dtype=float).ravel()
        if self.x.size != d.spec.widths[0]:
            raise ValueError(f"input has length {self.x.size}, expected {d.spec.widths[0]}")
        lam = d.lam if self.lambdas is None else self.lambdas
        if np.isscalar(lam):
            lam = (float(lam),) * d.depth
        lam = tuple(float(v) for v in lam)
        if len(lam) != d.depth or any(v < 0 for v in lam):
            raise ValueError(f"need {d.depth} nonnegative lambdas, got {lam}")
        self.lambdas = lam
        self.B = materialize(d)
        self.target = input_operator(d) @ self.x

    @property
    def lambda_vector(self) -> np.ndarray:
        return np.repeat(self.lambdas, self.dictionary.col_dims)

    def split(self, w: np.ndarray) -> list[np.ndarray]:
        return np.split(np.asarray(w), self.dictionary.col_offsets[1:-1])

    def objective(self, w: np.ndarray) -> float:
        r = self.B @ w - self.target
        return 0.5 * float(r @ r) + float(self.lambda_vector @ np.abs(w))


def forward_pass(d: BlockDictionary, x, lambdas=None) -> list[np.ndarray]:
    """Layer activations of the feed-forward network behind ``d``.

    Each layer takes one proximal step on its own row block,
    ``w_j = prox_j(X_jj^T (t_j - sum_{k<j} X_jk w_k))``.  On a chain this is
    ``w_j = prox_j(B_j^T w_{j-1})``; on a residual network the skip block adds
    ``w_{j-1}`` inside layer ``j+1``; a dense network sums over all earlier
    layers.
    """
    prob = SparseProblem(d, x, lambdas)
    t = np.split(prob.target, d.row_offsets[1:-1])
    acts: list[np.ndarray] = []
    for j in range(1, d.depth + 1):
        r = t[j - 1].copy()
        for k, b in d.row(j):
            if 1 <= k < j:
                r -= b.dense() @ acts[k - 1]
        acts.append(nonneg_soft_threshold(d.blocks[(j, j)].dense().T @ r, prob.lambdas[j - 1]))
    return acts


def spectral_norm_sq(B: np.ndarray, tol: float = 1e-8, max_iters: int = 10000) -> float:
    """Largest eigenvalue of ``B^T B`` by power iteration from a fixed start."""
    n = B.shape[1]
    if n == 0 or not np.any(B):
        return 0.0
    v = np.ones(n) / math.sqrt(n)
    v = v + np.arange(n) / (n * n)  # break symmetry with structured dictionaries
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        u = B.T @ (B @ v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return lam
        v = u / new
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    return lam


@dataclass
class DCAResult:
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool
    step: float
    history: list[float] = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.w, self.objective))


def prox_gradient(B: np.ndarray, y: np.ndarray, lam_vec: np.ndarray, w0: np.ndarray | None = None,
                  max_iters: int = 5000, tol: float = 1e-10, accelerate: bool = False,
                  step: float | None = None) -> DCAResult:
    """Nonnegative lasso ``min_{w>=0} 1/2||Bw - y||^2 + lam_vec . w`` by proximal gradient.

    The step is ``1/L`` with ``L`` the power-iteration estimate of
    ``||B||_2^2``, shrunk by a relative ``1e-6`` so an estimate slightly
    below the true value still gives a monotone descent.  With
    ``accelerate=True`` a FISTA momentum term is added and monotonicity is
    no longer guaranteed.
    """
    n = B.shape[1]
    if step is None:
        L = spectral_norm_sq(B)
        step = 1.0 / (L * (1.0 + 1e-6)) if L > 0 else 1.0
    w = np.zeros(n) if w0 is None else np.maximum(np.asarray(w0, dtype=float), 0.0)

    def obj(v):
        r = B @ v - y
        return 0.5 * float(r @ r) + float(lam_vec @ v)

    f = obj(w)
    history = [f]
    z, t_k = w.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        base = z if accelerate else w
        w_new = np.maximum(base - step * (B.T @ (B @ base - y)) - step * lam_vec, 0.0)
        f_new = obj(w_new)
        if not math.isfinite(f_new):
            raise FloatingPointError(f"objective became non-finite at iteration {it}")
        if accelerate:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
            z = w_new + ((t_k - 1.0) / t_next) * (w_new - w)
            t_k = t_next
        decrease = f - f_new
        w, f = w_new, f_new
        history.append(f)
        if abs(decrease) <= tol * max(abs(f), 1e-300):
            converged = True
            break
    return DCAResult(w, f, it, converged, step, history)


def solve_dca(problem: SparseProblem, max_iters: int = 5000, tol: float = 1e-10,
              init: str | np.ndarray = "forward", accelerate: bool = False) -> DCAResult:
    """Solve the global sparse-coding problem of ``problem``.

    Parameters
    ----------
    problem : SparseProblem
    max_iters : int
    tol : float
        Stop at the first iterate whose relative objective decrease is
        below ``tol``.
    init : {"forward", "zeros"} or ndarray
        Warm start.  The default starts from the feed-forward activations,
        so the returned objective never exceeds theirs.
    accelerate : bool
        Add FISTA momentum (off by default; the plain method is monotone).

    Returns
    -------
    DCAResult
        Unpacks as ``(w, objective)``.
    """
    if isinstance(init, str):
        if init == "forward":
            w0 = np.concatenate(forward_pass(problem.dictionary, problem.x, problem.lambdas))
        elif init == "zeros":
            w0 = np.zeros(problem.B.shape[1])
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        w0 = np.asarray(init, dtype=float)
    return prox_gradient(problem.B, problem.target, problem.lambda_vector, w0,
                         max_iters=max_iters, tol=tol, accelerate=accelerate)


# ---------------------------------------------------------------------------
# coherence thresholds


def uniqueness_threshold(mu: float) -> float:
    """Sparsity below which a representation is the unique sparsest one, ``(1 + 1/mu) / 2``."""
    if mu < 0 or mu > 1:
        raise ValueError("coherence must lie in [0, 1]")
    return math.inf if mu == 0 else 0.5 * (1.0 + 1.0 / mu)


def stability_cap(mu: float) -> float:
    """Sparsity up to which the lasso is stable under bounded noise, ``(1 + 1/mu) / 4``."""
    if mu < 0 or mu > 1:
        raise ValueError("coherence must lie in [0, 1]")
    return math.inf if mu == 0 else 0.25 * (1.0 + 1.0 / mu)


def robustness_denominator(mu: float, s: int) -> float:
    """``1 - mu (4 s - 1)``; a nonpositive value means the error bound is vacuous."""
    if s < 1:
        raise ValueError("sparsity must be >= 1")
    return 1.0 - mu * (4 * s - 1)


# ---------------------------------------------------------------------------
# invariant suite


def _planted(rng, n: int, s: int) -> np.ndarray:
    w = np.zeros(n)
    idx = rng.choice(n, size=s, replace=False)
    w[idx] = rng.uniform(1.0, 2.0, size=s)
    return w


def monotone_check(d: BlockDictionary, trials: int = 100, seed: int = 0,
                   max_iters: int = 500) -> dict:
    """Solver monotonicity and the solved-versus-forward ordering on random inputs."""
    rng = np.random.default_rng(seed)
    monotone_violations = ordering_violations = 0
    worst_rise = 0.0
    for _ in range(trials):
        x = rng.standard_normal(d.spec.widths[0])
        lam = tuple(rng.uniform(0.0, 0.5, size=d.depth))
        prob = SparseProblem(d, x, lam)
        fwd = prob.objective(np.concatenate(forward_pass(d, x, lam)))
        res = solve_dca(prob, max_iters=max_iters, tol=1e-14)
        rises = np.diff(res.history)
        scale = max(abs(res.history[0]), 1.0)
        worst_rise = max(worst_rise, float(rises.max(initial=0.0)) / scale)
        if np.any(rises > 1e-12 * scale):
            monotone_violations += 1
        if res.objective > fwd + 1e-12 * max(abs(fwd), 1.0):
            ordering_violations += 1
    return {"trials": trials, "monotone_violations": monotone_violations,
            "ordering_violations": ordering_violations, "worst_relative_rise": worst_rise,
            "passed": monotone_violations == 0 and ordering_violations == 0}


def orthonormal_check(d: int = 6, k: int = 4, lam: float = 0.1, seed: int = 0) -> dict:
    """Single orthonormal layer: the solver must match the closed-form prox."""
    from .archspec import chain_spec
    from .dictionary import build_dictionary, with_blocks

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    dic = with_blocks(build_dictionary(chain_spec((d, k), lam=lam), init="zeros"), {(1, 1): Q})
    x = rng.standard_normal(d)
    res = solve_dca(SparseProblem(dic, x), init="zeros", tol=1e-15)
    err = float(np.max(np.abs(res.w - nonneg_soft_threshold(Q.T @ x, lam))))
    return {"max_abs_error": err, "passed": err <= 1e-10}


def _single_layer(B: np.ndarray, lam: float):
    from .archspec import chain_spec
    from .dictionary import build_dictionary, with_blocks

    spec = chain_spec(B.shape, lam=lam)
    return with_blocks(build_dictionary(spec, init="zeros"), {(1, 1): B})


def stability_check(B: np.ndarray, eps_grid=(1e-3, 3e-3, 1e-2, 3e-2, 1e-1), trials: int = 20,
                    seed: int = 0) -> dict:
    """Error growth of the lasso under noise for planted codes within the stability cap.

    The penalty is tied to the noise level (``lambda = eps``), so a stable
    solver shows error roughly proportional to ``eps``.  The check fits the
    log-log slope of the median error and passes when it is at most 1.2.
    """
    Bn = B / np.linalg.norm(B, axis=0)
    mu = float(np.max(np.abs(Bn.T @ Bn - np.eye(Bn.shape[1]))))
    cap = stability_cap(mu)
    s = int(min(math.floor(cap) if math.isfinite(cap) else Bn.shape[1], Bn.shape[1]))
    if s < 1:
        return {"coherence": mu, "sparsity": 0, "skipped": True, "passed": True}
    rng = np.random.default_rng(seed)
    med = []
    for eps in eps_grid:
        errs = []
        for _ in range(trials):
            w0 = _planted(rng, Bn.shape[1], s)
            z = rng.standard_normal(Bn.shape[0])
            y = Bn @ w0 + eps * z / np.linalg.norm(z)
            res = prox_gradient(Bn, y, np.full(Bn.shape[1], eps), max_iters=20000, tol=1e-13)
            errs.append(np.linalg.norm(res.w - w0))
        med.append(float(np.median(errs)))
    slope = float(np.polyfit(np.log(eps_grid), np.log(np.maximum(med, 1e-300)), 1)[0])
    return {"coherence": mu, "sparsity": s, "eps": list(eps_grid), "median_error": med,
            "loglog_slope": slope, "skipped": False, "passed": slope <= 1.2}


def support_recovery_check(B: np.ndarray, trials: int = 100, lam: float = 1e-3,
                           seed: int = 0, rate: float = 0.95) -> dict:
    """Noiseless recovery of planted supports below the uniqueness threshold."""
    Bn = B / np.linalg.norm(B, axis=0)
    mu = float(np.max(np.abs(Bn.T @ Bn - np.eye(Bn.shape[1]))))
    thr = uniqueness_threshold(mu)
    s = int(min(math.ceil(thr) - 1 if math.isfinite(thr) else Bn.shape[1], Bn.shape[1]))
    if s < 1:
        return {"coherence": mu, "sparsity": 0, "skipped": True, "passed": True}
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        w0 = _planted(rng, Bn.shape[1], s)
        res = prox_gradient(Bn, Bn @ w0, np.full(Bn.shape[1], lam), max_iters=20000, tol=1e-13)
        found = set(np.flatnonzero(res.w > 0.1 * lam + 1e-3 * res.w.max()))
        hits += found == set(np.flatnonzero(w0))
    return {"coherence": mu, "sparsity": s, "trials": trials, "recovery_rate": hits / trials,
            "skipped": False, "passed": hits / trials >= rate}


def invariant_suite(d: BlockDictionary, trials: int = 100, seed: int = 0) -> dict:
    """Run every backbone check on ``d``; the stability and recovery checks use its first layer."""
    B1 = d.blocks[(1, 1)].dense()
    out = {
        "monotone": monotone_check(d, trials=trials, seed=seed),
        "orthonormal": orthonormal_check(seed=seed),
        "stability": stability_check(B1, trials=max(5, trials // 5), seed=seed),
        "support_recovery": support_recovery_check(B1, trials=trials, seed=seed),
        "coherence": mutual_coherence(d),
    }
    out["passed"] = all(v["passed"] for v in out.values() if isinstance(v, dict))
    return out
