"""Minimum deep frame potential of an architecture by first-order descent with restarts."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .archspec import ArchSpec, param_count, spec_hash
from .bound import chain_lower_bound
from .dictionary import (BlockDictionary, MaterializationError, build_dictionary,
                         flatten_params, load_params, with_blocks)
from .gram import ZeroColumnError, count_offdiag
from .potential import DenseEvaluator, potential_and_gradient

logger = logging.getLogger(__name__)

STEP_RULES = ("fixed", "adaptive")
ZERO_COLUMN_TOL = 1e-8


class MinimizationError(RuntimeError):
    def __init__(self, message: str, diagnostics: list | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class MinimizeConfig:
    max_iters: int = 20000
    step_rule: str = "adaptive"
    init_step: float = 1e-2
    rel_tol: float = 1e-9
    restarts: int = 3
    seed: int = 0
    window: int = 100
    jobs: int = 1

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        if self.max_iters < 1 or self.restarts < 1 or self.window < 1:
            raise ValueError("max_iters, restarts and window must be >= 1")
        if not self.init_step > 0 or not self.rel_tol > 0:
            raise ValueError("init_step and rel_tol must be positive")

    def to_dict(self) -> dict:
        # jobs does not change results, so it stays out of cache keys
        d = asdict(self)
        d.pop("jobs")
        return d


@dataclass
class RestartResult:
    final: float
    iterations: int
    converged: bool
    reseeded_columns: int = 0
    history: list = field(default_factory=list, repr=False)


@dataclass
class MinimizeResult:
    best_potential: float
    best_params: np.ndarray
    per_restart: list[RestartResult]
    wall_time: float
    best_restart: int = 0

    def to_dict(self, with_params: bool = True) -> dict:
        out = {
            "best_potential": self.best_potential,
            "best_restart": self.best_restart,
            "per_restart": [
                {"final": r.final, "iterations": r.iterations, "converged": r.converged,
                 "reseeded_columns": r.reseeded_columns}
                for r in self.per_restart
            ],
            "wall_time": self.wall_time,
        }
        if with_params:
            out["best_params"] = [float(x) for x in self.best_params]
        return out


def _column_guard(d: BlockDictionary, rng: np.random.Generator) -> tuple[BlockDictionary, int]:
    """Redraw the learned entries of any atom whose norm fell below ``ZERO_COLUMN_TOL``."""
    updates: dict = {}
    count = 0
    for j in range(1, d.depth + 1):
        column = d.column(j)
        sq = np.zeros(d.col_dims[j - 1])
        for _, b in column:
            sq = sq + b.col_sq_norms()
        bad = np.flatnonzero(np.sqrt(sq) < ZERO_COLUMN_TOL)
        if bad.size == 0:
            continue
        count += bad.size
        for i, b in column:
            if not b.learned:
                continue
            payload = np.array(updates.get((i, j), b.payload))
            scale = 1.0 / math.sqrt(b.fan_in)
            if b.kind == "learned_dense":
                payload[:, bad] = rng.standard_normal((payload.shape[0], bad.size)) * scale
            elif not b.transposed:
                per = b.cols // payload.shape[0]
                for ch in np.unique(bad // per):
                    payload[ch] = rng.standard_normal(payload[ch].shape) * scale
            else:
                per = b.cols // payload.shape[1]
                for ch in np.unique(bad // per):
                    payload[:, ch] = rng.standard_normal(payload[:, ch].shape) * scale
            updates[(i, j)] = payload
    if not updates:
        return d, 0
    return with_blocks(d, updates), count


class _Objective:
    """Potential as a function of the flat parameter vector, with the last column norms."""

    def __init__(self, d: BlockDictionary):
        self.d = d
        try:
            self.fast: DenseEvaluator | None = DenseEvaluator(d)
        except MaterializationError:
            self.fast = None
        self.last_norms = np.ones(1)

    def __call__(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        if self.fast is not None:
            try:
                return self.fast(v)
            finally:
                self.last_norms = self.fast.last_norms
        dv = load_params(self.d, v)
        self.last_norms = np.concatenate([np.sqrt(b) for b in _sq_norms(dv)])
        f, g, _ = potential_and_gradient(dv)
        return f, g


def _sq_norms(d: BlockDictionary) -> list[np.ndarray]:
    out = []
    for j in range(1, d.depth + 1):
        sq = np.zeros(d.col_dims[j - 1])
        for _, b in d.column(j):
            sq = sq + b.col_sq_norms()
        out.append(sq)
    return out


def _evaluate_guarded(obj: _Objective, v: np.ndarray, rng: np.random.Generator):
    """Evaluate at ``v``, first redrawing any atom that collapsed towards zero."""
    try:
        f, g = obj(v)
        if obj.last_norms.min() >= ZERO_COLUMN_TOL:
            return v, f, g, 0
    except ZeroColumnError:
        pass
    fixed, count = _column_guard(load_params(obj.d, v), rng)
    v = flatten_params(fixed)
    f, g = obj(v)
    return v, f, g, count


def _descend(d0: BlockDictionary, config: MinimizeConfig, rng: np.random.Generator,
             keep_history: bool = False) -> tuple[RestartResult, np.ndarray]:
    obj = _Objective(d0)
    v, f, g, reseeded = _evaluate_guarded(obj, flatten_params(d0), rng)
    if not math.isfinite(f):
        raise FloatingPointError("non-finite potential at initialization")
    history = [f]
    eta = config.init_step
    m = np.zeros_like(v)
    s = np.zeros_like(v)
    b1, b2, eps = 0.9, 0.999, 1e-12
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        if v.size == 0 or f == 0.0:
            converged = True
            break
        if config.step_rule == "adaptive":
            m = b1 * m + (1 - b1) * g
            s = b2 * s + (1 - b2) * g * g
            direction = (m / (1 - b1**it)) / (np.sqrt(s / (1 - b2**it)) + eps)
        else:
            direction = g
            eta = config.init_step
        accepted = False
        for attempt in range(40):
            vt, ft, gt, n_fix = _evaluate_guarded(obj, v - eta * direction, rng)
            if math.isfinite(ft) and ft <= f:
                accepted = True
                reseeded += n_fix
                break
            eta *= 0.5
            if attempt == 9 and config.step_rule == "adaptive":
                # the momentum direction stopped descending; fall back to the gradient
                m[:] = 0.0
                s[:] = 0.0
                direction = g / (np.linalg.norm(g) + eps)
        if not accepted:
            converged = True
            break
        v, f, g = vt, ft, gt
        eta = min(eta * 1.1, 10.0 * config.init_step)
        history.append(f)
        if it >= config.window:
            past = history[-config.window - 1]
            if past - f <= config.rel_tol * max(past, 1e-300):
                converged = True
                break
    result = RestartResult(final=float(f), iterations=it, converged=converged,
                           reseeded_columns=reseeded,
                           history=history if keep_history else [])
    return result, v


def minimize_potential(spec: ArchSpec, config: MinimizeConfig | None = None,
                       keep_history: bool = False) -> MinimizeResult:
    """Run ``config.restarts`` independent descents and keep the lowest potential.

    Restart ``r`` draws its initialization from child ``r`` of
    ``SeedSequence(config.seed)``, so the result depends only on
    ``(spec, config)``.
    """
    config = config or MinimizeConfig()
    t0 = time.perf_counter()
    children = np.random.SeedSequence(config.seed).spawn(config.restarts)

    def run(r: int):
        rng = np.random.default_rng(children[r])
        d0 = build_dictionary(spec, seed=rng)
        try:
            return _descend(d0, config, rng, keep_history)
        except (FloatingPointError, ValueError) as exc:
            logger.warning("restart %d failed: %s", r, exc)
            return RestartResult(math.nan, 0, False, history=[str(exc)]), None

    if config.jobs > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(run, range(config.restarts)))
    else:
        outcomes = [run(r) for r in range(config.restarts)]
    per_restart = [o[0] for o in outcomes]
    finite = [r for r, o in enumerate(per_restart) if math.isfinite(o.final)]
    if not finite:
        raise MinimizationError("all restarts diverged",
                                [{"restart": r, "error": o.history} for r, o in
                                 enumerate(per_restart)])
    best = min(finite, key=lambda r: (per_restart[r].final, r))
    return MinimizeResult(
        best_potential=per_restart[best].final,
        best_params=outcomes[best][1],
        per_restart=per_restart,
        wall_time=time.perf_counter() - t0,
        best_restart=best,
    )


def best_dictionary(spec: ArchSpec, result: MinimizeResult) -> BlockDictionary:
    return load_params(build_dictionary(spec, init="zeros"), result.best_params)


def _spec_label(spec: ArchSpec, index: int) -> str:
    return spec.id if spec.id is not None else f"spec{index}-{spec_hash(spec)[:8]}"


def score_architectures(specs: Sequence[ArchSpec], config: MinimizeConfig | None = None,
                        jobs: int = 1, minimizer=None) -> list[dict]:
    """Ranking table, lowest minimum potential first.

    Ties go to fewer parameters, then to the spec id.  A spec whose
    minimization fails is kept as a row with ``status`` set to the error and
    sorted last.  ``minimizer(spec, config)`` replaces
    :func:`minimize_potential`, e.g. to serve results from a cache; it must
    return an object with ``best_potential`` and ``wall_time``.
    """
    minimizer = minimizer or minimize_potential
    if not specs:
        raise ValueError("need at least one spec to rank")
    config = config or MinimizeConfig()

    def one(item):
        index, spec = item
        row = {"id": _spec_label(spec, index), "params": param_count(spec), "potential": None,
               "bound": None, "n_offdiag": count_offdiag(spec), "seconds": None, "status": "ok",
               "spec_hash": spec_hash(spec)}
        try:
            res = minimizer(spec, config)
            row["potential"] = res.best_potential
            row["seconds"] = res.wall_time
            if spec.chain_form and all(not g.is_conv for g in (spec.input_geom,) + spec.layers):
                row["bound"] = chain_lower_bound(spec.widths).bound
        except Exception as exc:  # per-spec failures must not abort the batch
            row["status"] = f"failed: {exc}"
        return row

    items = list(enumerate(specs))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(it) for it in items]
    return sorted(rows, key=lambda r: (r["potential"] is None,
                                       r["potential"] if r["potential"] is not None else 0.0,
                                       r["params"], r["id"]))
