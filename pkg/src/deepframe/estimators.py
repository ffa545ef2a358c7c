"""scikit-learn style wrappers around the functional API.

The objects being fitted are architectures, not data, so ``fit`` takes a
spec (or a list of specs) where scikit-learn would take ``X``.  Only
:class:`LayeredSparseCoder` consumes sample matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .archspec import spec_hash
from .dictionary import BlockDictionary, build_dictionary
from .minimize import MinimizeConfig, best_dictionary, minimize_potential, score_architectures
from .potential import potential_report
from .sparse import SparseProblem, forward_pass, solve_dca
from .validation import check_inputs, check_positive, check_spec, check_specs


class _MinimizerParams:
    def _config(self) -> MinimizeConfig:
        check_positive("max_iters", self.max_iters, integer=True)
        check_positive("restarts", self.restarts, integer=True)
        return MinimizeConfig(max_iters=self.max_iters, step_rule=self.step_rule,
                              init_step=self.init_step, rel_tol=self.rel_tol,
                              restarts=self.restarts, seed=self.seed, jobs=self.n_jobs)


class FramePotentialMinimizer(_MinimizerParams, BaseEstimator):
    """Minimum deep frame potential of one architecture.

    Parameters
    ----------
    max_iters, step_rule, init_step, rel_tol, restarts, seed
        Forwarded to :class:`~deepframe.minimize.MinimizeConfig`.
    n_jobs : int
        Restarts run on this many threads; results do not depend on it.

    Attributes
    ----------
    spec_ : ArchSpec
    result_ : MinimizeResult
    best_potential_ : float
    dictionary_ : BlockDictionary
        Dictionary at the best parameters found.
    report_ : PotentialReport
    """

    def __init__(self, max_iters=20000, step_rule="adaptive", init_step=1e-2, rel_tol=1e-9,
                 restarts=3, seed=0, n_jobs=1):
        self.max_iters = max_iters
        self.step_rule = step_rule
        self.init_step = init_step
        self.rel_tol = rel_tol
        self.restarts = restarts
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, spec, y=None):
        self.spec_ = check_spec(spec)
        self.result_ = minimize_potential(self.spec_, self._config())
        self.best_potential_ = self.result_.best_potential
        self.dictionary_ = best_dictionary(self.spec_, self.result_)
        self.report_ = potential_report(self.dictionary_)
        return self

    def score(self, spec=None, y=None) -> float:
        """Negated minimum potential, so that larger is better."""
        check_is_fitted(self, "best_potential_")
        if spec is not None and spec_hash(check_spec(spec)) != spec_hash(self.spec_):
            return -minimize_potential(check_spec(spec), self._config()).best_potential
        return -self.best_potential_


class ArchitectureRanker(_MinimizerParams, BaseEstimator):
    """Rank candidate architectures by their minimum deep frame potential.

    Attributes
    ----------
    ranking_ : list of dict
        Rows with ``id``, ``params``, ``potential``, ``bound``,
        ``n_offdiag``, ``seconds`` and ``status``, best first.
    best_id_ : str
    """

    def __init__(self, max_iters=20000, step_rule="adaptive", init_step=1e-2, rel_tol=1e-9,
                 restarts=3, seed=0, n_jobs=1):
        self.max_iters = max_iters
        self.step_rule = step_rule
        self.init_step = init_step
        self.rel_tol = rel_tol
        self.restarts = restarts
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, specs, y=None):
        specs = check_specs(specs)
        cfg = self._config()
        self.ranking_ = score_architectures(specs, MinimizeConfig(**{**cfg.to_dict(), "jobs": 1}),
                                            jobs=self.n_jobs)
        self.best_id_ = self.ranking_[0]["id"]
        self._by_hash = {r["spec_hash"]: r["potential"] for r in self.ranking_}
        return self

    def predict(self, specs) -> np.ndarray:
        """Minimum potential of each spec, reusing fitted rows where the spec is unchanged."""
        check_is_fitted(self, "ranking_")
        out = []
        for s in check_specs(specs):
            h = spec_hash(s)
            if h not in self._by_hash or self._by_hash[h] is None:
                self._by_hash[h] = minimize_potential(s, self._config()).best_potential
            out.append(self._by_hash[h])
        return np.asarray(out, dtype=float)


class LayeredSparseCoder(TransformerMixin, BaseEstimator):
    """Sparse codes of input samples under an architecture-induced dictionary.

    Parameters
    ----------
    spec : ArchSpec, dict, str or Path
    lambdas : float or sequence of float, optional
        Per-layer penalties; defaults to those in the spec.
    method : {"forward", "solve"}
        ``forward`` returns the layered-thresholding activations, ``solve``
        refines them with the global proximal-gradient solver.
    dictionary : BlockDictionary, optional
        Use these parameters instead of a seeded random draw.
    seed : int
    max_iters, tol : solver controls for ``method="solve"``.
    """

    def __init__(self, spec=None, lambdas=None, method="forward", dictionary=None, seed=0,
                 max_iters=5000, tol=1e-10):
        self.spec = spec
        self.lambdas = lambdas
        self.method = method
        self.dictionary = dictionary
        self.seed = seed
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X=None, y=None):
        if self.method not in ("forward", "solve"):
            raise ValueError(f"method must be 'forward' or 'solve', got {self.method!r}")
        if isinstance(self.dictionary, BlockDictionary):
            self.dictionary_ = self.dictionary
        elif self.spec is not None:
            self.dictionary_ = build_dictionary(check_spec(self.spec), seed=self.seed)
        else:
            raise ValueError("need a spec or a dictionary")
        self.n_features_in_ = self.dictionary_.spec.widths[0]
        if X is not None:
            check_inputs(X, self.n_features_in_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "dictionary_")
        X = check_inputs(X, self.n_features_in_)
        codes = []
        for x in X:
            if self.method == "forward":
                codes.append(np.concatenate(forward_pass(self.dictionary_, x, self.lambdas)))
            else:
                prob = SparseProblem(self.dictionary_, x, self.lambdas)
                codes.append(solve_dca(prob, max_iters=self.max_iters, tol=self.tol).w)
        return np.vstack(codes)

    def objective(self, X) -> np.ndarray:
        """Sparse-coding objective of each sample's code."""
        W = self.transform(X)
        X = check_inputs(X, self.n_features_in_)
        return np.array([SparseProblem(self.dictionary_, x, self.lambdas).objective(w)
                         for x, w in zip(X, W)])
