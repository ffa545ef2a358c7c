import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepframe.archspec import from_widths
from deepframe.bound import (
    chain_bound_grid_oracle,
    chain_bound_value,
    chain_h_cross_norm,
    chain_h_diag_bound,
    chain_h_norm_bound,
    chain_lower_bound,
    sum_objective,
    uniform_objective,
    welch_bound,
)
from deepframe.dictionary import build_dictionary, with_blocks
from deepframe.gram import count_offdiag, gram_blocks
from deepframe.potential import frame_potential

# (2, 3, 2) and friends are exactly complete, which the bound flags
pytestmark = pytest.mark.filterwarnings("ignore:widths .* overcomplete")


class TestWelch:
    def test_examples(self):
        assert welch_bound(2, 3) == pytest.approx(0.5)
        assert welch_bound(3, 4) == pytest.approx(1 / 3)
        assert welch_bound(4, 4) == 0.0
        assert welch_bound(1, 1) == 0.0

    def test_rejects_undercomplete(self):
        with pytest.raises(ValueError):
            welch_bound(3, 2)


class TestHBlocks:
    def test_cross_examples(self):
        assert chain_h_cross_norm(1, 1.0) == pytest.approx(0.25)
        assert chain_h_cross_norm(4, 1.0) == pytest.approx(1.0)
        assert chain_h_cross_norm(3, math.inf) == 0.0
        assert chain_h_cross_norm(2, [1.0, math.inf]) == pytest.approx(0.25)

    def test_diag_examples(self):
        assert chain_h_diag_bound((2, 3), [1.0], 1) == pytest.approx(9 / 2)
        assert chain_h_diag_bound((2, 3, 4), [1.0, 1.0], 1) == pytest.approx(1.125)
        assert chain_h_diag_bound((2, 3, 4), [math.inf, 1.0], 1) == pytest.approx(9 / 2)
        k = 5
        assert chain_h_diag_bound((k, k, k, k), [1.0] * 3, 2) == pytest.approx(k)
        with pytest.raises(IndexError):
            chain_h_diag_bound((2, 3), [1.0], 2)

    @pytest.mark.parametrize("seed", range(20))
    def test_bound_below_actual_gram(self, seed):
        # evaluated at the actual column magnitudes, the assembled bound is below ||G||^2
        rng = np.random.default_rng(seed)
        depth = int(rng.integers(2, 5))
        k = [int(v) for v in rng.integers(1, 7, size=depth + 1)]
        d = build_dictionary(from_widths("chain", k), seed=seed)
        d = with_blocks(d, {(j, j): d.blocks[(j, j)].payload * rng.uniform(0.1, 10, k[j])
                            for j in range(1, depth + 1)})
        c = [np.linalg.norm(d.blocks[(j, j)].payload, axis=0) for j in range(1, depth + 1)]
        G = gram_blocks(d).dense()
        assert chain_h_norm_bound(k, c) <= float(np.sum(G * G)) + 1e-9
        assert chain_bound_value(k, c) <= frame_potential(d) + 1e-12


class TestChainLowerBound:
    def test_single_layer_is_welch(self):
        for d, k in [(2, 3), (3, 7), (4, 5), (2, 2)]:
            assert chain_lower_bound((d, k)).bound == pytest.approx(welch_bound(d, k) ** 2,
                                                                    abs=1e-12)

    def test_square_single_layer(self):
        assert chain_lower_bound((3, 3)).bound == 0.0

    @pytest.mark.parametrize("widths", [(2, 3, 2), (2, 3, 4), (4, 6, 6, 6), (1, 3, 2, 5),
                                        (3, 8, 2, 7), (2, 4, 4, 4, 4)])
    def test_matches_grid_oracle(self, widths):
        b = chain_lower_bound(widths)
        assert b.converged
        assert b.raw == pytest.approx(chain_bound_grid_oracle(widths), abs=1e-8)

    def test_uniform_mode_matches_its_oracle(self):
        for widths in [(2, 3, 2), (4, 6, 6, 6)]:
            b = chain_lower_bound(widths, mode="uniform")
            assert b.raw == pytest.approx(chain_bound_grid_oracle(widths, mode="uniform"),
                                          abs=1e-8)

    def test_uniform_not_below_per_unit(self):
        # restricting magnitudes can only raise the minimum, which is why it is not a bound
        for widths in [(2, 3, 2), (4, 6, 6, 6), (3, 5, 5)]:
            assert chain_lower_bound(widths, "uniform").raw >= chain_lower_bound(widths).raw - 1e-12

    def test_value_at_optimum_is_consistent(self):
        b = chain_lower_bound((2, 3, 4))
        k = [2, 3, 4]
        S = np.array(b.u_star)
        n = count_offdiag(from_widths("chain", k))
        assert (sum_objective(k, S[None])[0] - sum(k[1:])) / n == pytest.approx(b.raw, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(widths=st.lists(st.integers(1, 6), min_size=3, max_size=4),
           u=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
    def test_uniform_objective_is_special_case(self, widths, u):
        # a uniform layer with magnitude u has layer sum k_j u and split-free cross term
        k = widths
        uu = np.array(u[: len(k) - 2])
        S = uu * np.array(k[1:-1])
        cross_uniform = 2 * sum(k[j + 1] * uu[j] * (1 - uu[j]) for j in range(len(uu)))
        cross_sum = 2 * sum((s - np.floor(s)) * (1 - s + np.floor(s)) for s in S)
        lhs = uniform_objective(k, uu[None])[0] - cross_uniform
        rhs = sum_objective(k, S[None])[0] - cross_sum
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_bad_widths(self):
        with pytest.raises(ValueError):
            chain_lower_bound((3,))
        with pytest.raises(ValueError):
            chain_lower_bound((2, 3, 2), mode="nope")

    def test_warns_when_not_overcomplete(self):
        with pytest.warns(UserWarning):
            chain_lower_bound((5, 2, 2))

    def test_to_dict(self):
        assert set(chain_lower_bound((2, 3, 2)).to_dict()) == {
            "bound", "c_star", "iterations", "converged", "mode", "gap", "raw"}
