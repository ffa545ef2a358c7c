"""Circular convolution operators as index maps.

A learned conv edge from a source layer ``(C_in, *S_in)`` to a destination
layer ``(C_out, *S_out)`` with ``S_out = S_in // stride`` is stored as its
filter tensor ``W`` of shape ``(C_out, C_in, *kernel)``.  The *synthesis*
operator places filter ``W[co]`` at every output position::

    S[(ci, x), (co, p)] = W[co, ci, t]    where  x = p*stride + kernel//2 - t  (mod S_in)

so its rows index source units and its columns destination units.  The
*analysis* operator is ``S.T``.  Boundaries are periodic, so every column of
``S`` is a cyclic shift of the column at ``p = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class ConvMap:
    in_channels: int
    out_channels: int
    in_extent: tuple[int, ...]
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    rows: np.ndarray
    cols: np.ndarray
    widx: np.ndarray

    @property
    def out_extent(self) -> tuple[int, ...]:
        return tuple(e // s for e, s in zip(self.in_extent, self.stride))

    @property
    def n_in(self) -> int:
        return self.in_channels * int(np.prod(self.in_extent))

    @property
    def n_out(self) -> int:
        return self.out_channels * int(np.prod(self.out_extent))

    @property
    def filter_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel

    def shape(self, transposed: bool = False) -> tuple[int, int]:
        return (self.n_out, self.n_in) if transposed else (self.n_in, self.n_out)

    def sparse(self, weights: np.ndarray, transposed: bool = False) -> sp.csr_matrix:
        vals = np.asarray(weights, dtype=float).ravel()[self.widx]
        r, c = (self.cols, self.rows) if transposed else (self.rows, self.cols)
        return sp.csr_matrix((vals, (r, c)), shape=self.shape(transposed))

    def dense(self, weights: np.ndarray, transposed: bool = False) -> np.ndarray:
        out = np.zeros(self.shape(transposed))
        vals = np.asarray(weights, dtype=float).ravel()[self.widx]
        if transposed:
            out[self.cols, self.rows] = vals
        else:
            out[self.rows, self.cols] = vals
        return out

    def pattern(self, transposed: bool = False) -> sp.csr_matrix:
        ones = np.ones(self.widx.size)
        r, c = (self.cols, self.rows) if transposed else (self.rows, self.cols)
        return sp.csr_matrix((ones, (r, c)), shape=self.shape(transposed))

    def filter_grad(self, block_grad: np.ndarray, transposed: bool = False) -> np.ndarray:
        """Pull a gradient with respect to the materialized block back onto the filter."""
        g = block_grad[self.cols, self.rows] if transposed else block_grad[self.rows, self.cols]
        n = int(np.prod(self.filter_shape))
        return np.bincount(self.widx, weights=g, minlength=n).reshape(self.filter_shape)

    def shift_basis(self, weights: np.ndarray, transposed: bool = False):
        """Base columns of a shift-structured operator, or ``None``.

        Returns ``(base, col_grid, step)`` where column ``(c, q)`` of the
        operator equals ``base[c]`` cyclically shifted by ``q * step`` along
        the spatial axes.  Analysis operators are shift-structured only
        for unit stride.
        """
        W = np.asarray(weights, dtype=float)
        h = tuple(k // 2 for k in self.kernel)
        nd = len(self.in_extent)
        if not transposed:
            base = np.zeros((self.out_channels, self.in_channels) + self.in_extent)
            for t in np.ndindex(*self.kernel):
                x = tuple((h[d] - t[d]) % self.in_extent[d] for d in range(nd))
                base[(slice(None), slice(None)) + x] += W[(slice(None), slice(None)) + t]
            return base, self.out_extent, self.stride
        if any(s != 1 for s in self.stride):
            return None
        # column (ci, x=0) has W[co, ci, t] at p = t - h
        base = np.zeros((self.in_channels, self.out_channels) + self.out_extent)
        for t in np.ndindex(*self.kernel):
            p = tuple((t[d] - h[d]) % self.out_extent[d] for d in range(nd))
            base[(slice(None), slice(None)) + p] += W[(slice(None), slice(None)) + t].T
        return base, self.in_extent, (1,) * nd


@lru_cache(maxsize=256)
def conv_map(in_channels: int, out_channels: int, in_extent: tuple[int, ...],
             kernel: tuple[int, ...], stride: tuple[int, ...]) -> ConvMap:
    nd = len(in_extent)
    out_extent = tuple(e // s for e, s in zip(in_extent, stride))
    h = tuple(k // 2 for k in kernel)
    fshape = (out_channels, in_channels) + tuple(kernel)
    rows, cols, widx = [], [], []
    co, ci = np.meshgrid(np.arange(out_channels), np.arange(in_channels), indexing="ij")
    co, ci = co.ravel(), ci.ravel()
    for p in np.ndindex(*out_extent):
        for t in np.ndindex(*kernel):
            x = tuple((p[d] * stride[d] + h[d] - t[d]) % in_extent[d] for d in range(nd))
            rows.append(np.ravel_multi_index((ci,) + tuple(np.full_like(ci, v) for v in x),
                                             (in_channels,) + tuple(in_extent)))
            cols.append(np.ravel_multi_index((co,) + tuple(np.full_like(co, v) for v in p),
                                             (out_channels,) + out_extent))
            widx.append(np.ravel_multi_index((co, ci) + tuple(np.full_like(co, v) for v in t),
                                             fshape))
    rows_a, cols_a, widx_a = (np.concatenate(a) for a in (rows, cols, widx))
    for a in (rows_a, cols_a, widx_a):
        a.setflags(write=False)
    return ConvMap(in_channels, out_channels, tuple(in_extent), tuple(kernel), tuple(stride),
                   rows_a, cols_a, widx_a)


def shift_correlation(base_a: np.ndarray, base_b: np.ndarray, col_grid: tuple[int, ...],
                      step: tuple[int, ...]) -> np.ndarray:
    """Inner products between all shifted columns of two shift-structured operators.

    ``base_a`` has shape ``(Ca, C, *grid)`` and ``base_b`` ``(Cb, C, *grid)``.
    The result ``G`` has shape ``(Ca * P, Cb * P)`` with ``P = prod(col_grid)``
    and ``G[(a, p), (b, q)] = <shift(base_a[a], p*step), shift(base_b[b], q*step)>``.
    Only one inner product per relative offset is computed.
    """
    nd = len(col_grid)
    axes = tuple(range(2, 2 + nd))
    P = int(np.prod(col_grid))
    offsets = list(np.ndindex(*col_grid))
    corr = np.empty((base_a.shape[0], base_b.shape[0], P))
    for n, delta in enumerate(offsets):
        shifted = np.roll(base_b, tuple(d * s for d, s in zip(delta, step)), axis=axes)
        corr[:, :, n] = base_a.reshape(base_a.shape[0], -1) @ shifted.reshape(shifted.shape[0], -1).T
    grids = np.indices(col_grid).reshape(nd, P)
    diff = (grids[:, None, :] - grids[:, :, None]) % np.asarray(col_grid)[:, None, None]
    rel = np.ravel_multi_index(tuple(diff), col_grid)
    G = corr[:, :, rel]  # (Ca, Cb, P, P)
    return G.transpose(0, 2, 1, 3).reshape(base_a.shape[0] * P, base_b.shape[0] * P)
