"""Learned re-connected adjacency from multi-head cosine self-attention.

Neighbour selection keeps, for every row, the entries whose mean cosine
score exceeds ``epsilon`` together with the ``r`` largest off-diagonal
entries (ties to the smaller column). The union pattern is symmetrised,
negative retained scores are clamped to zero, and the result is normalised
by inverse square-root degrees without self-loops.

Selection runs on fixed-point copies of the unit-normalised head
projections. With ``b`` fractional bits and ``2b + log2(m) <= 52`` every
dot product and head sum is an exact float64 integer, so the selected
pattern is exactly symmetric and identical for any row blocking, BLAS
kernel or thread count. Retained values are recomputed pair by pair on the
tape from the unquantised projections, which keeps them differentiable
with respect to every head matrix; the selection mask is a constant of the
forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .graph import SparseAdjacency
from .tensor import Rng, Tensor


@dataclass
class StructureHeads:
    """Projection matrices, one ``d x p`` matrix per attention head."""

    w_q: list

    def __post_init__(self):
        shapes = {w.shape for w in self.w_q}
        if not self.w_q or len({s[0] for s in shapes}) != 1 or min(s[1] for s in shapes) < 1:
            raise ConfigError(f"structure heads need a shared input width and p > 0, got {sorted(shapes)}")

    @property
    def m(self) -> int:
        return len(self.w_q)

    @classmethod
    def init(cls, d, p, m, rng: Rng, dtype=np.float64) -> "StructureHeads":
        from .blocks import init_params

        return cls([init_params((d, p), rng, dtype) for _ in range(m)])

    def parameters(self):
        return list(self.w_q)


@dataclass(frozen=True)
class SparsifierConfig:
    r: int
    epsilon: float

    def check(self, n: int):
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.r >= n:
            raise ConfigError(f"r={self.r} must be smaller than the node count n={n}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")


def attention_scores(x, heads: StructureHeads) -> Tensor:
    """Dense n x n mean over heads of the row-wise cosine of ``x @ W_i``."""
    return T.mean_over([T.rowwise_cosine(T.matmul(x, w)) for w in heads.w_q])


def _select_rows(block, row_ids, r, threshold):
    """Boolean selection mask for a block of score rows.

    ``block`` must already carry ``-inf`` on the diagonal positions.
    """
    k = block.shape[1]
    kth = np.partition(block, k - r, axis=1)[:, k - r:k - r + 1]
    sel = block >= kth
    counts = sel.sum(axis=1)
    # Ties at the r-th value go to the smallest columns; only rows holding
    # more than r entries >= the r-th value need a second look.
    for i in np.flatnonzero(counts > r):
        row = block[i]
        tied = np.flatnonzero(row == kth[i, 0])
        above = int((row > kth[i, 0]).sum())
        sel[i, tied[r - above:]] = False
    sel |= block > threshold
    sel[np.arange(len(row_ids)), row_ids] = False
    return sel


def _pairs_from_selection(rows, cols):
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return pairs.reshape(-1, 2)


def sparsify(s, cfg: SparsifierConfig) -> SparseAdjacency:
    """Select neighbours from a dense score matrix and build A*.

    Values follow A*_ij = max(a_ij, a_ji) over the per-row selections
    ``a`` (unselected entries count as 0), then negatives and rounding
    noise are clamped to 0.
    The structural pattern is the union of both directions.
    """
    s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    n = s.shape[0]
    cfg.check(n)
    work = s.copy()
    np.fill_diagonal(work, -np.inf)
    sel = _select_rows(work, np.arange(n), cfg.r, cfg.epsilon)
    a = np.where(sel, s, 0.0)
    union = sel | sel.T
    vals = np.maximum(a, a.T)
    vals[vals <= noise_floor(vals.dtype)] = 0.0
    rows, cols = np.nonzero(union)
    return SparseAdjacency.from_coo(rows, cols, vals[rows, cols], n)


def _score_bits(m: int) -> int:
    return (52 - math.ceil(math.log2(m))) // 2 if m > 1 else 26


def _fixed_point_units(units, m):
    bits = _score_bits(m)
    return [np.rint(np.asarray(u, dtype=np.float64) * 2.0 ** bits) for u in units], bits


def select_pairs(units, cfg: SparsifierConfig, block_rows=None):
    """Undirected retained pairs (lo < hi) from unit-row head projections.

    Scores are formed ``block_rows`` rows at a time; at most a
    ``block_rows x n`` score buffer is alive at once.
    """
    n = units[0].shape[0]
    cfg.check(n)
    block_rows = n if block_rows is None else int(block_rows)
    if block_rows < 1:
        raise ConfigError(f"block_rows must be >= 1, got {block_rows}")
    m = len(units)
    fixed, bits = _fixed_point_units(units, m)
    # Integer entries: the head sum of dot products equals one dot product of the
    # concatenated rows, exactly.
    stacked = np.concatenate(fixed, axis=1)
    stacked_t = np.ascontiguousarray(stacked.T)
    threshold = m * cfg.epsilon * 2.0 ** (2 * bits)
    found = []
    for start in range(0, n, block_rows):
        stop = min(n, start + block_rows)
        block = stacked[start:stop] @ stacked_t
        row_ids = np.arange(stop - start)
        block[row_ids, start + row_ids] = -np.inf
        sel = _select_rows(block, start + row_ids, cfg.r, threshold)
        del block
        rr, cc = np.nonzero(sel)
        found.append(_pairs_from_selection(rr + start, cc))
    return _pairs_from_selection(*np.concatenate(found).T) if found else np.zeros((0, 2), np.int64)


@dataclass
class Reconnected:
    """Learned adjacency in CSR order with raw (A*) and normalised values on the tape."""

    rows: np.ndarray
    cols: np.ndarray
    pairs: np.ndarray
    raw: Tensor
    normalized: Tensor
    n: int

    def _sparse(self, values) -> SparseAdjacency:
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, self.rows + 1, 1)
        return SparseAdjacency(np.cumsum(indptr), self.cols, np.asarray(values), self.n)

    def a_star(self) -> SparseAdjacency:
        return self._sparse(self.raw.data)

    def a_star_hat(self) -> SparseAdjacency:
        return self._sparse(self.normalized.data)

    def aggregate(self, h) -> Tensor:
        """Normalised learned adjacency times ``h``."""
        return T.spmm(self.normalized, self.rows, self.cols, self.n, h)


def noise_floor(dtype) -> float:
    return 32 * float(np.finfo(dtype).eps)


def _assemble(units, pairs, n) -> Reconnected:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo, hi = pairs[:, 0], pairs[:, 1]
    per_head = [T.rowdot(T.take_rows(u, lo), T.take_rows(u, hi)) for u in units]
    score = per_head[0] if len(per_head) == 1 else T.mean_over(per_head)
    # Scores within rounding noise of 0 count as 0; otherwise a node whose
    # retained scores are all numerically zero would get O(1) normalised weights.
    clamped = T.relu(score, noise_floor(score.dtype))
    k = len(lo)
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    src = np.concatenate([np.arange(k), np.arange(k)])[order]
    raw = T.gather(clamped, src)
    deg = T.segment_sum(raw, rows, n)
    scale_ = T.inv_sqrt_safe(T.mul(T.gather(deg, rows), T.gather(deg, cols)))
    return Reconnected(rows, cols, pairs, raw, T.mul(raw, scale_), n)


def head_units(x, heads: StructureHeads):
    return [T.row_normalize(T.matmul(x, w)) for w in heads.w_q]


def build_reconnected(x, heads: StructureHeads, cfg: SparsifierConfig,
                      block_rows=None, pairs=None) -> Reconnected:
    """Select neighbours, symmetrise, clamp and normalise in one pass.

    Passing ``pairs`` reuses a previously selected pattern (used to freeze
    the mask when checking gradients).
    """
    units = head_units(x, heads)
    n = units[0].shape[0]
    if pairs is None:
        pairs = select_pairs([u.data for u in units], cfg, block_rows)
    return _assemble(units, pairs, n)


def blockwise_scores(x, heads: StructureHeads, cfg: SparsifierConfig, block_rows: int) -> SparseAdjacency:
    """Normalised learned adjacency computed with a ``block_rows x n`` score budget."""
    return build_reconnected(x, heads, cfg, block_rows=block_rows).a_star_hat()
