"""Random binary intermediate features.

Every non-intercept feature is a thresholded sparse projection of the
standardized input: pick 1-3 variables, weight them with standard normal
draws, and set the bit for every sample whose projection reaches a
threshold equal to the projection of one randomly chosen training sample.
Column 0 is a constant 1 and plays the role of the intercept.

Bits are stored 64 to a word, one run of words per feature column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

MAX_VARS = 3
# Draws for columns 1..k-1 come in fixed-size blocks, each from its own
# Philox substream keyed by (seed, block); column content therefore depends
# only on (seed, column, n, m), never on k, thread count, or evaluation order.
BLOCK = 4096


@dataclass(frozen=True)
class FeatureSpec:
    """Recipe for one random bit."""

    var_indices: tuple[int, ...]
    weights: tuple[float, ...]
    threshold: float

    def evaluate(self, x_std: np.ndarray) -> np.ndarray:
        z = np.zeros(x_std.shape[0])
        for i, w in zip(self.var_indices, self.weights):
            z += w * x_std[:, i]
        return (z >= self.threshold).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """All feature recipes of a model, stored column-wise.

    ``var_indices`` and ``weights`` have shape (k - 1, 3); slots past
    ``n_vars[j]`` hold index 0 and weight 0 and are never read.
    """

    var_indices: np.ndarray
    weights: np.ndarray
    n_vars: np.ndarray
    thresholds: np.ndarray
    seed: int
    m: int

    def __post_init__(self):
        q = len(self.thresholds)
        if self.var_indices.shape != (q, MAX_VARS) or self.weights.shape != (q, MAX_VARS):
            raise ValueError("feature bank arrays have inconsistent shapes")
        if self.n_vars.shape != (q,):
            raise ValueError("feature bank arrays have inconsistent shapes")
        if q:
            if self.n_vars.min() < 1 or self.n_vars.max() > min(self.m, MAX_VARS):
                raise ValueError("feature subset size out of range")
            used = np.arange(MAX_VARS)[None, :] < self.n_vars[:, None]
            idx = self.var_indices
            if np.any(used & ((idx < 0) | (idx >= self.m))):
                raise ValueError("feature variable index out of range")
            for a in range(MAX_VARS):
                for b in range(a + 1, MAX_VARS):
                    bad = used[:, b] & (idx[:, a] == idx[:, b])
                    if bad.any():
                        raise ValueError(f"feature {int(np.argmax(bad)) + 1}: repeated variable index")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.thresholds)):
            raise ValueError("feature bank contains non-finite values")

    @property
    def k(self) -> int:
        """Column count of the matrices this bank produces, intercept included."""
        return len(self.thresholds) + 1

    def spec(self, j: int) -> FeatureSpec:
        """Recipe of feature column ``j`` (``1 <= j < k``)."""
        if not 1 <= j < self.k:
            raise IndexError(f"column {j} has no recipe (valid: 1..{self.k - 1})")
        nv = int(self.n_vars[j - 1])
        return FeatureSpec(
            tuple(int(v) for v in self.var_indices[j - 1, :nv]),
            tuple(float(v) for v in self.weights[j - 1, :nv]),
            float(self.thresholds[j - 1]),
        )

    @property
    def specs(self) -> list[FeatureSpec]:
        return [self.spec(j) for j in range(1, self.k)]

    def __eq__(self, other):
        if not isinstance(other, FeatureBank):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.m == other.m
            and np.array_equal(self.n_vars, other.n_vars)
            and np.array_equal(self.var_indices, other.var_indices)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.thresholds, other.thresholds)
        )


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """n x k binary matrix, ``words[j, w]`` packs rows 64w..64w+63 of column j."""

    n: int
    k: int
    words: np.ndarray

    def __post_init__(self):
        if self.words.dtype != np.uint64 or self.words.shape != (self.k, n_words(self.n)):
            raise ValueError("word array does not match (k, ceil(n/64)) uint64 layout")

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    def to_dense(self) -> np.ndarray:
        """Unpack to an (n, k) float64 array of zeros and ones."""
        return _kernels.unpack_dense(self.words, self.n)

    def column_counts(self) -> np.ndarray:
        return _kernels.column_counts(self.words)

    def take_rows(self, rows) -> "BitMatrix":
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= self.n):
            raise IndexError("row index out of range")
        return BitMatrix(len(rows), self.k, _kernels.take_rows(self.words, rows))

    @classmethod
    def from_dense(cls, dense) -> "BitMatrix":
        """Pack an (n, k) array of zeros and ones."""
        dense = np.asarray(dense)
        n, k = dense.shape
        nw = n_words(n)
        padded = np.zeros((nw * 64, k), dtype=np.uint8)
        padded[:n] = dense != 0
        bits = np.packbits(padded.T.reshape(k, nw, 64), axis=2, bitorder="little")
        words = np.ascontiguousarray(bits).view("<u8").reshape(k, nw).astype(np.uint64)
        return cls(n, k, words)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.n == other.n and self.k == other.k and np.array_equal(self.words, other.words)


def n_words(n: int) -> int:
    return (n + 63) // 64


def _as_matrix(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def _draw_block(seed: int, block: int, n: int, m: int):
    count = BLOCK
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    smax = min(m, MAX_VARS)
    n_vars = rng.integers(1, smax + 1, size=count).astype(np.int64)
    # Sequential sampling without replacement: each slot is redrawn until it
    # differs from the earlier ones, which keeps every subset equally likely.
    idx = np.zeros((count, MAX_VARS), dtype=np.int64)
    for t in range(smax):
        col = rng.integers(0, m, size=count)
        while True:
            dup = np.zeros(count, dtype=bool)
            for s in range(t):
                dup |= col == idx[:, s]
            if not dup.any():
                break
            col[dup] = rng.integers(0, m, size=int(dup.sum()))
        idx[:, t] = col
    weights = rng.standard_normal((count, MAX_VARS))
    rows = rng.integers(0, n, size=count)
    unused = np.arange(MAX_VARS)[None, :] >= n_vars[:, None]
    idx[unused] = 0
    weights[unused] = 0.0
    return idx, weights, n_vars, rows


def generate_bank(x_std, k: int, seed: int) -> tuple[FeatureBank, BitMatrix]:
    """Draw ``k - 1`` random bits from training data and pack them.

    Parameters
    ----------
    x_std : array of shape (n, m)
        Standardized training predictors.
    k : int
        Total column count including the intercept column.
    seed : int
        Non-negative 64-bit seed.

    Returns
    -------
    (FeatureBank, BitMatrix)
    """
    x = _as_matrix(x_std)
    n, m = x.shape
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if n < 2 or m < 1:
        raise ValueError(f"need at least 2 rows and 1 column, got shape {x.shape}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    q = k - 1
    parts = [_draw_block(seed, b, n, m) for b in range(_n_blocks(q))]
    idx, weights, n_vars, rows = (np.ascontiguousarray(np.concatenate(p)[:q]) for p in zip(*parts))
    thresholds = np.empty(q)
    _kernels.threshold_columns(x, idx, weights, n_vars, rows, thresholds)
    bank = FeatureBank(idx, weights, n_vars, thresholds, seed, m)
    return bank, _pack(bank, x)


def _n_blocks(q: int) -> int:
    return (q + BLOCK - 1) // BLOCK


def _pack(bank: FeatureBank, x: np.ndarray) -> BitMatrix:
    n = x.shape[0]
    words = np.zeros((bank.k, n_words(n)), dtype=np.uint64)
    _kernels.pack_columns(x, bank.var_indices, bank.weights, bank.n_vars, bank.thresholds, words)
    return BitMatrix(n, bank.k, words)


def apply_bank(bank: FeatureBank, x_std) -> BitMatrix:
    """Evaluate stored recipes on new standardized rows."""
    x = np.asarray(x_std, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] == 0:
        x = np.zeros((0, x.shape[1]))
    x = _as_matrix(x)
    if x.shape[1] != bank.m:
        raise ValueError(f"input has {x.shape[1]} columns, bank expects {bank.m}")
    return _pack(bank, x)


def score(f: BitMatrix, beta) -> np.ndarray:
    """Row sums of the coefficients of set bits: ``s_i = sum_j beta_j f_ij``."""
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    if beta.shape != (f.k,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({f.k},)")
    return _kernels.score_packed(f.words, beta, f.n)


def correlate(f: BitMatrix, r) -> np.ndarray:
    """Column sums of ``r`` over set bits: ``g_j = sum_i r_i f_ij``."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != (f.n,):
        raise ValueError(f"r has shape {r.shape}, expected ({f.n},)")
    return _kernels.correlate_packed(f.words, r)


def row_gram(f: BitMatrix, first: int = 1, chunk: int = 2048) -> np.ndarray:
    """``G[i, i'] = number of columns j >= first set in both rows i and i'``.

    Computed blockwise in float32, which is exact while the column count
    stays below 2**24.
    """
    if f.k - first >= 2**24:
        raise ValueError("too many columns for an exact float32 Gram matrix")
    g = np.zeros((f.n, f.n))
    for j0 in range(first, f.k, chunk):
        block = _kernels.unpack_block_f32(f.words, j0, min(f.k, j0 + chunk), f.n)
        g += block @ block.T
    return g
