"""Numba kernels over feature-major, 64-bit packed bit columns.

Layout: ``words[j, w]`` holds rows ``64*w .. 64*w + 63`` of column ``j``,
least significant bit first. Bits past row ``n`` are always zero.
"""

import numba
import numpy as np
from numba import njit, prange

# The bundled TBB is often too old and only produces a warning; try OpenMP first.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_ONE = np.uint64(1)
_BYTE = np.uint64(255)


@njit(cache=True, inline="always")
def _projection(x, i, idx, wts, nv):
    z = 0.0
    for t in range(nv):
        z += wts[t] * x[i, idx[t]]
    return z


@njit(cache=True, parallel=True)
def threshold_columns(x, var_idx, weights, n_vars, thresh_rows, thresholds):
    """Fill ``thresholds[j]`` with the projection of sample ``thresh_rows[j]``."""
    for j in prange(var_idx.shape[0]):
        thresholds[j] = _projection(x, thresh_rows[j], var_idx[j], weights[j], n_vars[j])


@njit(cache=True, parallel=True)
def pack_columns(x, var_idx, weights, n_vars, thresholds, words):
    """Write the intercept column and one thresholded projection per spec.

    ``words`` must be zero-initialised with shape (len(specs) + 1, nw).
    """
    n = x.shape[0]
    nw = words.shape[1]
    for w in range(nw):
        lim = min(64, n - 64 * w)
        word = np.uint64(0)
        for b in range(lim):
            word |= _ONE << np.uint64(b)
        words[0, w] = word
    for j in prange(var_idx.shape[0]):
        idx = var_idx[j]
        wts = weights[j]
        nv = n_vars[j]
        t = thresholds[j]
        for w in range(nw):
            lim = min(64, n - 64 * w)
            word = np.uint64(0)
            for b in range(lim):
                if _projection(x, 64 * w + b, idx, wts, nv) >= t:
                    word |= _ONE << np.uint64(b)
            words[j + 1, w] = word


@njit(cache=True, parallel=True)
def score_packed(words, beta, n):
    # Each output row accumulates columns in ascending order, matching the
    # dense reference summation exactly regardless of thread count.
    k, nw = words.shape
    out = np.zeros(nw * 64)
    for w in prange(nw):
        acc = np.zeros(64)
        for j in range(k):
            word = words[j, w]
            bj = beta[j]
            for b in range(64):
                acc[b] += bj * float((word >> np.uint64(b)) & _ONE)
        out[64 * w:64 * (w + 1)] = acc
    return out[:n]


@njit(cache=True)
def _byte_tables(r, nw):
    # tab[g, v] = sum of r over the set bits of byte v at row offset 8*g
    ng = nw * 8
    rp = np.zeros(nw * 64)
    rp[:r.shape[0]] = r
    tab = np.zeros((ng, 256))
    for g in range(ng):
        for v in range(1, 256):
            low = v & (-v)
            t = 0
            while (low >> t) != 1:
                t += 1
            tab[g, v] = tab[g, v ^ low] + rp[8 * g + t]
    return tab


@njit(cache=True, parallel=True)
def correlate_packed(words, r):
    k, nw = words.shape
    tab = _byte_tables(r, nw)
    out = np.zeros(k)
    for j in prange(k):
        acc = 0.0
        for w in range(nw):
            word = words[j, w]
            for q in range(8):
                acc += tab[8 * w + q, (word >> np.uint64(8 * q)) & _BYTE]
        out[j] = acc
    return out


@njit(cache=True, parallel=True)
def take_rows(words, rows):
    k = words.shape[0]
    n_out = rows.shape[0]
    nw_out = (n_out + 63) // 64
    out = np.zeros((k, nw_out), dtype=np.uint64)
    for j in prange(k):
        for i in range(n_out):
            src = rows[i]
            bit = (words[j, src >> 6] >> np.uint64(src & 63)) & _ONE
            out[j, i >> 6] |= bit << np.uint64(i & 63)
    return out


@njit(cache=True, parallel=True)
def unpack_dense(words, n):
    k, nw = words.shape
    out = np.zeros((n, k))
    for j in prange(k):
        for i in range(n):
            out[i, j] = float((words[j, i >> 6] >> np.uint64(i & 63)) & _ONE)
    return out


@njit(cache=True, parallel=True)
def column_counts(words):
    k, nw = words.shape
    out = np.zeros(k, dtype=np.int64)
    for j in prange(k):
        c = 0
        for w in range(nw):
            v = words[j, w]
            while v:
                v &= v - _ONE
                c += 1
        out[j] = c
    return out


@njit(cache=True, fastmath=True)
def two_loop(g, s_hist, y_hist, rho, order):
    """L-BFGS search direction ``-H g`` from stored curvature pairs.

    ``order`` lists ring-buffer slots oldest first.
    """
    q = g.copy()
    k = g.shape[0]
    alphas = np.zeros(order.shape[0])
    for t in range(order.shape[0] - 1, -1, -1):
        p = order[t]
        a = 0.0
        for i in range(k):
            a += s_hist[p, i] * q[i]
        a *= rho[p]
        alphas[t] = a
        for i in range(k):
            q[i] -= a * y_hist[p, i]
    last = order[order.shape[0] - 1]
    sy = 0.0
    yy = 0.0
    for i in range(k):
        sy += s_hist[last, i] * y_hist[last, i]
        yy += y_hist[last, i] * y_hist[last, i]
    gamma = sy / yy
    for i in range(k):
        q[i] *= gamma
    for t in range(order.shape[0]):
        p = order[t]
        b = 0.0
        for i in range(k):
            b += y_hist[p, i] * q[i]
        b *= rho[p]
        c = alphas[t] - b
        for i in range(k):
            q[i] += c * s_hist[p, i]
    for i in range(k):
        q[i] = -q[i]
    return q


@njit(cache=True, parallel=True)
def unpack_block_f32(words, j0, j1, n):
    """Columns ``j0:j1`` as an (n, j1 - j0) float32 array of zeros and ones."""
    out = np.zeros((n, j1 - j0), dtype=np.float32)
    for jj in prange(j1 - j0):
        j = j0 + jj
        for i in range(n):
            out[i, jj] = np.float32((words[j, i >> 6] >> np.uint64(i & 63)) & _ONE)
    return out
