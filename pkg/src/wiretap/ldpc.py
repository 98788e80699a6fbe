"""LDPC codes: PEG construction, systematic encoding and sum-product decoding."""

from __future__ import annotations

import math
from pathlib import Path

import os

import numba
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, check_bits, check_count, check_seed
from .gf2 import BitMatrix

__all__ = [
    "LdpcCode",
    "RankDeficientError",
    "SparseParityCheck",
    "decode_bp",
    "encode",
    "extract_generator",
    "peg_construct",
    "read_alist",
    "write_alist",
]

LLR_CLIP = 25.0

# try OpenMP before TBB: some hosts ship a TBB too old for numba, which then warns
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


class RankDeficientError(ArithmeticError):
    def __init__(self, rank, rows):
        super().__init__(f"parity-check matrix has rank {rank} < {rows} rows")
        self.rank = rank
        self.rows = rows


class SparseParityCheck:
    """Parity-check matrix held as row and column adjacency (CSR both ways)."""

    def __init__(self, n, rows):
        self.n = check_count(n, "n", minimum=1)
        self.m = len(rows)
        row_lists = [np.asarray(sorted(r), dtype=np.int64) for r in rows]
        for i, r in enumerate(row_lists):
            if r.size and (r[0] < 0 or r[-1] >= n):
                raise ValueError(f"row {i} references a column outside [0, {n})")
            if np.any(np.diff(r) == 0):
                raise ValueError(f"row {i} has a duplicate edge")
        self.row_ptr = np.zeros(self.m + 1, dtype=np.int64)
        self.row_ptr[1:] = np.cumsum([r.size for r in row_lists])
        self.row_idx = np.concatenate(row_lists) if row_lists else np.zeros(0, np.int64)
        edge_row = np.repeat(np.arange(self.m), np.diff(self.row_ptr))
        order = np.lexsort((edge_row, self.row_idx))
        # col_edge lists edge ids grouped by column; edges are numbered in row order
        self.col_edge = order.astype(np.int64)
        counts = np.bincount(self.row_idx, minlength=n)
        if np.any(counts == 0):
            raise ValueError(f"column {int(np.argmin(counts))} has no parity checks")
        self.col_ptr = np.zeros(n + 1, dtype=np.int64)
        self.col_ptr[1:] = np.cumsum(counts)
        self.col_idx = edge_row[order]
        for arr in (self.row_ptr, self.row_idx, self.col_ptr, self.col_idx, self.col_edge):
            arr.flags.writeable = False

    @classmethod
    def from_dense(cls, h):
        h = check_bits(h, ndim=2, name="h")
        return cls(h.shape[1], [np.flatnonzero(row) for row in h])

    @property
    def k(self):
        return self.n - self.m

    @property
    def edges(self):
        return self.row_idx.size

    def row(self, i):
        return self.row_idx[self.row_ptr[i] : self.row_ptr[i + 1]]

    def column(self, j):
        return self.col_idx[self.col_ptr[j] : self.col_ptr[j + 1]]

    def row_degrees(self):
        return np.diff(self.row_ptr)

    def column_degrees(self):
        return np.diff(self.col_ptr)

    def to_dense(self):
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        h[np.repeat(np.arange(self.m), self.row_degrees()), self.row_idx] = 1
        return h

    def syndrome(self, c):
        """Parity-check results for one word or a batch (last axis = bits)."""
        c = check_bits(c, length=self.n, name="c")
        x = c[..., self.row_idx].astype(np.int64)
        sums = np.add.reduceat(x, self.row_ptr[:-1], axis=-1) if self.m else x[..., :0]
        return (sums & 1).astype(np.uint8)

    def has_four_cycle(self):
        """True when two columns share two or more checks."""
        dense = self.to_dense().astype(np.int64)
        overlap = dense.T @ dense
        np.fill_diagonal(overlap, 0)
        return bool(overlap.max(initial=0) >= 2)

    def __eq__(self, other):
        if not isinstance(other, SparseParityCheck):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.row_idx, other.row_idx))

    def __repr__(self):
        return f"SparseParityCheck(n={self.n}, m={self.m}, edges={self.edges})"


@numba.njit(cache=True)
def _peg_kernel(n, m, d, priority):
    var_adj = np.full((n, d), -1, dtype=np.int64)
    chk_adj = np.full((m, n), -1, dtype=np.int64)
    cdeg = np.zeros(m, dtype=np.int64)
    reached_c = np.zeros(m, dtype=np.bool_)
    reached_v = np.zeros(n, dtype=np.bool_)
    frontier = np.empty(n, dtype=np.int64)
    new_c = np.empty(m, dtype=np.int64)
    candidates = np.zeros(m, dtype=np.bool_)
    for j in range(n):
        for e in range(d):
            if e == 0:
                candidates[:] = True
            else:
                reached_c[:] = False
                reached_v[:] = False
                reached_v[j] = True
                frontier[0] = j
                n_front = 1
                n_reached = 0
                while True:
                    n_new = 0
                    for a in range(n_front):
                        v = frontier[a]
                        for b in range(d):
                            c = var_adj[v, b]
                            if c >= 0 and not reached_c[c]:
                                reached_c[c] = True
                                new_c[n_new] = c
                                n_new += 1
                    if n_new == 0:
                        # tree stopped growing: any unreached check is infinitely far
                        for c in range(m):
                            candidates[c] = not reached_c[c]
                        break
                    if n_reached + n_new == m:
                        # every check reached: take the ones first seen at this depth
                        candidates[:] = False
                        for a in range(n_new):
                            candidates[new_c[a]] = True
                        break
                    n_reached += n_new
                    n_front = 0
                    for a in range(n_new):
                        c = new_c[a]
                        for b in range(cdeg[c]):
                            v = chk_adj[c, b]
                            if not reached_v[v]:
                                reached_v[v] = True
                                frontier[n_front] = v
                                n_front += 1
            best = -1
            for c in range(m):
                if not candidates[c]:
                    continue
                dup = False
                for b in range(e):
                    if var_adj[j, b] == c:
                        dup = True
                if dup:
                    continue
                if best < 0 or cdeg[c] < cdeg[best] or (cdeg[c] == cdeg[best] and priority[c] < priority[best]):
                    best = c
            if best < 0:
                return var_adj, cdeg, False
            var_adj[j, e] = best
            chk_adj[best, cdeg[best]] = j
            cdeg[best] += 1
    return var_adj, cdeg, True


def peg_construct(n, k, col_weight=3, seed=0):
    """Progressive edge growth with constant column weight.

    Each new edge of a variable node goes to a check that is unreachable
    from it, or otherwise at maximum depth in its BFS tree.  Ties go to the
    lowest current check degree, then to the lowest position in a
    seed-dependent check ordering.
    """
    n = check_count(n, "n", minimum=2)
    k = check_count(k, "k", minimum=1)
    col_weight = check_count(col_weight, "col_weight", minimum=2)
    if n <= k:
        raise ConfigurationError(f"need n > k, got n={n}, k={k}")
    m = n - k
    if col_weight > m:
        raise ConfigurationError(f"column weight {col_weight} exceeds the {m} available checks")
    priority = np.random.default_rng(check_seed(seed)).permutation(m).astype(np.int64)
    var_adj, _, ok = _peg_kernel(n, m, col_weight, priority)
    if not ok:
        raise ConfigurationError("PEG ran out of admissible check nodes")
    rows = [[] for _ in range(m)]
    for j in range(n):
        for c in var_adj[j]:
            rows[c].append(j)
    return SparseParityCheck(n, rows)


def extract_generator(h):
    """Systematic generator ``[I_k | A^T]`` for a column-permuted ``H = [A | I_m]``.

    Returns ``(G, perm)`` where column ``j`` of ``G`` is original bit
    ``perm[j]``; the first ``k`` entries of ``perm`` are the information
    positions.  Pivots are searched in the right-hand columns first, so an
    ``H`` that already ends in an identity block is left unpermuted.
    """
    dense = h.to_dense() if isinstance(h, SparseParityCheck) else check_bits(h, ndim=2, name="h")
    m, n = dense.shape
    k = n - m
    work = dense.copy()
    pivots = []
    r = 0
    for c in list(range(k, n)) + list(range(k)):
        if r == m:
            break
        hits = np.flatnonzero(work[r:, c])
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            work[[r, p]] = work[[p, r]]
        others = np.flatnonzero(work[:, c])
        others = others[others != r]
        work[others] ^= work[r]
        pivots.append(c)
        r += 1
    if r < m:
        raise RankDeficientError(r, m)
    pivot_set = set(pivots)
    info = [c for c in range(n) if c not in pivot_set]
    perm = np.array(info + pivots, dtype=np.int64)
    a = work[:, info]
    g = np.concatenate([np.eye(k, dtype=np.uint8), a.T], axis=1)
    return BitMatrix.from_array(g), perm


@numba.njit(cache=True)
def _phi(x):
    # -log(tanh(x/2)), its own inverse on (0, inf)
    if x < 1e-4:
        return math.log1p(2.0 / math.expm1(x))
    e = math.exp(x)
    return math.log((e + 1.0) / (e - 1.0))


@numba.njit(cache=True)
def _bp_frame(llr, bits, row_ptr, row_idx, col_ptr, col_edge, max_iters, clip):
    n = llr.size
    m = row_ptr.size - 1
    n_edges = row_idx.size
    v2c = np.empty(n_edges)
    c2v = np.empty(n_edges)
    mag = np.empty(n_edges)
    ch = np.empty(n)
    total = np.empty(n)
    for v in range(n):
        ch[v] = min(max(llr[v], -clip), clip)
        total[v] = ch[v]
    for e in range(n_edges):
        v2c[e] = ch[row_idx[e]]
    it = 0
    while True:
        # hard decision and syndrome; an exact zero posterior is undecided
        ok = True
        for v in range(n):
            if total[v] == 0.0:
                ok = False
            bits[v] = 1 if total[v] < 0.0 else 0
        if ok:
            for c in range(m):
                s = 0
                for e in range(row_ptr[c], row_ptr[c + 1]):
                    s ^= bits[row_idx[e]]
                if s:
                    ok = False
                    break
        if ok:
            return True, it
        if it == max_iters:
            break
        it += 1
        for c in range(m):
            total_phi = 0.0
            negative = False
            zeros = 0
            for e in range(row_ptr[c], row_ptr[c + 1]):
                x = v2c[e]
                if x < 0.0:
                    negative = not negative
                    x = -x
                if x == 0.0:
                    zeros += 1
                    mag[e] = 0.0
                else:
                    mag[e] = _phi(x)
                    total_phi += mag[e]
            for e in range(row_ptr[c], row_ptr[c + 1]):
                if zeros > 1 or (zeros == 1 and mag[e] != 0.0):
                    c2v[e] = 0.0
                    continue
                rest = total_phi - mag[e]
                out = _phi(rest) if rest > 0.0 else clip
                if out > clip:
                    out = clip
                sign_neg = negative != (v2c[e] < 0.0)
                c2v[e] = -out if sign_neg else out
        for v in range(n):
            acc = ch[v]
            for a in range(col_ptr[v], col_ptr[v + 1]):
                acc += c2v[col_edge[a]]
            total[v] = acc
            for a in range(col_ptr[v], col_ptr[v + 1]):
                e = col_edge[a]
                x = acc - c2v[e]
                v2c[e] = min(max(x, -clip), clip)
    return False, it


@numba.njit(cache=True, parallel=True)
def _bp_kernel(llr, row_ptr, row_idx, col_ptr, col_edge, max_iters, clip):
    n_frames, n = llr.shape
    bits = np.zeros((n_frames, n), dtype=np.uint8)
    converged = np.zeros(n_frames, dtype=np.bool_)
    iters = np.zeros(n_frames, dtype=np.int64)
    for f in numba.prange(n_frames):
        ok, it = _bp_frame(llr[f], bits[f], row_ptr, row_idx, col_ptr, col_edge, max_iters, clip)
        converged[f] = ok
        iters[f] = it
    return bits, converged, iters


def decode_bp(llr, h, max_iters=50):
    """Sum-product decoding; positive LLR favours bit 0.

    ``llr`` may be one frame or a batch.  Returns ``(bits, converged,
    iterations)``; ``converged`` is False when no codeword was found within
    ``max_iters`` iterations.
    """
    arr = np.asarray(llr, dtype=np.float64)
    single = arr.ndim == 1
    batch = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
    if batch.shape[1] != h.n:
        raise ValueError(f"llr has length {batch.shape[1]}, expected {h.n}")
    if np.any(np.isnan(batch)):
        raise ValueError("llr contains NaN")
    bits, conv, iters = _bp_kernel(batch, h.row_ptr, h.row_idx, h.col_ptr, h.col_edge,
                                   check_count(max_iters, "max_iters"), LLR_CLIP)
    if single:
        return bits[0], bool(conv[0]), int(iters[0])
    return bits, conv, iters


def encode(u, code):
    """Codewords in original bit order for information words ``u``."""
    return code.encode(u)


def write_alist(path, h):
    col_deg = h.column_degrees()
    row_deg = h.row_degrees()
    max_c = int(col_deg.max(initial=0))
    max_r = int(row_deg.max(initial=0))
    lines = [f"{h.n} {h.m}", f"{max_c} {max_r}",
             " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for j in range(h.n):
        entries = list(h.column(j) + 1) + [0] * (max_c - col_deg[j])
        lines.append(" ".join(map(str, entries)))
    for i in range(h.m):
        entries = list(h.row(i) + 1) + [0] * (max_r - row_deg[i])
        lines.append(" ".join(map(str, entries)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path):
    tokens = iter(int(x) for x in Path(path).read_text().split())
    try:
        n, m = next(tokens), next(tokens)
        max_c, max_r = next(tokens), next(tokens)
        col_deg = [next(tokens) for _ in range(n)]
        row_deg = [next(tokens) for _ in range(m)]
        cols = []
        for j in range(n):
            entries = [next(tokens) for _ in range(max_c)]
            cols.append([x - 1 for x in entries if x > 0])
            if len(cols[-1]) != col_deg[j]:
                raise ValueError(f"{path}: column {j} degree mismatch")
        rows = []
        for i in range(m):
            entries = [next(tokens) for _ in range(max_r)]
            rows.append([x - 1 for x in entries if x > 0])
            if len(rows[-1]) != row_deg[i]:
                raise ValueError(f"{path}: row {i} degree mismatch")
    except StopIteration:
        raise ValueError(f"{path}: truncated alist file") from None
    h = SparseParityCheck(n, rows)
    for j, col in enumerate(cols):
        if sorted(col) != list(h.column(j)):
            raise ValueError(f"{path}: column and row lists disagree at column {j}")
    return h


class LdpcCode(BaseEstimator):
    """PEG-designed LDPC code with systematic encoding and BP decoding.

    ``fit`` builds the parity-check matrix; if it is rank deficient the PEG
    ordering seed is advanced until a full-rank matrix is found.
    """

    def __init__(self, n=2364, k=1576, col_weight=3, max_iters=50, random_state=0, max_attempts=20):
        self.n = n
        self.k = k
        self.col_weight = col_weight
        self.max_iters = max_iters
        self.random_state = random_state
        self.max_attempts = max_attempts

    def fit(self, X=None, y=None):
        seed = check_seed(self.random_state)
        last = None
        for attempt in range(self.max_attempts):
            h = peg_construct(self.n, self.k, self.col_weight, seed + attempt)
            try:
                self._set_code(h)
            except RankDeficientError as exc:
                last = exc
                continue
            self.seed_used_ = seed + attempt
            return self
        raise ConfigurationError(f"no full-rank PEG matrix in {self.max_attempts} attempts ({last})")

    @classmethod
    def from_parity_check(cls, h, max_iters=50):
        if not isinstance(h, SparseParityCheck):
            h = SparseParityCheck.from_dense(h)
        code = cls(n=h.n, k=h.k, col_weight=int(h.column_degrees().max()), max_iters=max_iters, random_state=None)
        code._set_code(h)
        code.seed_used_ = None
        return code

    def _set_code(self, h):
        generator, perm = extract_generator(h)
        self.h_ = h
        self.generator_ = generator
        self.column_permutation_ = perm
        self.info_positions_ = perm[: h.k]
        self._parity_part = generator.to_array()[:, h.k :].astype(np.float64)

    @property
    def rate(self):
        return self.k / self.n

    def encode(self, u):
        check_is_fitted(self, "h_")
        u = check_bits(u, length=self.h_.k, name="u")
        batch = u.reshape(-1, self.h_.k)
        parity = (batch.astype(np.float64) @ self._parity_part).astype(np.int64) & 1
        permuted = np.concatenate([batch, parity.astype(np.uint8)], axis=1)
        out = np.empty_like(permuted)
        out[:, self.column_permutation_] = permuted
        return out.reshape(u.shape[:-1] + (self.h_.n,))

    def transform(self, X):
        """Encode each row of ``X``."""
        return self.encode(X)

    def decode(self, llr):
        check_is_fitted(self, "h_")
        return decode_bp(llr, self.h_, self.max_iters)

    def predict(self, llr):
        """Hard decisions after BP decoding of each row of ``llr``."""
        return self.decode(llr)[0]

    def information_bits(self, c):
        check_is_fitted(self, "h_")
        return np.asarray(c)[..., self.info_positions_]
