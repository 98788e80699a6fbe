"""Bit-packed GF(2) matrices and scrambling matrix generation.

Rows are packed MSB-first into bytes and padded to a whole number of 64-bit
words, so row operations are plain XORs on ``uint64`` views.  Matrices are
immutable once built.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, check_bits, check_count, check_seed

__all__ = [
    "BitMatrix",
    "ScramblerPair",
    "Scrambler",
    "SingularError",
    "apply_vector",
    "apply_rows",
    "invert",
    "load_scrambler",
    "multiply",
    "random_block_scrambler",
    "random_dense_scrambler",
    "read_matrix",
    "write_matrix",
]

_MAX_RETRIES = 100


class SingularError(ArithmeticError):
    """The matrix has no inverse over GF(2)."""

    def __init__(self, rank, size):
        super().__init__(f"matrix is singular over GF(2): rank {rank} < {size}")
        self.rank = rank
        self.size = size


def _row_bytes(cols):
    return 8 * ((cols + 63) // 64)


class BitMatrix:
    """Dense binary matrix stored as packed rows."""

    __slots__ = ("rows", "cols", "_packed")

    def __init__(self, packed, rows, cols):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if rows < 1 or cols < 1:
            raise ValueError(f"matrix dimensions must be >= 1, got {rows}x{cols}")
        if packed.shape != (rows, _row_bytes(cols)):
            raise ValueError("packed storage does not match the dimensions")
        pad = cols % 8
        nbytes = (cols + 7) // 8
        if np.any(packed[:, nbytes:]) or (pad and np.any(packed[:, nbytes - 1] & (0xFF >> pad))):
            raise ValueError("padding bits beyond cols must be zero")
        packed.flags.writeable = False
        self._packed = packed
        self.rows = int(rows)
        self.cols = int(cols)

    @classmethod
    def from_array(cls, array):
        arr = check_bits(array, ndim=2, name="array")
        rows, cols = arr.shape
        packed = np.zeros((rows, _row_bytes(cols)), dtype=np.uint8)
        packed[:, : (cols + 7) // 8] = np.packbits(arr, axis=1)
        return cls(packed, rows, cols)

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, _row_bytes(cols)), dtype=np.uint8), rows, cols)

    @classmethod
    def identity(cls, n):
        packed = np.zeros((n, _row_bytes(n)), dtype=np.uint8)
        idx = np.arange(n)
        packed[idx, idx >> 3] = 0x80 >> (idx & 7)
        return cls(packed, n, n)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def packed(self):
        """Read-only packed rows (MSB-first bytes, zero padded to 64-bit words)."""
        return self._packed

    @property
    def words(self):
        return self._packed.view(np.uint64)

    def to_array(self):
        return np.unpackbits(self._packed, axis=1, count=self.cols)

    def row(self, i):
        if not 0 <= i < self.rows:
            raise IndexError(f"row {i} out of range for {self.rows} rows")
        return np.unpackbits(self._packed[i], count=self.cols)

    def column(self, j):
        if not 0 <= j < self.cols:
            raise IndexError(f"column {j} out of range for {self.cols} columns")
        return ((self._packed[:, j >> 3] >> (7 - (j & 7))) & 1).astype(np.uint8)

    def __getitem__(self, index):
        i, j = index
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"index ({i}, {j}) out of range for shape {self.shape}")
        return int((self._packed[i, j >> 3] >> (7 - (j & 7))) & 1)

    def row_weights(self):
        return np.unpackbits(self._packed, axis=1).sum(axis=1, dtype=np.int64)

    def column_weights(self):
        return self.to_array().sum(axis=0, dtype=np.int64)

    def density(self):
        return float(self.row_weights().sum()) / (self.rows * self.cols)

    def digest(self):
        """SHA-256 of dimensions and packed contents, for provenance records."""
        h = hashlib.sha256(f"{self.rows}x{self.cols}".encode())
        h.update(self._packed.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._packed, other._packed)

    def __hash__(self):
        return hash((self.rows, self.cols, self._packed.tobytes()))

    def __matmul__(self, other):
        return multiply(self, other)

    def __repr__(self):
        return f"BitMatrix({self.rows}x{self.cols}, density={self.density():.3f})"


def multiply(a, b):
    """GF(2) product ``a @ b``."""
    if a.cols != b.rows:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    # float64 accumulates exactly up to 2**53 terms; chunking bounds memory
    bf = b.to_array().astype(np.float64)
    out = np.empty((a.rows, b.cols), dtype=np.uint8)
    step = max(1, 2**22 // max(a.cols, 1))
    for r0 in range(0, a.rows, step):
        block = np.unpackbits(a.packed[r0 : r0 + step], axis=1, count=a.cols).astype(np.float64)
        out[r0 : r0 + step] = (block @ bf).astype(np.int64) & 1
    return BitMatrix.from_array(out)


def invert(a):
    """Inverse over GF(2) by Gauss-Jordan elimination on packed rows.

    Raises SingularError when the rank is below the matrix size.
    """
    if a.rows != a.cols:
        raise ValueError(f"only square matrices can be inverted, got {a.shape}")
    n = a.rows
    width = _row_bytes(n)
    aug = np.concatenate([a.packed, BitMatrix.identity(n).packed], axis=1)
    words = aug.view(np.uint64)
    for c in range(n):
        byte, mask = c >> 3, 0x80 >> (c & 7)
        hits = np.flatnonzero(aug[c:, byte] & mask)
        if hits.size == 0:
            rank = c + _rank_tail(aug[c:, :width], c)
            raise SingularError(rank, n)
        p = c + hits[0]
        if p != c:
            words[[c, p]] = words[[p, c]]
        rows = np.flatnonzero(aug[:, byte] & mask)
        rows = rows[rows != c]
        if rows.size:
            w0 = c >> 6
            words[rows, w0:] ^= words[c, w0:]
    return BitMatrix(aug[:, width:].copy(), n, n)


def _rank_tail(packed, start_col):
    """Rank contribution of the remaining rows, used only for error reports."""
    arr = np.unpackbits(packed, axis=1)[:, start_col:]
    rank = 0
    for col in range(arr.shape[1]):
        hits = np.flatnonzero(arr[rank:, col])
        if hits.size == 0:
            continue
        p = rank + hits[0]
        arr[[rank, p]] = arr[[p, rank]]
        below = np.flatnonzero(arr[:, col])
        below = below[below != rank]
        arr[below] ^= arr[rank]
        rank += 1
        if rank == arr.shape[0]:
            break
    return rank


def apply_vector(v, m):
    """Row vector times matrix over GF(2): ``v @ m``."""
    v = check_bits(v, ndim=1, length=m.rows, name="v")
    sel = np.flatnonzero(v)
    if sel.size == 0:
        return np.zeros(m.cols, dtype=np.uint8)
    acc = np.bitwise_xor.reduce(m.words[sel], axis=0)
    return np.unpackbits(acc.view(np.uint8), count=m.cols)


def apply_rows(vs, m):
    """Apply ``m`` to every row of a 2-D bit array."""
    vs = check_bits(vs, ndim=2, length=m.rows, name="vs")
    out = np.zeros((vs.shape[0], m.cols), dtype=np.uint8)
    words = m.words
    for i, v in enumerate(vs):
        sel = np.flatnonzero(v)
        if sel.size:
            acc = np.bitwise_xor.reduce(words[sel], axis=0)
            out[i] = np.unpackbits(acc.view(np.uint8), count=m.cols)
    return out


@dataclass(frozen=True)
class ScramblerPair:
    """A scrambling matrix and its descrambling inverse.

    ``k`` is the frame length; both matrices are ``k*block_factor`` square.
    ``perturbed`` marks block scramblers in which some blocks carry one
    extra permutation pattern (see :func:`random_block_scrambler`).
    """

    k: int
    forward: BitMatrix
    inverse: BitMatrix
    block_factor: int = 1
    column_weight: int | str = "dense"
    perturbed: bool = False

    def __post_init__(self):
        size = self.k * self.block_factor
        if self.forward.shape != (size, size) or self.inverse.shape != (size, size):
            raise ValueError(f"scrambler matrices must be {size}x{size}")

    @property
    def size(self):
        return self.k * self.block_factor

    def scramble(self, u):
        return apply_vector(u, self.forward)

    def descramble(self, y):
        return apply_vector(y, self.inverse)


def _random_nonsingular(sample, max_retries):
    last = None
    for _ in range(max_retries):
        candidate = sample()
        try:
            return candidate, invert(candidate)
        except SingularError as exc:
            last = exc
    raise ConfigurationError(f"no nonsingular sample after {max_retries} attempts ({last})")


def random_dense_scrambler(k, seed=None, *, max_retries=_MAX_RETRIES):
    """Scrambler whose descrambling matrix is a uniformly random dense matrix.

    The inverse is drawn first (it sets how residual errors spread) and
    rejected until nonsingular; the forward matrix is its GF(2) inverse.
    """
    k = check_count(k, "k", minimum=1)
    rng = np.random.default_rng(check_seed(seed))

    def sample():
        return BitMatrix.from_array(rng.integers(0, 2, size=(k, k), dtype=np.uint8))

    inverse, forward = _random_nonsingular(sample, max_retries)
    return ScramblerPair(k, forward, inverse, 1, "dense")


def _regular_block_support(k, w, rng):
    """Row indices (w x k) of a k x k matrix with every row and column weight w.

    Built as the sum of w random permutation matrices; collisions inside a
    column are removed by swapping entries of one permutation, which keeps
    all row and column weights intact.
    """
    perms = np.stack([rng.permutation(k) for _ in range(w)])
    for _ in range(10_000):
        ordered = np.sort(perms, axis=0)
        clash = np.flatnonzero((ordered[1:] == ordered[:-1]).any(axis=0))
        if clash.size == 0:
            return perms
        for c in clash:
            _, first = np.unique(perms[:, c], return_index=True)
            for p in np.setdiff1d(np.arange(w), first):
                c2 = rng.integers(k)
                perms[p, c], perms[p, c2] = perms[p, c2], perms[p, c]
    raise ConfigurationError(f"could not build a weight-{w} {k}x{k} block")


def _block_pattern(k, w, rng):
    """Dense k x k block with constant row and column weight w."""
    if 2 * w > k:
        out = np.ones((k, k), dtype=np.uint8)
        if w < k:
            perms = _regular_block_support(k, k - w, rng)
            out[perms, np.arange(k)] = 0
        return out
    out = np.zeros((k, k), dtype=np.uint8)
    out[_regular_block_support(k, w, rng), np.arange(k)] = 1
    return out


def random_block_scrambler(k, L, w, seed=None, *, max_retries=_MAX_RETRIES):
    """Block scrambler for ``L`` concatenated frames of ``k`` bits.

    The descrambling matrix is built directly: ``L x L`` blocks of size
    ``k x k``, each with row and column weight ``w``, so every row and column
    of the whole matrix has weight about ``w*L``.  The forward scrambler is
    its inverse.

    If every block has constant row weight, the matrix maps ``a (x) 1_k`` to
    ``(w J_L a) (x) 1_k``, so it is singular unless ``L == 1`` and ``w`` is
    odd.  In every other case a random permutation pattern is XORed onto the
    blocks whose weight parity must flip to make that block-parity matrix
    the identity: the diagonal blocks when ``w`` is even, the off-diagonal
    ones when ``w`` is odd.  Those blocks then have row/column weight
    ``w +- 1`` and the pair is marked ``perturbed``.
    """
    k = check_count(k, "k", minimum=1)
    L = check_count(L, "L", minimum=1)
    w = check_count(w, "w", minimum=1)
    if w > k:
        raise ConfigurationError(f"block weight w={w} exceeds frame length k={k}")
    rng = np.random.default_rng(check_seed(seed))
    size = k * L
    perturb = not (L == 1 and w % 2 == 1)

    def sample():
        dense = np.zeros((size, size), dtype=np.uint8)
        cols = np.arange(k)
        for a in range(L):
            for b in range(L):
                block = _block_pattern(k, w, rng)
                if perturb and w % 2 != (a == b):
                    block[rng.permutation(k), cols] ^= 1
                dense[a * k : (a + 1) * k, b * k : (b + 1) * k] = block
        return BitMatrix.from_array(dense)

    inverse, forward = _random_nonsingular(sample, max_retries)
    return ScramblerPair(k, forward, inverse, L, w, perturbed=perturb)


def write_matrix(path, m):
    """Write ``m`` as ``gf2 v1 rows cols`` followed by one hex line per row."""
    nbytes = (m.cols + 7) // 8
    lines = [f"gf2 v1 {m.rows} {m.cols}"]
    lines.extend(row[:nbytes].tobytes().hex() for row in m.packed)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path):
    text = Path(path).read_text().split()
    if len(text) < 4 or text[0] != "gf2" or text[1] != "v1":
        raise ValueError(f"{path}: missing 'gf2 v1 rows cols' header")
    rows, cols = int(text[2]), int(text[3])
    body = text[4:]
    if len(body) != rows:
        raise ValueError(f"{path}: expected {rows} rows, found {len(body)}")
    nbytes = (cols + 7) // 8
    packed = np.zeros((rows, _row_bytes(cols)), dtype=np.uint8)
    for i, line in enumerate(body):
        raw = bytes.fromhex(line)
        if len(raw) != nbytes:
            raise ValueError(f"{path}: row {i} has {len(raw)} bytes, expected {nbytes}")
        packed[i, :nbytes] = np.frombuffer(raw, dtype=np.uint8)
    return BitMatrix(packed, rows, cols)


def load_scrambler(path, block_factor=1):
    """Build a pair from a file holding the descrambling matrix."""
    inverse = read_matrix(path)
    if inverse.rows != inverse.cols or inverse.rows % block_factor:
        raise ConfigurationError(f"{path}: {inverse.shape} is not a {block_factor}-block square matrix")
    forward = invert(inverse)
    return ScramblerPair(inverse.rows // block_factor, forward, inverse, block_factor, "file")


class Scrambler(TransformerMixin, BaseEstimator):
    """Estimator wrapper that scrambles rows of ``k * block_factor`` bits.

    ``column_weight="dense"`` draws a dense descrambler (only with
    ``block_factor=1`` or small blocks); an integer builds the block-regular
    descrambler of :func:`random_block_scrambler`.

    >>> s = Scrambler(k=16, random_state=3).fit()
    >>> x = np.eye(16, dtype=np.uint8)[:2]
    >>> bool((s.inverse_transform(s.transform(x)) == x).all())
    True
    """

    def __init__(self, k=1576, block_factor=1, column_weight="dense", random_state=None):
        self.k = k
        self.block_factor = block_factor
        self.column_weight = column_weight
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.column_weight == "dense":
            if self.block_factor == 1:
                self.pair_ = random_dense_scrambler(self.k, self.random_state)
            else:
                dense = random_dense_scrambler(self.k * self.block_factor, self.random_state)
                self.pair_ = ScramblerPair(self.k, dense.forward, dense.inverse, self.block_factor, "dense")
        else:
            self.pair_ = random_block_scrambler(self.k, self.block_factor, self.column_weight, self.random_state)
        self.n_features_in_ = self.pair_.size
        if X is not None:
            check_bits(X, ndim=2, length=self.n_features_in_, name="X")
        return self

    def transform(self, X):
        check_is_fitted(self, "pair_")
        return apply_rows(X, self.pair_.forward)

    def inverse_transform(self, X):
        check_is_fitted(self, "pair_")
        return apply_rows(X, self.pair_.inverse)
