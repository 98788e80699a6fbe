"""Closed-form error probabilities for scrambled, bounded-distance decoded codes.

Tail sums are evaluated in the log domain: for codes such as BCH(2047, 1354, 69)
the individual binomial terms span far more than the double-precision range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, logsumexp

from ._validation import check_count, check_probability, check_rate

__all__ = [
    "CodeParams",
    "Probability",
    "block_perfect",
    "channel_p0",
    "curve_to_csv",
    "frame_error_bdd",
    "log_binomial",
    "odd_selection_probability",
    "pe_block_real",
    "pe_perfect_scrambling",
    "pe_real_scrambling",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class CodeParams:
    """An (n, k) block code that corrects up to ``t`` errors."""

    n: int
    k: int
    t: int

    def __post_init__(self):
        check_count(self.n, "n", minimum=2)
        check_count(self.k, "k", minimum=1)
        check_count(self.t, "t", minimum=0)
        if not self.k < self.n:
            raise ValueError(f"need 0 < k < n, got k={self.k}, n={self.n}")
        if self.t > self.n:
            raise ValueError(f"need t <= n, got t={self.t}, n={self.n}")

    @property
    def rate(self):
        return self.k / self.n

    def __str__(self):
        return f"({self.n},{self.k},{self.t})"


class Probability(float):
    """A probability that also carries its natural logarithm.

    The log survives when the value itself underflows to zero, e.g. for
    frame error rates far below 1e-300.
    """

    log: float

    def __new__(cls, value=None, log=None):
        if log is None:
            if value is None:
                raise TypeError("Probability needs a value or a log")
            value = float(value)
            log = math.log(value) if value > 0 else -math.inf
        else:
            log = float(log)
            if log > 0 and log < 1e-12:
                log = 0.0
            value = math.exp(log) if value is None else float(value)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"probability out of range: {value}")
        obj = super().__new__(cls, value)
        obj.log = log
        return obj

    @property
    def log10(self):
        return self.log / math.log(10.0)

    def __repr__(self):
        return f"Probability({float(self)!r}, log={self.log!r})"


def _logs(p):
    """Return (log p, log(1 - p)) using the log companion when available."""
    if isinstance(p, Probability):
        logp = p.log
        value = float(p)
    else:
        value = check_probability(p)
        logp = math.log(value) if value > 0 else -math.inf
    log1m = math.log1p(-value) if value < 1 else -math.inf
    return logp, log1m


def _mul(count, log_value):
    """``count * log_value`` with the convention 0 * log 0 = 0."""
    count = np.asarray(count, dtype=float)
    with np.errstate(invalid="ignore"):
        out = count * log_value
    return np.where(count == 0, 0.0, out)


def log_binomial(n, k):
    """Natural log of the binomial coefficient C(n, k)."""
    n_arr = np.asarray(n)
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr > n_arr):
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    out = gammaln(n_arr + 1.0) - gammaln(k_arr + 1.0) - gammaln(n_arr - k_arr + 1.0)
    out = np.where((k_arr == 0) | (k_arr == n_arr), 0.0, out)
    return float(out) if out.ndim == 0 else out


def _log_binomial_masked(n, k):
    """log C(n, k), -inf where k is outside [0, n]."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    ks = np.where(valid, k, 0.0)
    ns = np.where(valid, n, 0.0)
    out = gammaln(ns + 1.0) - gammaln(ks + 1.0) - gammaln(ns - ks + 1.0)
    return np.where(valid, out, -np.inf)


def _as_probability(log_value):
    log_value = float(log_value)
    if np.isnan(log_value):
        raise FloatingPointError("probability evaluation produced NaN")
    return Probability(log=min(log_value, 0.0))


def channel_p0(ebn0_db, rate=1.0):
    """Raw BPSK bit error probability on AWGN, ``erfc(sqrt(Eb/N0 * R)) / 2``."""
    rate = check_rate(rate)
    esn0 = 10.0 ** (float(ebn0_db) / 10.0) * rate
    # erfc(x)/2 == Phi(-x*sqrt(2)); log_ndtr keeps the log accurate deep in the tail
    return _as_probability(log_ndtr(-math.sqrt(2.0 * esn0)))


def frame_error_bdd(code, p0):
    """Probability that more than ``t`` of ``n`` bits are flipped."""
    logp, log1m = _logs(p0)
    if code.t >= code.n or logp == -math.inf:
        return Probability(0.0)
    i = np.arange(code.t + 1, code.n + 1)
    terms = log_binomial(code.n, i) + _mul(i, logp) + _mul(code.n - i, log1m)
    return _as_probability(logsumexp(terms))


def pe_perfect_scrambling(code, p0):
    """Bit error probability after a perfect single-frame descrambler."""
    pf = frame_error_bdd(code, p0)
    return _as_probability(pf.log - LN2)


def odd_selection_probability(j, w, k):
    """Probability that a random weight-``w`` column picks an odd number of ``j`` errors.

    Works on arrays of ``j``; each entry sums the hypergeometric law
    C(j, i) C(k-j, w-i) / C(k, w) over odd ``i``.
    """
    j = np.atleast_1d(np.asarray(j, dtype=float))
    i = np.arange(1, w + 1, 2, dtype=float)
    jj, ii = np.meshgrid(j, i, indexing="ij")
    logs = _log_binomial_masked(jj, ii) + _log_binomial_masked(k - jj, w - ii) - log_binomial(k, w)
    return np.exp(logs).sum(axis=1)


def _log_pj(code, logp, log1m):
    """log P_j for j = 0..k: j errors on the information bits and a decoding failure."""
    n, k, t = code.n, code.k, code.t
    j = np.arange(k + 1, dtype=float)[:, None]
    r = np.arange(n - k + 1, dtype=float)[None, :]
    i = j + r
    terms = _log_binomial_masked(n - k, r) + _mul(i, logp) + _mul(n - i, log1m)
    terms = np.where(i >= t + 1, terms, -np.inf)
    inner = logsumexp(terms, axis=1)
    return log_binomial(k, np.arange(k + 1)) + inner


def pe_real_scrambling(code, p0, w):
    """Per-bit error probability after a descrambler with column weight ``w``.

    Sums, over the number ``j`` of residual errors on the information part,
    the probability that a column selects an odd number of them.
    """
    w = check_count(w, "w", minimum=1)
    if w > code.k:
        raise ValueError(f"column weight w={w} exceeds k={code.k}")
    logp, log1m = _logs(p0)
    if code.t >= code.n or logp == -math.inf:
        return Probability(0.0)
    log_pj = _log_pj(code, logp, log1m)
    odd = odd_selection_probability(np.arange(code.k + 1), w, code.k)
    with np.errstate(divide="ignore"):
        log_odd = np.log(odd)
    return _as_probability(logsumexp(log_pj + log_odd))


def block_perfect(pf, L):
    """Frame and bit error probability with a perfect ``L``-frame block descrambler."""
    L = check_count(L, "L", minimum=1)
    logp, log1m = _logs(pf)
    if logp == -math.inf:
        zero = Probability(0.0)
        return zero, zero
    if float(pf) < 1e-300:
        # below the double range only the first-order term survives
        log_block = math.log(L) + logp
    else:
        log_block = math.log(-math.expm1(L * log1m))
    pf_block = _as_probability(log_block)
    return pf_block, _as_probability(log_block - LN2)


def pe_block_real(pe_s, L):
    """Error probability of the XOR of ``L`` independent bits each wrong with ``pe_s``."""
    L = check_count(L, "L", minimum=1)
    p = check_probability(pe_s, "pe_s")
    if p == 0:
        return Probability(0.0)
    if p <= 0.5:
        y = L * math.log1p(-2.0 * p) if p < 0.5 else -math.inf
        if isinstance(pe_s, Probability) and p < 1e-300:
            return _as_probability(math.log(L) + pe_s.log)
        return _as_probability(math.log(-math.expm1(y)) - LN2)
    return Probability(0.5 * (1.0 - (1.0 - 2.0 * p) ** L))


def curve_to_csv(snr_db, values, kind):
    """``ebn0_db,value,log10_value,kind`` rows; log10 comes from the log companion when present."""
    if kind not in ("fer", "ber"):
        raise ValueError(f"kind must be 'fer' or 'ber', got {kind!r}")
    lines = ["ebn0_db,value,log10_value,kind"]
    for s, v in zip(snr_db, values):
        if not isinstance(v, Probability):
            v = Probability(v)
        lines.append(f"{float(s):.4f},{float(v):.6e},{v.log10:.6f},{kind}")
    return "\n".join(lines) + "\n"
