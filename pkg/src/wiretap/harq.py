"""Soft-combining HARQ between Alice and Bob, overheard by Eve.

The analytic side models the frame error rate after ``Q`` combined replicas
as the single-transmission curve shifted by ``10 log10(Q)`` dB; Bob asks for
a retransmission after every failure and Eve only sees what Bob asked for.
The Monte Carlo side plays the protocol frame by frame with keyed noise.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import chansim
from ._validation import ConfigurationError, check_count, check_seed
from .analytic import CodeParams, Probability, channel_p0, frame_error_bdd
from .chansim import BOB, DATA, EVE, SCRAMBLE, NOISE_METHOD
from .gf2 import ScramblerPair, apply_rows

__all__ = [
    "BoundedDistanceBackend",
    "ExtrapolationWarning",
    "FerCurve",
    "HarqConfig",
    "HarqPoint",
    "HarqReport",
    "LdpcBackend",
    "PerfectScrambler",
    "ReceiverStats",
    "pf_arq",
    "pf_q",
    "p_receive_bob",
    "p_receive_eve",
    "simulate",
    "simulate_link",
    "simulate_sweep",
]

STRATEGIES = ("combine-all", "best-subset")
INTEGRITY = ("genie", "syndrome")


class ExtrapolationWarning(RuntimeWarning):
    """A curve was queried outside its SNR grid and the edge value was used."""


@dataclass(frozen=True)
class HarqConfig:
    q_max: int = 2
    eve_strategy: str = "combine-all"
    integrity: str = "genie"

    def __post_init__(self):
        check_count(self.q_max, "q_max", minimum=1)
        if self.eve_strategy not in STRATEGIES:
            raise ConfigurationError(f"eve_strategy must be one of {STRATEGIES}, got {self.eve_strategy!r}")
        if self.integrity not in INTEGRITY:
            raise ConfigurationError(f"integrity must be one of {INTEGRITY}, got {self.integrity!r}")


class FerCurve:
    """Frame error rate sampled on an SNR grid, interpolated linearly in log10(P_f)."""

    def __init__(self, snr_db, values):
        snr = np.asarray(snr_db, dtype=float)
        logs = np.array([v.log if isinstance(v, Probability) else
                         (math.log(v) if v > 0 else -np.inf) for v in np.atleast_1d(values)], dtype=float)
        if snr.ndim != 1 or snr.size < 1 or snr.size != logs.size:
            raise ValueError("snr grid and values must be 1-D of equal, nonzero length")
        if np.any(np.diff(snr) <= 0):
            raise ValueError("snr grid must be strictly increasing")
        if not np.all(np.isfinite(snr)):
            raise ValueError("snr grid must be finite")
        if np.any(logs > 1e-12):
            raise ValueError("frame error rates must lie in [0, 1]")
        self.snr_db = snr
        self.log_values = np.minimum(logs, 0.0)
        self.snr_db.flags.writeable = False
        self.log_values.flags.writeable = False

    @classmethod
    def bounded_distance(cls, code, snr_db):
        """Exact bounded-distance FER sampled on ``snr_db``."""
        return cls(snr_db, [frame_error_bdd(code, channel_p0(s, code.rate)) for s in snr_db])

    @property
    def values(self):
        return np.exp(self.log_values)

    def __call__(self, ebn0_db):
        x = float(ebn0_db)
        grid = self.snr_db
        if x < grid[0] or x > grid[-1]:
            warnings.warn(f"{x:.4f} dB lies outside the curve grid [{grid[0]}, {grid[-1]}]; clamped",
                          ExtrapolationWarning, stacklevel=2)
            x = min(max(x, grid[0]), grid[-1])
        i = int(np.searchsorted(grid, x, side="right")) - 1
        if i >= grid.size - 1:
            return Probability(log=self.log_values[-1])
        a, b = self.log_values[i], self.log_values[i + 1]
        if x == grid[i]:
            return Probability(log=a)
        if np.isinf(a) or np.isinf(b):
            # a zero endpoint makes the log-linear segment degenerate
            return Probability(log=a if x - grid[i] < grid[i + 1] - x else b)
        frac = (x - grid[i]) / (grid[i + 1] - grid[i])
        return Probability(log=a + frac * (b - a))


def pf_q(curve, ebn0_db, q):
    """FER after averaging ``q`` replicas: the curve read ``10 log10 q`` dB higher."""
    q = check_count(q, "q", minimum=1)
    return curve(float(ebn0_db) + 10.0 * math.log10(q))


def _receive_logs(pfs, q, power):
    q = check_count(q, "q", minimum=1)
    if len(pfs) < q - 1:
        raise ValueError(f"need at least {q - 1} frame error rates, got {len(pfs)}")
    log = 0.0
    for p in pfs[: q - 1]:
        lp = p.log if isinstance(p, Probability) else (math.log(p) if p > 0 else -math.inf)
        log += power * lp
    return Probability(log=log)


def p_receive_bob(pfs, q):
    """Probability that Bob gets ``q`` transmissions; ``pfs[i]`` is P_f after ``i + 1`` replicas."""
    return _receive_logs(pfs, q, 1)


def p_receive_eve(pfs, q):
    """Probability that Eve gets ``q`` useful transmissions on a channel equal to Bob's."""
    return _receive_logs(pfs, q, 2)


def pf_arq(curve, ebn0_db, q_max, who="bob"):
    """Frame error rate after up to ``q_max`` transmissions for ``who`` in {bob, eve}.

    Evaluated as a product (Bob) or a nested recursion (Eve) that equals
    ``1 - sum_i P_R^(i) (1 - P_f^(i))`` but never subtracts nearly equal numbers.
    """
    q_max = check_count(q_max, "q_max", minimum=1)
    if who not in ("bob", "eve"):
        raise ValueError(f"who must be 'bob' or 'eve', got {who!r}")
    pfs = [pf_q(curve, ebn0_db, q) for q in range(1, q_max + 1)]
    if who == "bob":
        return Probability(log=sum(p.log for p in pfs))
    # F_q = a_q (a_q F_{q+1} + 1 - a_q), kept in logs so tiny values survive
    log_fer = pfs[-1].log
    for p in reversed(pfs[:-1]):
        log_miss = math.log1p(-float(p)) if float(p) < 1.0 else -math.inf
        log_fer = p.log + float(np.logaddexp(p.log + log_fer, log_miss))
    return Probability(log=log_fer)


# --- code backends -------------------------------------------------------


class BoundedDistanceBackend:
    """Abstract t-error-correcting decoder: success iff at most ``t`` hard errors.

    On failure the decoder returns the hard decisions unchanged.  Only the
    error pattern matters, so codewords carry the information word followed
    by zero parity.
    """

    def __init__(self, code):
        if not isinstance(code, CodeParams):
            code = CodeParams(*code)
        self.code = code
        self.n, self.k = code.n, code.k
        self.info_positions = np.arange(code.k)

    @property
    def rate(self):
        return self.code.rate

    def describe(self):
        return f"bdd{self.code}"

    def encode(self, u):
        return np.concatenate([u, np.zeros((u.shape[0], self.n - self.k), dtype=np.uint8)], axis=1)

    def decode(self, samples, sigma2, codewords):
        hard = (samples < 0).view(np.uint8)
        ok = np.count_nonzero(hard != codewords, axis=1) <= self.code.t
        words = np.where(ok[:, None], codewords, hard)
        return words, ok


class LdpcBackend:
    """Sum-product decoding of a fitted :class:`~wiretap.ldpc.LdpcCode`."""

    def __init__(self, code):
        if not hasattr(code, "h_"):
            raise ConfigurationError("LDPC code must be fitted before use")
        self.code = code
        self.n, self.k = code.h_.n, code.h_.k
        self.info_positions = code.info_positions_

    @property
    def rate(self):
        return self.k / self.n

    def describe(self):
        return f"ldpc({self.n},{self.k},seed={self.code.seed_used_})"

    def encode(self, u):
        return self.code.encode(u)

    def decode(self, samples, sigma2, codewords):
        bits, conv, _ = self.code.decode(2.0 * samples / sigma2)
        return bits, conv


# --- scrambling models ---------------------------------------------------


@dataclass(frozen=True)
class PerfectScrambler:
    """Idealised descrambler: a residual error anywhere in a block of
    ``block_factor`` frames leaves every bit of the block wrong with probability 1/2."""

    k: int
    block_factor: int = 1

    def __post_init__(self):
        check_count(self.k, "k", minimum=1)
        check_count(self.block_factor, "block_factor", minimum=1)

    def describe(self):
        return f"perfect(L={self.block_factor})"


def _scrambler_info(scrambler):
    if scrambler is None:
        return {"kind": "none", "block_factor": 1}
    if isinstance(scrambler, PerfectScrambler):
        return {"kind": "perfect", "block_factor": scrambler.block_factor}
    return {"kind": "matrix", "block_factor": scrambler.block_factor,
            "column_weight": scrambler.column_weight, "sha256": scrambler.inverse.digest()}


def _descramble(residual, scrambler, seed, frame_start):
    """Post-descrambling error patterns for a batch of information-part residuals."""
    if scrambler is None:
        return residual
    L = scrambler.block_factor
    F, k = residual.shape
    blocks = residual.reshape(F // L, L * k)
    hit = blocks.any(axis=1)
    out = np.zeros_like(blocks)
    if not hit.any():
        return out.reshape(F, k)
    if isinstance(scrambler, PerfectScrambler):
        coins = chansim.uniform_bits(seed, SCRAMBLE, frame_start // L, F // L, L * k)
        out[hit] = coins[hit]
    else:
        out[hit] = apply_rows(blocks[hit], scrambler.inverse)
    return out.reshape(F, k)


# --- statistics ----------------------------------------------------------


def _ci(successes, trials):
    if trials == 0:
        return (0.0, 1.0)
    ci = binomtest(int(successes), int(trials)).proportion_ci(0.95, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class ReceiverStats:
    """Counts for one receiver at one SNR point.

    ``transmissions[q - 1]`` counts frames decoded from ``q`` received replicas.
    """

    k: int
    q_max: int
    frames: int = 0
    transmissions: list = field(default_factory=list)
    frame_errors: int = 0
    bit_errors_pre: int = 0
    bit_errors_post: int = 0
    frame_errors_post: int = 0

    def __post_init__(self):
        if not self.transmissions:
            self.transmissions = [0] * self.q_max

    def add(self, other):
        if (self.k, self.q_max) != (other.k, other.q_max):
            raise ValueError("cannot merge statistics of different configurations")
        return ReceiverStats(
            self.k, self.q_max, self.frames + other.frames,
            [a + b for a, b in zip(self.transmissions, other.transmissions)],
            self.frame_errors + other.frame_errors,
            self.bit_errors_pre + other.bit_errors_pre,
            self.bit_errors_post + other.bit_errors_post,
            self.frame_errors_post + other.frame_errors_post,
        )

    __add__ = add

    @property
    def bits(self):
        return self.frames * self.k

    @property
    def fer(self):
        return self.frame_errors / self.frames if self.frames else math.nan

    @property
    def ber_pre(self):
        return self.bit_errors_pre / self.bits if self.frames else math.nan

    @property
    def ber(self):
        """Bit error rate after descrambling."""
        return self.bit_errors_post / self.bits if self.frames else math.nan

    def fer_ci(self):
        return _ci(self.frame_errors, self.frames)

    def ber_ci(self):
        # treats bits as independent, which understates the width for bursty errors
        return _ci(self.bit_errors_post, self.bits)

    def to_dict(self):
        return asdict(self)


@dataclass
class HarqPoint:
    ebn0_bob: float
    ebn0_eve: float
    bob: ReceiverStats
    eve: ReceiverStats


@dataclass
class HarqReport:
    points: list
    metadata: dict

    CSV_FIELDS = ("ebn0_db", "ebn0_eve_db", "frames", "fer_bob", "fer_eve", "ber_bob", "ber_eve",
                  "ci_fer_bob", "ci_fer_eve", "ci_ber_bob", "ci_ber_eve")

    def to_json(self):
        body = {"metadata": self.metadata,
                "points": [{"ebn0_bob": p.ebn0_bob, "ebn0_eve": p.ebn0_eve,
                            "bob": p.bob.to_dict(), "eve": p.eve.to_dict()} for p in self.points]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        body = json.loads(text)
        points = [HarqPoint(p["ebn0_bob"], p["ebn0_eve"], ReceiverStats(**p["bob"]), ReceiverStats(**p["eve"]))
                  for p in body["points"]]
        return cls(points, body["metadata"])

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_FIELDS)
        for p in self.points:
            half = [(hi - lo) / 2 for lo, hi in (p.bob.fer_ci(), p.eve.fer_ci(), p.bob.ber_ci(), p.eve.ber_ci())]
            writer.writerow([f"{p.ebn0_bob:.4f}", f"{p.ebn0_eve:.4f}", p.bob.frames,
                             *(f"{v:.6e}" for v in (p.bob.fer, p.eve.fer, p.bob.ber, p.eve.ber, *half))])
        return buf.getvalue()


# --- Monte Carlo ---------------------------------------------------------


def _check_setup(backend, scrambler, frames, batch, first_frame=0):
    frames = check_count(frames, "frames", minimum=1)
    first_frame = check_count(first_frame, "first_frame")
    L = 1
    if scrambler is not None:
        if not isinstance(scrambler, (ScramblerPair, PerfectScrambler)):
            raise ConfigurationError(f"unsupported scrambler {type(scrambler).__name__}")
        if scrambler.k != backend.k:
            raise ConfigurationError(f"scrambler frame length {scrambler.k} != code dimension {backend.k}")
        L = scrambler.block_factor
    if frames % L or first_frame % L:
        raise ConfigurationError(f"frames ({frames}) and first_frame ({first_frame}) must be multiples of L={L}")
    batch = check_count(batch, "batch", minimum=1)
    batch = max(L, batch - batch % L)
    return frames, batch


def _accumulate(stats, residual, post, failed, used):
    stats.frames += residual.shape[0]
    stats.frame_errors += int(failed.sum())
    stats.bit_errors_pre += int(np.count_nonzero(residual))
    stats.bit_errors_post += int(np.count_nonzero(post))
    stats.frame_errors_post += int(post.any(axis=1).sum())
    counts = np.bincount(used, minlength=stats.q_max + 1)
    for q in range(1, stats.q_max + 1):
        stats.transmissions[q - 1] += int(counts[q])


def _harq_batch(backend, scrambler, cfg, ch_bob, ch_eve, start, count, seed, bob_stats, eve_stats):
    n, k, q_max = backend.n, backend.k, cfg.q_max
    u = chansim.uniform_bits(seed, DATA, start, count, k)
    words = backend.encode(u)
    symbols = chansim.modulate(words)
    info = backend.info_positions

    bob_sum = np.zeros((count, n))
    bob_out = np.empty((count, n), dtype=np.uint8)
    bob_done = np.zeros(count, dtype=bool)
    bob_ok = np.zeros(count, dtype=bool)
    bob_used = np.zeros(count, dtype=np.int64)
    eve_rx = []
    eve_out = np.empty((count, n), dtype=np.uint8)
    eve_ok = np.zeros(count, dtype=bool)

    for q in range(1, q_max + 1):
        active = np.flatnonzero(~bob_done)
        if active.size == 0:
            break
        yb = chansim.transmit(symbols, ch_bob, start, receiver=BOB, transmission=q - 1).samples
        ye = chansim.transmit(symbols, ch_eve, start, receiver=EVE, transmission=q - 1).samples
        bob_sum[active] += yb[active]
        bob_used[active] = q
        out, flag = backend.decode(bob_sum[active] / q, ch_bob.sigma2 / q, words[active])
        bob_out[active] = out
        correct = np.all(out == words[active], axis=1)
        bob_ok[active] = correct
        accepted = correct if cfg.integrity == "genie" else flag
        bob_done[active[accepted]] = True

        # Eve hears this transmission because Bob caused it
        eve_rx.append(ye)
        eve_active = active[~eve_ok[active]]
        if eve_active.size == 0:
            continue
        if cfg.eve_strategy == "combine-all":
            subsets = [tuple(range(q))]
        else:
            subsets = [s + (q - 1,) for r in range(q) for s in itertools.combinations(range(q - 1), r)]
            subsets.sort(key=lambda s: (-len(s), s))
        for subset in subsets:
            todo = eve_active[~eve_ok[eve_active]]
            if todo.size == 0:
                break
            avg = sum(eve_rx[i][todo] for i in subset) / len(subset)
            out, flag = backend.decode(avg, ch_eve.sigma2 / len(subset), words[todo])
            correct = np.all(out == words[todo], axis=1)
            if len(subset) == q or cfg.eve_strategy == "combine-all":
                # the full average is her fallback output
                eve_out[todo] = out
            eve_out[todo[correct]] = out[correct]
            eve_ok[todo] |= correct

    for stats, out, ok in ((bob_stats, bob_out, bob_ok), (eve_stats, eve_out, eve_ok)):
        residual = out[:, info] ^ u
        post = _descramble(residual, scrambler, seed, start)
        _accumulate(stats, residual, post, ~ok, bob_used)


def simulate(backend, scrambler, cfg, ebn0_bob, ebn0_eve, frames, seed=0, *, batch=2000, first_frame=0):
    """Monte Carlo HARQ at one SNR pair; returns a :class:`HarqPoint`.

    Information words are drawn directly in the scrambled domain, which has
    the same law as scrambling uniform plaintext.  Results depend only on
    ``seed`` and the frame indices ``first_frame .. first_frame + frames - 1``,
    not on ``batch``.
    """
    if not isinstance(cfg, HarqConfig):
        raise TypeError("cfg must be a HarqConfig")
    frames, batch = _check_setup(backend, scrambler, frames, batch, first_frame)
    seed = check_seed(seed)
    if cfg.integrity == "syndrome" and isinstance(backend, BoundedDistanceBackend):
        raise ConfigurationError("syndrome integrity needs the LDPC backend")
    ch_bob = chansim.ChannelConfig(ebn0_bob, backend.rate, seed)
    ch_eve = chansim.ChannelConfig(ebn0_eve, backend.rate, seed)
    bob = ReceiverStats(backend.k, cfg.q_max)
    eve = ReceiverStats(backend.k, cfg.q_max)
    for start in range(first_frame, first_frame + frames, batch):
        count = min(batch, first_frame + frames - start)
        _harq_batch(backend, scrambler, cfg, ch_bob, ch_eve, start, count, seed, bob, eve)
    return HarqPoint(float(ebn0_bob), float(ebn0_eve), bob, eve)


def simulate_link(backend, ebn0_db, frames, seed=0, *, scrambler=None, replicas=1, batch=2000, first_frame=0):
    """Plain one-receiver Monte Carlo decoding the average of ``replicas`` transmissions.

    Uses Bob's noise streams, so ``replicas=1`` reproduces the first
    transmission of :func:`simulate` exactly.  A list of scramblers is
    applied to the same decoded frames and gives a list of stats.
    """
    replicas = check_count(replicas, "replicas", minimum=1)
    many = isinstance(scrambler, (list, tuple))
    scramblers = list(scrambler) if many else [scrambler]
    if not scramblers:
        raise ConfigurationError("empty scrambler list")
    for s in scramblers:
        frames, _ = _check_setup(backend, s, frames, batch, first_frame)
    block = math.lcm(*(getattr(s, "block_factor", 1) for s in scramblers))
    batch = max(block, check_count(batch, "batch", minimum=1) // block * block)
    seed = check_seed(seed)
    ch = chansim.ChannelConfig(ebn0_db, backend.rate, seed)
    stats = [ReceiverStats(backend.k, 1) for _ in scramblers]
    for start in range(first_frame, first_frame + frames, batch):
        count = min(batch, first_frame + frames - start)
        u = chansim.uniform_bits(seed, DATA, start, count, backend.k)
        words = backend.encode(u)
        symbols = chansim.modulate(words)
        acc = np.zeros((count, backend.n))
        for q in range(replicas):
            acc += chansim.transmit(symbols, ch, start, receiver=BOB, transmission=q).samples
        out, _ = backend.decode(acc / replicas, ch.sigma2 / replicas, words)
        ok = np.all(out == words, axis=1)
        residual = out[:, backend.info_positions] ^ u
        for st, s in zip(stats, scramblers):
            _accumulate(st, residual, _descramble(residual, s, seed, start), ~ok, np.ones(count, dtype=np.int64))
    return stats if many else stats[0]


def simulate_sweep(backend, scrambler, cfg, snrs, frames, seed=0, *, eve_offset_db=0.0, batch=2000,
                   progress=None):
    """Run :func:`simulate` over ``snrs`` (Bob's Eb/N0) and collect a :class:`HarqReport`."""
    snrs = [float(s) for s in snrs]
    if not snrs:
        raise ConfigurationError("empty SNR grid")
    points = []
    for s in snrs:
        point = simulate(backend, scrambler, cfg, s, s + eve_offset_db, frames, seed, batch=batch)
        points.append(point)
        if progress is not None:
            progress(point)
    metadata = {
        "seed": check_seed(seed),
        "code": backend.describe(),
        "scrambler": _scrambler_info(scrambler),
        "q_max": cfg.q_max,
        "eve_strategy": cfg.eve_strategy,
        "integrity": cfg.integrity,
        "eve_offset_db": eve_offset_db,
        "frames_per_point": frames,
        "noise_method": NOISE_METHOD,
    }
    return HarqReport(points, metadata)
