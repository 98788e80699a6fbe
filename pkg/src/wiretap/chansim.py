"""BPSK over AWGN with counter-based, replayable noise.

Every noise sample is a pure function of ``(seed, receiver, transmission,
frame index)``: a Philox4x64 counter is positioned at the frame's block and
its raw words are turned into Gaussians by Box-Muller.  Simulating frames
in any order, batch size or thread count therefore gives bit-identical
samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox

from ._validation import check_bits, check_count, check_rate, check_seed

__all__ = [
    "BOB",
    "EVE",
    "NOISE_METHOD",
    "ChannelConfig",
    "SoftFrame",
    "combine",
    "hard_decision",
    "llr",
    "modulate",
    "noise_sigma2",
    "standard_normals",
    "transmit",
    "uniform_bits",
]

BOB = 0
EVE = 1
# stream ids used for non-noise randomness
DATA = 2
SCRAMBLE = 3

NOISE_METHOD = "philox4x64-box-muller-40r24a"
_MASK64 = (1 << 64) - 1


def noise_sigma2(ebn0_db, rate):
    """Per-dimension noise variance for unit-energy BPSK symbols."""
    return 1.0 / (2.0 * check_rate(rate) * 10.0 ** (float(ebn0_db) / 10.0))


@dataclass(frozen=True)
class ChannelConfig:
    ebn0_db: float
    rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        check_rate(self.rate)
        check_seed(self.seed)

    @property
    def sigma2(self):
        return noise_sigma2(self.ebn0_db, self.rate)


@dataclass(frozen=True)
class SoftFrame:
    """Channel outputs; the last axis runs over code bits."""

    samples: np.ndarray
    noise_sigma2: float

    def __post_init__(self):
        if not self.noise_sigma2 > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_sigma2}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("channel samples must be finite")


def _raw_words(seed, stream, start_block, n_words):
    key = np.array([check_seed(seed), stream & _MASK64], dtype=np.uint64)
    counter = np.array([start_block & _MASK64, 0, 0, 0], dtype=np.uint64)
    return Philox(key=key, counter=counter).random_raw(n_words)


def _stream_id(receiver, transmission):
    return (int(receiver) << 32) | int(transmission)


def _frame_words(seed, stream, frame_start, n_frames, per_frame):
    blocks = -(-per_frame // 4)
    raw = _raw_words(seed, stream, frame_start * blocks, n_frames * blocks * 4)
    return raw.reshape(n_frames, blocks * 4)[:, :per_frame]


def standard_normals(seed, frame_start, n_frames, n, *, receiver=BOB, transmission=0):
    """Unit-variance Gaussian noise for frames ``frame_start .. frame_start+n_frames-1``.

    Row ``f`` depends only on ``(seed, receiver, transmission, frame_start+f)``.
    Each 64-bit word yields one Box-Muller pair: its top 40 bits set the
    radius (so samples are truncated near 7.4 sigma) and the low 24 bits the
    angle.
    """
    half = (n + 1) // 2
    raw = _frame_words(seed, _stream_id(receiver, transmission), frame_start, n_frames, half)
    u = (raw >> np.uint64(24)).view(np.int64).astype(np.float64)
    u *= 2.0**-40
    u += 2.0**-41
    radius = np.log(u)
    radius *= -2.0
    np.sqrt(radius, out=radius)
    angle = (raw & np.uint64(0xFFFFFF)).astype(np.uint32).astype(np.float32)
    angle *= np.float32(2.0 * math.pi / 2**24)
    out = np.empty((n_frames, 2 * half))
    out[:, :half] = np.cos(angle)
    out[:, half:] = np.sin(angle)
    out[:, :half] *= radius
    out[:, half:] *= radius
    return out[:, :n]


def uniform_bits(seed, stream, frame_start, n_frames, n):
    """Fair random bits keyed by frame index, e.g. information words."""
    raw = _frame_words(seed, _stream_id(stream, 0) | (1 << 63), frame_start, n_frames, -(-n // 64))
    return np.unpackbits(raw.view(np.uint8), axis=1, count=n)


def modulate(bits):
    """BPSK: bit 0 -> +1, bit 1 -> -1."""
    bits = check_bits(bits, name="bits")
    return 1.0 - 2.0 * bits.astype(np.float64)


def transmit(symbols, cfg, frame_index, *, receiver=BOB, transmission=0):
    """Add AWGN to ``symbols``; a 2-D input is a batch starting at ``frame_index``."""
    symbols = np.asarray(symbols, dtype=np.float64)
    check_count(frame_index, "frame_index")
    batch = symbols.reshape(-1, symbols.shape[-1]) if symbols.ndim else symbols.reshape(1, 1)
    z = standard_normals(cfg.seed, frame_index, batch.shape[0], batch.shape[1],
                         receiver=receiver, transmission=transmission)
    sigma2 = cfg.sigma2
    return SoftFrame((batch + math.sqrt(sigma2) * z).reshape(symbols.shape), sigma2)


def hard_decision(frame):
    """Sign detector; an exact 0.0 is decided as bit 0."""
    samples = frame.samples if isinstance(frame, SoftFrame) else np.asarray(frame)
    return (samples < 0).astype(np.uint8)


def llr(frame):
    """Channel log-likelihood ratios, positive favouring bit 0."""
    return 2.0 * frame.samples / frame.noise_sigma2


def combine(frames):
    """Sample-wise average of replicas; the noise variance drops by their count."""
    frames = list(frames)
    if not frames:
        raise ValueError("combine needs at least one frame")
    shape = frames[0].samples.shape
    sigma2 = frames[0].noise_sigma2
    for f in frames[1:]:
        if f.samples.shape != shape:
            raise ValueError(f"frame shapes differ: {f.samples.shape} vs {shape}")
        if not math.isclose(f.noise_sigma2, sigma2, rel_tol=1e-12):
            raise ValueError("replicas must share the same noise variance")
    q = len(frames)
    mean = np.mean([f.samples for f in frames], axis=0) if q > 1 else frames[0].samples
    return SoftFrame(mean, sigma2 / q)
