import math

import numpy as np
import pytest

from wiretap.analytic import channel_p0
from wiretap.chansim import (BOB, EVE, ChannelConfig, SoftFrame, combine, hard_decision, llr, modulate,
                             noise_sigma2, standard_normals, transmit, uniform_bits)


def test_modulate():
    assert modulate([0, 1, 0]).tolist() == [1.0, -1.0, 1.0]
    assert np.all(modulate(np.zeros(9, np.uint8)) == 1.0)
    bits = np.random.default_rng(0).integers(0, 2, 50)
    assert np.array_equal(hard_decision(modulate(bits)), bits)
    with pytest.raises(ValueError):
        modulate([0, 2])


def test_sigma2_formula():
    assert noise_sigma2(0.0, 1.0) == pytest.approx(0.5)
    assert ChannelConfig(3.0, 0.5).sigma2 == pytest.approx(1 / (2 * 0.5 * 10**0.3))
    with pytest.raises(ValueError):
        ChannelConfig(1.0, 0.0)


def test_hard_decision_ties_and_signs():
    assert hard_decision(SoftFrame(np.array([0.1, -2.0, 0.0]), 1.0)).tolist() == [0, 1, 0]


def test_llr():
    assert llr(SoftFrame(np.array([1.0]), 0.5))[0] == pytest.approx(4.0)
    y = np.random.default_rng(1).normal(size=100)
    assert np.all(np.sign(llr(SoftFrame(y, 2.0))) == np.sign(y))
    assert abs(llr(SoftFrame(np.array([3.0]), 1e12))[0]) < 1e-10


def test_soft_frame_validation():
    with pytest.raises(ValueError):
        SoftFrame(np.array([np.nan]), 1.0)
    with pytest.raises(ValueError):
        SoftFrame(np.array([1.0]), 0.0)


def test_determinism_and_batch_independence():
    cfg = ChannelConfig(2.0, 0.5, seed=11)
    x = modulate(np.zeros((6, 100), np.uint8))
    batch = transmit(x, cfg, 40).samples
    single = transmit(x[3], cfg, 43).samples
    assert np.array_equal(batch[3], single)
    assert np.array_equal(transmit(x[3], cfg, 43).samples, single)
    assert not np.array_equal(transmit(x[3], cfg, 43, receiver=EVE).samples, single)
    assert not np.array_equal(transmit(x[3], cfg, 43, transmission=1).samples, single)
    assert not np.array_equal(transmit(x[3], ChannelConfig(2.0, 0.5, seed=12), 43).samples, single)


def test_noise_moments_and_independence():
    z_bob = standard_normals(5, 0, 1000, 1000, receiver=BOB).ravel()
    z_eve = standard_normals(5, 0, 1000, 1000, receiver=EVE).ravel()
    assert abs(z_bob.mean()) < 0.005
    assert abs(z_bob.var() - 1) < 0.01
    assert abs(np.corrcoef(z_bob, z_eve)[0, 1]) < 0.01
    # tails are truncated only far out
    assert np.abs(z_bob).max() < 7.5


def test_hard_decision_ber_matches_p0():
    cfg = ChannelConfig(0.0, 1.0, seed=3)
    y = transmit(np.ones((1000, 1000)), cfg, 0)
    errors = int(hard_decision(y).sum())
    p0 = float(channel_p0(0.0))
    assert abs(errors / 1e6 - p0) <= 3 * math.sqrt(p0 * (1 - p0) / 1e6)


def test_combine():
    f = SoftFrame(np.array([0.3, -1.2]), 0.8)
    assert combine([f]) is f or np.array_equal(combine([f]).samples, f.samples)
    clean = SoftFrame(np.array([1.0, -1.0]), 0.5)
    both = combine([clean, clean])
    assert np.array_equal(both.samples, clean.samples) and both.noise_sigma2 == 0.25
    with pytest.raises(ValueError):
        combine([f, SoftFrame(np.zeros(3), 0.8)])
    with pytest.raises(ValueError):
        combine([f, SoftFrame(np.zeros(2), 0.4)])
    with pytest.raises(ValueError):
        combine([])


def test_combined_noise_variance():
    cfg = ChannelConfig(0.0, 1.0, seed=9)
    zero = np.zeros((1000, 1000))
    frames = [transmit(zero, cfg, 0, transmission=q) for q in range(3)]
    out = combine(frames)
    assert out.noise_sigma2 == pytest.approx(0.5 / 3)
    assert abs(out.samples.var() / (0.5 / 3) - 1) < 0.02


def test_uniform_bits_are_keyed_and_fair():
    a = uniform_bits(1, 2, 10, 4, 77)
    assert a.shape == (4, 77) and set(np.unique(a)) <= {0, 1}
    assert np.array_equal(a[2], uniform_bits(1, 2, 12, 1, 77)[0])
    assert abs(uniform_bits(1, 2, 0, 1000, 1000).mean() - 0.5) < 0.005
