import json
import math
import warnings

import numpy as np
import pytest

from wiretap._validation import ConfigurationError
from wiretap.analytic import CodeParams, channel_p0, frame_error_bdd
from wiretap.gf2 import random_dense_scrambler
from wiretap.harq import (BoundedDistanceBackend, ExtrapolationWarning, FerCurve, HarqConfig, HarqReport,
                          LdpcBackend, PerfectScrambler, p_receive_bob, p_receive_eve, pf_arq, pf_q, simulate,
                          simulate_link, simulate_sweep)
from wiretap.ldpc import LdpcCode, peg_construct

BCH = CodeParams(2047, 1354, 69)
GRID = np.round(np.arange(0.0, 14.001, 0.05), 4)


@pytest.fixture(scope="module")
def curve():
    return FerCurve.bounded_distance(BCH, GRID)


def literal_arq_sum(pfs, who):
    """1 - sum_i P_R^(i) (1 - P_f^(i)) exactly as written."""
    power = 1 if who == "bob" else 2
    total = 0.0
    for i in range(1, len(pfs) + 1):
        reach = math.prod(p**power for p in pfs[: i - 1])
        total += reach * (1 - pfs[i - 1])
    return 1 - total


def test_config_validation():
    with pytest.raises(ValueError):
        HarqConfig(q_max=0)
    with pytest.raises(ConfigurationError):
        HarqConfig(eve_strategy="clairvoyant")


def test_fer_curve_validation():
    with pytest.raises(ValueError):
        FerCurve([1.0, 1.0], [0.5, 0.1])
    with pytest.raises(ValueError):
        FerCurve([1.0, 2.0], [0.5, 1.5])
    c = FerCurve([0.0, 1.0], [1e-1, 1e-3])
    assert float(c(0.5)) == pytest.approx(1e-2)


def test_pf_q_shifts(curve):
    assert pf_q(curve, 3.2, 1) == curve(3.2)
    assert float(pf_q(curve, 3.2, 2)) == pytest.approx(float(curve(3.2 + 3.0103)), rel=1e-3)
    assert float(pf_q(curve, 3.2, 4)) == pytest.approx(float(curve(3.2 + 6.0206)), rel=1e-3)


def test_pf_q_clamps_and_flags(curve):
    with pytest.warns(ExtrapolationWarning):
        v = pf_q(curve, 13.0, 2)
    assert v.log == pytest.approx(curve.log_values[-1])


def test_receive_probabilities():
    assert float(p_receive_bob([], 1)) == 1.0
    assert float(p_receive_bob([1.0], 2)) == 1.0
    assert float(p_receive_bob([0.3], 2)) == pytest.approx(0.3)
    assert float(p_receive_eve([], 1)) == 1.0
    assert float(p_receive_eve([1.0], 2)) == 1.0 == float(p_receive_bob([1.0], 2))
    assert float(p_receive_eve([0.3], 2)) == pytest.approx(0.09)


def test_pf_arq_qmax1_is_base_curve(curve):
    for s in GRID[:-1:7]:
        assert pf_arq(curve, s, 1, "bob") == curve(s)
        assert pf_arq(curve, s, 1, "eve") == curve(s)


def test_pf_arq_matches_literal_formula(curve):
    for s in np.arange(1.0, 6.0, 0.25):
        for q_max in (2, 3):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ExtrapolationWarning)
                pfs = [float(pf_q(curve, s, q)) for q in range(1, q_max + 1)]
                for who in ("bob", "eve"):
                    got = float(pf_arq(curve, s, q_max, who))
                    want = literal_arq_sum(pfs, who)
                    # the literal form cancels catastrophically below ~1e-15
                    assert got == pytest.approx(want, rel=1e-9, abs=1e-15)


def test_pf_arq_limits(curve):
    low = 1.0
    assert float(curve(low)) == pytest.approx(1.0)
    expected = float(pf_q(curve, low, 2))
    for who in ("bob", "eve"):
        assert float(pf_arq(curve, low, 2, who)) == pytest.approx(expected, rel=1e-9)
    high = 6.0
    assert float(pf_arq(curve, high, 2, "eve")) == pytest.approx(float(curve(high)), rel=1e-6)


def test_eve_never_better_than_bob(curve):
    for s in np.arange(0.0, 7.0, 0.05):
        assert float(pf_arq(curve, s, 2, "eve")) >= float(pf_arq(curve, s, 2, "bob")) * (1 - 1e-12)


def test_three_regions(curve):
    grid = np.arange(1.0, 7.0, 0.05)
    base = np.array([float(curve(s)) for s in grid])
    bob = np.array([float(pf_arq(curve, s, 2, "bob")) for s in grid])
    eve = np.array([float(pf_arq(curve, s, 2, "eve")) for s in grid])
    s1 = np.flatnonzero((eve / bob >= 0.9) & (eve / bob <= 1.1))
    s2 = np.flatnonzero((eve > 0.5 * base) & (bob < 0.01 * base))
    s3 = np.flatnonzero(np.abs(eve - base) / base < 0.1)
    assert s1.size and s2.size and s3.size
    assert s1.min() < s2.max() and s2.min() < s3.max()
    assert s1.min() < s2[s2 > s1.min()].min() < s3[s3 > s2.min()].max()


def test_qmax1_matches_plain_link():
    be = BoundedDistanceBackend(BCH)
    point = simulate(be, None, HarqConfig(q_max=1), 3.6, 3.6, 600, seed=5)
    plain = simulate_link(be, 3.6, 600, seed=5)
    assert point.bob.frame_errors == plain.frame_errors
    assert point.bob.bit_errors_pre == plain.bit_errors_pre
    assert point.bob.bit_errors_post == plain.bit_errors_post


def test_simulation_invariants_and_batch_independence():
    be = BoundedDistanceBackend(BCH)
    cfg = HarqConfig(q_max=3)
    a = simulate(be, PerfectScrambler(BCH.k, 4), cfg, 3.8, 3.5, 400, seed=2, batch=400)
    b = simulate(be, PerfectScrambler(BCH.k, 4), cfg, 3.8, 3.5, 400, seed=2, batch=36)
    assert a.bob == b.bob and a.eve == b.eve
    for stats in (a.bob, a.eve):
        assert sum(stats.transmissions) == stats.frames == 400
        assert stats.frame_errors <= stats.frames
        assert stats.bit_errors_post <= stats.bits
    # Eve never holds more replicas than Bob asked for
    eve_cum = np.cumsum(a.eve.transmissions[::-1])
    bob_cum = np.cumsum(a.bob.transmissions[::-1])
    assert np.all(eve_cum <= bob_cum)


def test_first_frame_offsets_compose():
    be = BoundedDistanceBackend(BCH)
    cfg = HarqConfig()
    whole = simulate(be, None, cfg, 4.0, 4.0, 300, seed=3)
    first = simulate(be, None, cfg, 4.0, 4.0, 100, seed=3)
    rest = simulate(be, None, cfg, 4.0, 4.0, 200, seed=3, first_frame=100)
    assert whole.bob == first.bob + rest.bob and whole.eve == first.eve + rest.eve


def test_best_subset_is_at_least_as_good():
    be = BoundedDistanceBackend(BCH)
    base = simulate(be, None, HarqConfig(2, "combine-all"), 4.0, 4.0, 1000, seed=1)
    aggressive = simulate(be, None, HarqConfig(2, "best-subset"), 4.0, 4.0, 1000, seed=1)
    assert aggressive.eve.frame_errors <= base.eve.frame_errors
    assert aggressive.bob == base.bob


def test_block_scrambling_blinds_eve_near_4db():
    be = BoundedDistanceBackend(BCH)
    point = simulate(be, PerfectScrambler(BCH.k, 20), HarqConfig(2), 4.0, 4.0, 2000, seed=4)
    assert point.eve.ber > 0.4
    assert point.bob.frame_errors == 0


def test_real_scrambler_spreads_errors():
    code = CodeParams(63, 36, 5)
    be = BoundedDistanceBackend(code)
    pair = random_dense_scrambler(36, 1)
    stats = simulate_link(be, 3.0, 4000, seed=1, scrambler=pair)
    pf = stats.fer
    assert stats.frame_errors > 50
    # a dense descrambler turns a failed frame into about half wrong bits
    assert stats.ber == pytest.approx(pf / 2, rel=0.15)
    assert stats.ber_pre < stats.ber


def test_configuration_errors():
    be = BoundedDistanceBackend(BCH)
    with pytest.raises(ConfigurationError):
        simulate(be, PerfectScrambler(BCH.k, 20), HarqConfig(), 4.0, 4.0, 30)
    with pytest.raises(ConfigurationError):
        simulate(be, PerfectScrambler(100, 1), HarqConfig(), 4.0, 4.0, 10)
    with pytest.raises(ConfigurationError):
        simulate(be, None, HarqConfig(integrity="syndrome"), 4.0, 4.0, 10)


def test_ldpc_backend_with_syndrome_integrity():
    code = LdpcCode.from_parity_check(peg_construct(200, 100, 3, seed=0))
    be = LdpcBackend(code)
    point = simulate(be, None, HarqConfig(2, integrity="syndrome"), 2.0, 2.0, 200, seed=0)
    assert point.bob.fer <= point.eve.fer or point.eve.frame_errors == 0
    assert sum(point.bob.transmissions) == 200


def test_report_serialisation():
    be = BoundedDistanceBackend(BCH)
    report = simulate_sweep(be, None, HarqConfig(), [3.5, 4.0], 50, seed=0)
    again = HarqReport.from_json(report.to_json())
    assert again.points[1].eve == report.points[1].eve
    body = json.loads(report.to_json())
    assert body["metadata"]["noise_method"] and body["metadata"]["seed"] == 0
    lines = report.to_csv().splitlines()
    assert lines[0].startswith("ebn0_db,ebn0_eve_db,frames,fer_bob,fer_eve,ber_bob,ber_eve,ci_")
    assert len(lines) == 3


def test_link_with_several_scramblers_shares_decoding():
    code = CodeParams(63, 36, 5)
    be = BoundedDistanceBackend(code)
    scramblers = [None, random_dense_scrambler(36, 1), PerfectScrambler(36, 3)]
    together = simulate_link(be, 3.0, 600, seed=2, scrambler=scramblers, batch=100)
    for s, stats in zip(scramblers, together):
        assert stats == simulate_link(be, 3.0, 600, seed=2, scrambler=s)
    assert len({st.frame_errors for st in together}) == 1
