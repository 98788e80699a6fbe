import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiretap._validation import ConfigurationError
from wiretap.analytic import CodeParams, block_perfect, channel_p0, frame_error_bdd
from wiretap.harq import FerCurve, pf_arq
from wiretap.secgap import (ErrorRateCurve, NoCrossingError, NonMonotoneCurveError, SecurityThresholds,
                            gap_endpoints, gap_rows_to_csv, security_gap, snr_at, sweep)

BCH = CodeParams(2047, 1354, 69)


def test_two_point_log_linear_inversion():
    curve = ErrorRateCurve([0.0, 10.0], [0.1, 1e-6])
    # log10 goes -1 -> -6; -3 is 2/5 of the way
    assert snr_at(curve, 1e-3) == pytest.approx(4.0, abs=1e-12)
    assert snr_at(curve, 1e-3, "last-above") == pytest.approx(4.0, abs=1e-12)


def test_grid_value_and_no_crossing():
    curve = ErrorRateCurve([0.0, 1.0, 2.0], [0.3, 0.01, 1e-4])
    assert snr_at(curve, 0.01) == 1.0
    assert snr_at(curve, 0.01, "last-above") == 1.0
    with pytest.raises(NoCrossingError):
        snr_at(curve, 0.45)
    with pytest.raises(NoCrossingError):
        snr_at(curve, 1e-6)
    with pytest.raises(ValueError):
        snr_at(curve, 0.01, "sideways")


def test_curve_validation():
    with pytest.raises(ValueError):
        ErrorRateCurve([0.0, 0.0], [0.1, 0.01])
    with pytest.raises(ValueError):
        ErrorRateCurve([0.0, 1.0], [0.1, np.nan])
    with pytest.raises(ValueError):
        ErrorRateCurve([0.0], [0.1], kind="ser")
    with pytest.raises(ConfigurationError):
        SecurityThresholds(0.1, 0.01)
    with pytest.raises(ConfigurationError):
        SecurityThresholds(1e-5, 0.6)


def test_directions_differ_on_plateaus():
    curve = ErrorRateCurve([0.0, 1.0, 2.0, 3.0], [0.5, 0.1, 0.1, 1e-3])
    assert snr_at(curve, 0.1, "first-below") == 1.0
    assert snr_at(curve, 0.1, "last-above") == 2.0


def test_degenerate_thresholds_give_zero_gap():
    curve = ErrorRateCurve([0.0, 5.0], [0.45, 1e-7])
    assert security_gap(curve, SecurityThresholds(1e-3, 1e-3)) == pytest.approx(0.0, abs=1e-12)


def test_non_monotone_curve_refused():
    curve = FerCurve.bounded_distance(BCH, np.arange(0.0, 12.0, 0.05))
    grid = np.arange(1.0, 6.0, 0.05)
    eve = ErrorRateCurve(grid, [float(pf_arq(curve, s, 2, "eve")) for s in grid], kind="fer")
    with pytest.raises(NonMonotoneCurveError):
        security_gap(eve)


def test_simulated_curve_monotonicity_uses_bands():
    ci = np.array([[0.2, 0.4], [0.25, 0.45], [0.01, 0.03]])
    noisy = ErrorRateCurve([0, 1, 2], [0.3, 0.32, 0.02], provenance="simulated", ci=ci)
    assert noisy.is_nonincreasing()
    assert not noisy.is_nonincreasing(use_ci=False)


def _bch_perfect(L):
    return sweep(lambda s: block_perfect(frame_error_bdd(BCH, channel_p0(s, BCH.rate)), L)[1], 2.0, 7.0, 0.05)


def test_bch_gap_shrinks_with_L():
    gaps = [security_gap(_bch_perfect(L)) for L in (1, 2, 10)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[0] == pytest.approx(1.236, abs=0.01)


def test_gap_monotone_in_thresholds():
    curve = _bch_perfect(1)
    by_eve = [security_gap(curve, SecurityThresholds(1e-5, e)) for e in (0.01, 0.1, 0.3, 0.45)]
    assert all(a <= b + 1e-12 for a, b in zip(by_eve, by_eve[1:]))
    by_bob = [security_gap(curve, SecurityThresholds(b, 0.4)) for b in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(a <= b + 1e-12 for a, b in zip(by_bob, by_bob[1:]))


def test_sweep_matches_pointwise_and_wraps_failures():
    f = lambda s: 0.5 * math.exp(-s)
    curve = sweep(f, 0.0, 1.0, 0.25)
    assert list(curve.snr_db) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(v == f(s) for s, v in zip(curve.snr_db, curve.values))
    assert len(sweep(f, 3.0, 3.0, 0.5)) == 1

    def bad(s):
        if s > 0.4:
            raise ArithmeticError("boom")
        return 0.1

    with pytest.raises(RuntimeError, match="0.5 dB"):
        sweep(bad, 0.0, 1.0, 0.5)
    with pytest.raises(ConfigurationError):
        sweep(f, 0.0, 1.0, 0.0)


def test_sweep_keeps_confidence_bounds():
    curve = sweep(lambda s: (0.1, (0.05, 0.2)), 0.0, 1.0, 0.5, provenance="simulated")
    assert curve.ci.shape == (3, 2)


def test_gap_csv():
    curve = _bch_perfect(2)
    bob, eve, gap = gap_endpoints(curve)
    text = gap_rows_to_csv([dict(L=2, w="perfect", code="bch", pe_bob_max=1e-5, pe_eve_min=0.4,
                                 snr_bob_db=bob, snr_eve_db=eve, gap_db=gap)])
    header, row = text.strip().split("\n")
    assert header == "L,w,code,pe_bob_max,pe_eve_min,snr_bob_db,snr_eve_db,gap_db"
    assert row.endswith(f"{gap:.4f}")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=2, max_size=12),
       st.floats(-5.0, -0.5), st.floats(0.0, 1.0))
def test_inversion_round_trip(drops, top, where):
    grid = np.arange(len(drops) + 1, dtype=float)
    logs = top - np.concatenate([[0.0], np.cumsum(drops)])
    curve = ErrorRateCurve(grid, 10.0**logs)
    x = where * grid[-1]
    y = curve(x)
    for direction in ("first-below", "last-above"):
        assert snr_at(curve, y, direction) == pytest.approx(x, abs=0.02)
