"""Security gap between the SNR Bob needs and the SNR at which Eve is still blind."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigurationError, check_probability

__all__ = [
    "ErrorRateCurve",
    "NoCrossingError",
    "NonMonotoneCurveError",
    "SecurityThresholds",
    "GAP_CSV_FIELDS",
    "gap_endpoints",
    "gap_rows_to_csv",
    "security_gap",
    "snr_at",
    "sweep",
]

GAP_CSV_FIELDS = ("L", "w", "code", "pe_bob_max", "pe_eve_min", "snr_bob_db", "snr_eve_db", "gap_db")


class NoCrossingError(ValueError):
    """The curve never reaches the requested level inside its grid."""


class NonMonotoneCurveError(ValueError):
    pass


@dataclass(frozen=True)
class SecurityThresholds:
    pe_bob_max: float = 1e-5
    pe_eve_min: float = 0.4

    def __post_init__(self):
        check_probability(self.pe_bob_max, "pe_bob_max")
        check_probability(self.pe_eve_min, "pe_eve_min")
        if not 0 < self.pe_bob_max <= self.pe_eve_min <= 0.5:
            raise ConfigurationError(
                f"need 0 < pe_bob_max <= pe_eve_min <= 0.5, got {self.pe_bob_max}, {self.pe_eve_min}")


@dataclass(frozen=True)
class ErrorRateCurve:
    """Error rate versus Eb/N0 in dB, interpolated linearly in log10 of the rate.

    ``ci`` optionally holds (low, high) confidence bounds per point for
    simulated curves.
    """

    snr_db: np.ndarray
    values: np.ndarray
    kind: str = "ber"
    provenance: str = "analytic"
    label: str = ""
    ci: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        snr = np.asarray(self.snr_db, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if snr.ndim != 1 or snr.size == 0 or snr.shape != val.shape:
            raise ValueError("snr grid and values must be 1-D of equal, nonzero length")
        if not (np.all(np.isfinite(snr)) and np.all(np.isfinite(val))):
            raise ValueError("curve entries must be finite")
        if np.any(np.diff(snr) <= 0):
            raise ValueError("snr grid must be strictly increasing")
        if np.any(val < 0) or np.any(val > 1):
            raise ValueError("error rates must lie in [0, 1]")
        if self.kind not in ("ber", "fer"):
            raise ValueError(f"kind must be 'ber' or 'fer', got {self.kind!r}")
        if self.provenance not in ("analytic", "simulated"):
            raise ValueError(f"provenance must be 'analytic' or 'simulated', got {self.provenance!r}")
        object.__setattr__(self, "snr_db", snr)
        object.__setattr__(self, "values", val)
        if self.ci is not None:
            ci = np.asarray(self.ci, dtype=float)
            if ci.shape != (snr.size, 2):
                raise ValueError("ci must have one (low, high) pair per point")
            object.__setattr__(self, "ci", ci)

    def __len__(self):
        return self.snr_db.size

    def _logs(self):
        with np.errstate(divide="ignore"):
            return np.log10(self.values)

    def __call__(self, ebn0_db):
        x = float(ebn0_db)
        grid = self.snr_db
        if not grid[0] <= x <= grid[-1]:
            raise ValueError(f"{x} dB outside curve grid [{grid[0]}, {grid[-1]}]")
        i = min(int(np.searchsorted(grid, x, side="right")) - 1, grid.size - 2)
        if grid.size == 1 or x == grid[i]:
            return float(self.values[max(i, 0)])
        lo, hi = self._logs()[i : i + 2]
        frac = (x - grid[i]) / (grid[i + 1] - grid[i])
        if np.isinf(lo) or np.isinf(hi):
            return float(self.values[i] if frac < 0.5 else self.values[i + 1])
        return float(10.0 ** (lo + frac * (hi - lo)))

    def is_nonincreasing(self, use_ci=True):
        """True when no point rises above an earlier one (beyond the confidence bands, if any)."""
        if use_ci and self.ci is not None:
            # a later lower bound above an earlier upper bound is a real rise
            running_high = np.minimum.accumulate(self.ci[:, 1])
            return bool(np.all(self.ci[1:, 0] <= running_high[:-1]))
        # rounding noise on plateaus near 0.5 is not a rise
        return bool(np.all(np.diff(self.values) <= 1e-12 * self.values[:-1]))


def _crossing(x0, x1, y0, y1, target):
    """SNR where the log-linear segment from (x0, y0) to (x1, y1) equals ``target``."""
    if y0 == y1:
        return x0
    if y0 <= 0 or y1 <= 0:
        # zero endpoint: the segment reaches the target only at the nonzero end
        return x0 if y0 > 0 else x1
    l0, l1, lt = math.log10(y0), math.log10(y1), math.log10(target)
    return x0 + (lt - l0) / (l1 - l0) * (x1 - x0)


def snr_at(curve, target, direction="first-below"):
    """SNR at which ``curve`` crosses ``target``.

    ``first-below`` returns the smallest SNR where the interpolated curve is
    at or below ``target``; ``last-above`` the largest SNR where it is at or
    above it.  Inside a segment the log-linear interpolant is inverted in
    closed form.
    """
    target = check_probability(target, "target")
    if target <= 0:
        raise ValueError("target must be positive")
    x, y = curve.snr_db, curve.values
    if direction not in ("first-below", "last-above"):
        raise ValueError(f"direction must be 'first-below' or 'last-above', got {direction!r}")
    # rounding in log10/10** can put a target read off the curve one ulp outside it
    lo, hi = y.min(), y.max()
    if hi < target <= hi * (1 + 1e-12):
        target = hi
    elif lo * (1 - 1e-12) <= target < lo:
        target = lo
    if not lo <= target <= hi:
        raise NoCrossingError(
            f"{curve.label or 'curve'} never crosses {target:g} in [{x[0]}, {x[-1]}] dB "
            f"(range {y.min():.3g} to {y.max():.3g})")
    if direction == "first-below":
        if y[0] <= target:
            return float(x[0])
        for i in range(len(x) - 1):
            if y[i] > target >= y[i + 1]:
                return float(_crossing(x[i], x[i + 1], y[i], y[i + 1], target))
    elif direction == "last-above":
        if y[-1] >= target:
            return float(x[-1])
        for i in range(len(x) - 2, -1, -1):
            if y[i] >= target > y[i + 1]:
                return float(_crossing(x[i], x[i + 1], y[i], y[i + 1], target))
    raise NoCrossingError(
        f"{curve.label or 'curve'} never crosses {target:g} in [{x[0]}, {x[-1]}] dB "
        f"(range {y.min():.3g} to {y.max():.3g})")


def security_gap(curve, thresholds=SecurityThresholds()):
    """``S_g = snr(Bob reaches pe_bob_max) - snr(Eve last above pe_eve_min)`` in dB.

    Bob and Eve share the curve (same code and decoder).  Non-monotone
    curves, such as HARQ curves, are refused.
    """
    if not curve.is_nonincreasing():
        raise NonMonotoneCurveError(f"{curve.label or 'curve'} is not monotone; a security gap is undefined")
    snr_bob = snr_at(curve, thresholds.pe_bob_max, "first-below")
    snr_eve = snr_at(curve, thresholds.pe_eve_min, "last-above")
    return snr_bob - snr_eve


def gap_endpoints(curve, thresholds=SecurityThresholds()):
    """(snr_bob_db, snr_eve_db, gap_db) for the gap report."""
    snr_bob = snr_at(curve, thresholds.pe_bob_max, "first-below")
    snr_eve = snr_at(curve, thresholds.pe_eve_min, "last-above")
    gap = security_gap(curve, thresholds)
    return snr_bob, snr_eve, gap


def sweep(evaluate, start, stop, step, *, kind="ber", provenance="analytic", label=""):
    """Evaluate ``evaluate(snr)`` on ``start, start+step, ..., <= stop``.

    ``evaluate`` returns either a probability or a ``(value, (low, high))``
    pair for simulated points; any exception aborts the sweep with the
    failing SNR attached.
    """
    if not step > 0:
        raise ConfigurationError(f"step must be positive, got {step}")
    if stop < start:
        raise ConfigurationError(f"empty SNR range [{start}, {stop}]")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    grid = np.round(start + step * np.arange(count), 10)
    values, bounds = [], []
    for s in grid:
        try:
            out = evaluate(float(s))
        except Exception as exc:
            raise RuntimeError(f"sweep failed at {s} dB: {exc}") from exc
        if isinstance(out, tuple):
            value, ci = out
            bounds.append(ci)
        else:
            value = out
        values.append(float(value))
    ci = np.asarray(bounds, dtype=float) if bounds else None
    if bounds and len(bounds) != len(values):
        raise ValueError("evaluate must return confidence bounds for every point or none")
    return ErrorRateCurve(grid, np.asarray(values), kind=kind, provenance=provenance, label=label, ci=ci)


def gap_rows_to_csv(rows):
    """CSV text for gap rows (dicts keyed by :data:`GAP_CSV_FIELDS`)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GAP_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        for key in ("snr_bob_db", "snr_eve_db", "gap_db"):
            if isinstance(out.get(key), float):
                out[key] = f"{out[key]:.4f}"
        writer.writerow(out)
    return buf.getvalue()
