"""Command-line driver for the analytic curves, Monte Carlo runs and gap tables.

Usage::

    wiretap --preset fig1 --out-dir out
    wiretap --config my.cfg --frames 2000 --threads 4

A config file holds ``key = value`` lines; flags override it.  Output files
are named ``<experiment>-<hash>.<ext>`` from a hash of every setting that
affects the numbers, so reruns overwrite identical files.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import functools
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, chansim
from ._validation import ConfigurationError
from .analytic import (CodeParams, block_perfect, channel_p0, curve_to_csv, frame_error_bdd, pe_block_real,
                       pe_real_scrambling)
from .gf2 import load_scrambler, random_dense_scrambler
from .harq import (BoundedDistanceBackend, FerCurve, HarqConfig, HarqReport, LdpcBackend, PerfectScrambler,
                   ReceiverStats, pf_arq, simulate, simulate_link)
from .secgap import (ErrorRateCurve, NoCrossingError, SecurityThresholds, gap_endpoints, gap_rows_to_csv)

log = logging.getLogger("wiretap")

EXPERIMENTS = ("bch-curves", "ldpc-curves", "harq-curves", "gap-table", "p0-check")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass
class ExperimentConfig:
    experiment: str = "bch-curves"
    code: str = "bch"
    n: int = 2047
    k: int = 1354
    t: int = 69
    col_weight: int = 3
    L: tuple = (1,)
    w: str = "none"
    scrambler: str = "perfect"
    scrambler_file: str = ""
    snr_start: float = 0.0
    snr_stop: float = 8.0
    snr_step: float = 0.1
    frames: int = 10000
    q_max: int = 2
    eve_strategy: str = "combine-all"
    integrity: str = "genie"
    pe_bob_max: float = 1e-5
    pe_eve_min: float = 0.4
    seed: int = 1
    target_ci: float = 0.0
    out_dir: str = "."
    # execution only: never part of the hash
    threads: int = 0
    scale: float = 1.0

    EXECUTION_KEYS = ("out_dir", "threads")

    def grid(self):
        count = int(math.floor((self.snr_stop - self.snr_start) / self.snr_step + 1e-9)) + 1
        return [round(self.snr_start + i * self.snr_step, 10) for i in range(max(count, 0))]

    def w_value(self):
        return None if self.w in ("none", "", "dense") else int(self.w)

    def scaled_frames(self):
        block = max(self.L) if self.experiment == "harq-curves" else 1
        frames = max(block, int(round(self.frames * self.scale)))
        return frames - frames % block

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["L"] = list(self.L)
        return out

    def digest(self):
        keyed = {k: v for k, v in self.to_dict().items() if k not in self.EXECUTION_KEYS}
        keyed["frames"] = self.scaled_frames()
        keyed.pop("scale")
        if self.scrambler_file:
            keyed["scrambler_file"] = hashlib.sha256(Path(self.scrambler_file).read_bytes()).hexdigest()
        text = json.dumps(keyed, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


PRESETS = {
    "fig1": dict(experiment="bch-curves", code="bch", n=2047, k=1354, t=69, L=(1, 2, 10), w="20",
                 snr_start=2.0, snr_stop=7.0, snr_step=0.05),
    "fig2": dict(experiment="ldpc-curves", code="ldpc", n=2364, k=1576, L=(1, 2, 10), scrambler="dense",
                 snr_start=1.0, snr_stop=2.6, snr_step=0.2, frames=10000),
    "fig3": dict(experiment="harq-curves", code="bch", n=2047, k=1354, t=69, L=(1,), q_max=2,
                 snr_start=2.0, snr_stop=6.0, snr_step=0.25, frames=20000),
    "fig4": dict(experiment="harq-curves", code="ldpc", n=2364, k=1576, L=(1,), q_max=2,
                 snr_start=0.0, snr_stop=3.0, snr_step=0.25, frames=2000),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if key == "L":
        if isinstance(value, (list, tuple)):
            return tuple(int(v) for v in value)
        return tuple(int(v) for v in str(value).replace(",", " ").split())
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def load_config_file(path):
    """Parse a ``key = value`` file into a dict of typed settings."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = lambda s: s.strip().replace("-", "_")
    text = Path(path).read_text()
    try:
        parser.read_string("[experiment]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    out = {}
    for key, value in parser["experiment"].items():
        if key == "l":
            key = "L"
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ConfigurationError(f"{path}: bad value for {key}: {value!r}") from None
    return out


def validate(cfg):
    """Return a list of problems with ``cfg``; empty when it can run."""
    problems = []
    if cfg.experiment not in EXPERIMENTS:
        problems.append(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    if cfg.code not in ("bch", "ldpc"):
        problems.append("code must be 'bch' or 'ldpc'")
    if not 0 < cfg.k < cfg.n:
        problems.append(f"need 0 < k < n, got k={cfg.k}, n={cfg.n}")
    if cfg.code == "bch" and not 0 <= cfg.t <= cfg.n:
        problems.append(f"t={cfg.t} outside [0, n]")
    if cfg.code == "ldpc" and cfg.col_weight < 2:
        problems.append("col_weight must be >= 2")
    if not cfg.L or any(v < 1 for v in cfg.L):
        problems.append("L must list block factors >= 1")
    w = None
    try:
        w = cfg.w_value()
    except ValueError:
        problems.append(f"w must be an integer, 'dense' or 'none', got {cfg.w!r}")
    if w is not None and not 1 <= w <= cfg.k:
        problems.append(f"w={w} must lie in [1, k={cfg.k}]")
    if cfg.scrambler not in ("perfect", "dense", "none", "file"):
        problems.append("scrambler must be perfect, dense, none or file")
    if cfg.scrambler == "file" or cfg.scrambler_file:
        if not cfg.scrambler_file or not Path(cfg.scrambler_file).is_file():
            problems.append(f"scrambler file {cfg.scrambler_file!r} does not exist")
    if not cfg.snr_step > 0:
        problems.append("snr_step must be positive")
    elif not cfg.grid():
        problems.append("SNR grid is empty (snr_stop < snr_start)")
    if cfg.frames < 1:
        problems.append("frames must be >= 1")
    if not cfg.scale > 0:
        problems.append("scale must be positive")
    if cfg.q_max < 1:
        problems.append("q_max must be >= 1")
    if cfg.eve_strategy not in ("combine-all", "best-subset"):
        problems.append("eve_strategy must be combine-all or best-subset")
    if cfg.integrity not in ("genie", "syndrome"):
        problems.append("integrity must be genie or syndrome")
    if cfg.integrity == "syndrome" and cfg.code != "ldpc":
        problems.append("syndrome integrity needs code = ldpc")
    if not 0 < cfg.pe_bob_max <= cfg.pe_eve_min <= 0.5:
        problems.append("need 0 < pe_bob_max <= pe_eve_min <= 0.5")
    if cfg.target_ci < 0:
        problems.append("target_ci must be >= 0")
    if cfg.threads < 0:
        problems.append("threads must be >= 0")
    if cfg.experiment == "harq-curves" and cfg.scrambler == "dense" and max(cfg.L) > 1:
        problems.append("harq-curves supports dense scrambling only with L = 1")
    if not 0 <= cfg.seed < 2**64:
        problems.append("seed must lie in [0, 2**64)")
    return problems


# --- experiments -------------------------------------------------------


def _fmt(x):
    return f"{float(x):.6e}"


def _csv(header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def _analytic_families(cfg):
    """Yield (label, L, w, evaluate) for the analytic BER families."""
    code = CodeParams(cfg.n, cfg.k, cfg.t)
    w = cfg.w_value()

    @functools.lru_cache(maxsize=None)
    def pf(s):
        return frame_error_bdd(code, channel_p0(s, code.rate))

    @functools.lru_cache(maxsize=None)
    def pe_single(s):
        return pe_real_scrambling(code, channel_p0(s, code.rate), w)

    for L in cfg.L:
        yield f"pe_perfect_L{L}", L, "perfect", lambda s, L=L: block_perfect(pf(s), L)[1]
    if w is not None:
        for L in cfg.L:
            yield f"pe_real_w{w}_L{L}", L, w, lambda s, L=L: pe_block_real(pe_single(s), L)


def _gap_rows(cfg, curves, code_label):
    thresholds = SecurityThresholds(cfg.pe_bob_max, cfg.pe_eve_min)
    rows = []
    for curve, L, w in curves:
        try:
            snr_bob, snr_eve, gap = gap_endpoints(curve, thresholds)
        except (NoCrossingError, ValueError) as exc:
            log.warning("no gap for %s: %s", curve.label, exc)
            snr_bob = snr_eve = gap = "nan"
        rows.append(dict(L=L, w=w, code=code_label, pe_bob_max=cfg.pe_bob_max, pe_eve_min=cfg.pe_eve_min,
                         snr_bob_db=snr_bob, snr_eve_db=snr_eve, gap_db=gap))
    return rows


def run_bch_curves(cfg, with_curves=True):
    grid = cfg.grid()
    code = CodeParams(cfg.n, cfg.k, cfg.t)
    header = ["ebn0_db", "p0", "pf"]
    columns = [[_fmt(channel_p0(s, code.rate)) for s in grid],
               [_fmt(frame_error_bdd(code, channel_p0(s, code.rate))) for s in grid]]
    gap_curves = []
    outputs = {}
    for label, L, w, evaluate in _analytic_families(cfg):
        values = [evaluate(s) for s in grid]
        header.append(label)
        columns.append([_fmt(v) for v in values])
        gap_curves.append((ErrorRateCurve(grid, [float(v) for v in values], label=label), L, w))
        if with_curves:
            outputs[f"{label}.csv"] = curve_to_csv(grid, values, "ber")
        log.info("%s done", label)
    if with_curves:
        rows = [[f"{s:.4f}"] + [c[i] for c in columns] for i, s in enumerate(grid)]
        outputs["csv"] = _csv(header, rows)
    outputs["gaps.csv"] = gap_rows_to_csv(_gap_rows(cfg, gap_curves, f"bch{code}"))
    return outputs, {}


def _build_ldpc(cfg):
    from .ldpc import LdpcCode

    code = LdpcCode(n=cfg.n, k=cfg.k, col_weight=cfg.col_weight, random_state=cfg.seed).fit()
    digest = hashlib.sha256(code.h_.row_idx.tobytes() + code.h_.row_ptr.tobytes()).hexdigest()
    return LdpcBackend(code), {"ldpc_seed": code.seed_used_, "ldpc_sha256": digest}


def _backend(cfg):
    if cfg.code == "bch":
        return BoundedDistanceBackend(CodeParams(cfg.n, cfg.k, cfg.t)), {}
    return _build_ldpc(cfg)


def _scrambler(cfg, k, L=1):
    if cfg.scrambler_file:
        pair = load_scrambler(cfg.scrambler_file, L)
        if pair.k != k:
            raise ConfigurationError(f"scrambler file is for k={pair.k}, code has k={k}")
        return pair, {"scrambler_sha256": pair.inverse.digest()}
    if cfg.scrambler == "none":
        return None, {}
    if cfg.scrambler == "dense":
        pair = random_dense_scrambler(k, cfg.seed)
        return pair, {"scrambler_sha256": pair.inverse.digest()}
    return PerfectScrambler(k, L), {}


def _rel_halfwidth(errors, trials):
    if errors == 0:
        return math.inf
    lo, hi = ReceiverStats(1, 1, trials, [trials], errors).fer_ci()
    return (hi - lo) / 2 / (errors / trials)


def _chunks(cfg, cap, block):
    """Frame counts per step: one shot, or small steps when a CI target is set."""
    if cfg.target_ci <= 0:
        return [cap]
    step = max(block, min(cap, 1000) // block * block)
    sizes = []
    done = 0
    while done < cap:
        sizes.append(min(step, cap - done))
        done += sizes[-1]
    return sizes


def run_ldpc_curves(cfg):
    backend, meta = _backend(cfg)
    scrambler, smeta = _scrambler(cfg, backend.k)
    meta.update(smeta)
    frames = cfg.scaled_frames()
    header = ["ebn0_db", "frames", "frame_errors", "fer", "fer_ci_low", "fer_ci_high", "ber"]
    header += [f"pe_perfect_L{L}" for L in cfg.L]
    rows, curves = [], {L: [] for L in cfg.L}
    grid = cfg.grid()
    for s in grid:
        stats = None
        for size in _chunks(cfg, frames, 1):
            done = stats.frames if stats else 0
            part = simulate_link(backend, s, size, cfg.seed, scrambler=scrambler, first_frame=done)
            stats = part if stats is None else stats + part
            if cfg.target_ci > 0 and _rel_halfwidth(stats.frame_errors, stats.frames) <= cfg.target_ci:
                break
        lo, hi = stats.fer_ci()
        derived = [float(block_perfect(stats.fer, L)[1]) for L in cfg.L]
        for L, v in zip(cfg.L, derived):
            curves[L].append(v)
        rows.append([f"{s:.4f}", str(stats.frames), str(stats.frame_errors), _fmt(stats.fer), _fmt(lo), _fmt(hi),
                     _fmt(stats.ber)] + [_fmt(v) for v in derived])
        log.info("%.2f dB: FER %.3e (95%% CI %.2e..%.2e, %d frames)", s, stats.fer, lo, hi, stats.frames)
    gap_curves = [(ErrorRateCurve(grid, curves[L], provenance="simulated", label=f"L{L}"), L, "perfect")
                  for L in cfg.L]
    outputs = {"csv": _csv(header, rows),
               "gaps.csv": gap_rows_to_csv(_gap_rows(cfg, gap_curves, backend.describe()))}
    return outputs, meta


def run_harq_curves(cfg):
    backend, meta = _backend(cfg)
    L = max(cfg.L)
    scrambler, smeta = _scrambler(cfg, backend.k, L)
    meta.update(smeta)
    hcfg = HarqConfig(cfg.q_max, cfg.eve_strategy, cfg.integrity)
    frames = cfg.scaled_frames()
    points = []
    for s in cfg.grid():
        point = None
        for size in _chunks(cfg, frames, getattr(scrambler, "block_factor", 1)):
            done = point.bob.frames if point else 0
            part = simulate(backend, scrambler, hcfg, s, s, size, cfg.seed, first_frame=done)
            if point is None:
                point = part
            else:
                point.bob, point.eve = point.bob + part.bob, point.eve + part.eve
            if cfg.target_ci > 0 and all(_rel_halfwidth(r.frame_errors, r.frames) <= cfg.target_ci
                                         for r in (point.bob, point.eve)):
                break
        points.append(point)
        (blo, bhi), (elo, ehi) = point.bob.fer_ci(), point.eve.fer_ci()
        log.info("%.2f dB: FER bob %.3e (+-%.1e) eve %.3e (+-%.1e), %d frames",
                 s, point.bob.fer, (bhi - blo) / 2, point.eve.fer, (ehi - elo) / 2, point.bob.frames)
    report = HarqReport(points, {
        "seed": cfg.seed, "code": backend.describe(), "q_max": cfg.q_max, "eve_strategy": cfg.eve_strategy,
        "integrity": cfg.integrity, "scrambler": cfg.scrambler, "L": L, "noise_method": chansim.NOISE_METHOD,
        **meta})
    outputs = {"csv": report.to_csv(), "json": report.to_json()}
    if cfg.code == "bch":
        code = CodeParams(cfg.n, cfg.k, cfg.t)
        grid = cfg.grid()
        hi = grid[-1] + 10 * math.log10(cfg.q_max) + 0.01
        fine = np.round(np.arange(grid[0], hi, 0.01), 4)
        curve = FerCurve.bounded_distance(code, fine)
        rows = []
        for s in grid:
            pf1 = curve(s)
            bob, eve = pf_arq(curve, s, cfg.q_max, "bob"), pf_arq(curve, s, cfg.q_max, "eve")
            pb_bob, _ = block_perfect(bob, L)
            pb_eve, _ = block_perfect(eve, L)
            rows.append([f"{s:.4f}", _fmt(pf1), _fmt(bob), _fmt(eve), _fmt(pb_bob), _fmt(pb_eve)])
        outputs["analytic.csv"] = _csv(["ebn0_db", "pf_no_arq", "pf_arq_bob", "pf_arq_eve",
                                        f"pf_block_bob_L{L}", f"pf_block_eve_L{L}"], rows)
    return outputs, meta


def run_p0_check(cfg):
    rows = []
    for s in cfg.grid():
        ch = chansim.ChannelConfig(s, 1.0, cfg.seed)
        frames = cfg.scaled_frames()
        errors = 0
        for start in range(0, frames, 1000):
            count = min(1000, frames - start)
            y = chansim.transmit(np.ones((count, cfg.n)), ch, start)
            errors += int(chansim.hard_decision(y).sum())
        bits = frames * cfg.n
        p0 = float(channel_p0(s))
        z = (errors / bits - p0) / math.sqrt(p0 * (1 - p0) / bits) if 0 < p0 < 1 else 0.0
        rows.append([f"{s:.4f}", str(bits), str(errors), _fmt(errors / bits), _fmt(p0), f"{z:.3f}"])
        log.info("%.2f dB: BER %.4e vs %.4e (z=%.2f)", s, errors / bits, p0, z)
    return {"csv": _csv(["ebn0_db", "bits", "errors", "ber", "p0", "z"], rows)}, {}


RUNNERS = {
    "bch-curves": run_bch_curves,
    "ldpc-curves": run_ldpc_curves,
    "harq-curves": run_harq_curves,
    "gap-table": lambda cfg: run_bch_curves(cfg, with_curves=False),
    "p0-check": run_p0_check,
}


def run(cfg):
    """Run ``cfg`` and write its artifacts; returns the list of written paths."""
    problems = validate(cfg)
    if problems:
        raise ConfigurationError("; ".join(problems))
    if cfg.threads:
        # via ldpc so its threading-layer choice applies first
        from .ldpc import numba

        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    stem = f"{cfg.experiment}-{digest}"
    written = []
    try:
        started = time.time()
        outputs, meta = RUNNERS[cfg.experiment](cfg)
        for suffix, text in outputs.items():
            path = out_dir / f"{stem}.{suffix}"
            path.write_text(text)
            written.append(path)
        manifest = {
            "config": cfg.to_dict(), "config_hash": digest, "frames_per_point": cfg.scaled_frames(),
            "seed": cfg.seed, "noise_method": chansim.NOISE_METHOD, "version": __version__,
            "outputs": sorted(p.name for p in written), "elapsed_s": round(time.time() - started, 3),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **meta,
        }
        path = out_dir / f"{stem}.manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def build_parser():
    p = argparse.ArgumentParser(prog="wiretap", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--code", choices=("bch", "ldpc"))
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-start", type=float)
    p.add_argument("--snr-stop", type=float)
    p.add_argument("--snr-step", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--scale", type=float, help="multiply frames per point (desk-scale runs)")
    p.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    p.add_argument("--out-dir")
    p.add_argument("--scrambler", choices=("perfect", "dense", "none", "file"))
    p.add_argument("--scrambler-file", help="descrambling matrix in 'gf2 v1' text format")
    p.add_argument("--eve-strategy", choices=("combine-all", "best-subset"))
    p.add_argument("--integrity", choices=("genie", "syndrome"))
    p.add_argument("--qmax", type=int, dest="q_max")
    p.add_argument("--L", dest="L", help="block factor(s), e.g. 1,2,10")
    p.add_argument("--w", help="block column weight, or 'none'")
    p.add_argument("--pe-bob-max", type=float)
    p.add_argument("--pe-eve-min", type=float)
    p.add_argument("--target-ci", type=float, help="stop a point once the 95%% CI half-width / FER is below this")
    p.add_argument("--check", action="store_true", help="validate the configuration and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def config_from_args(args):
    settings = {}
    if args.preset:
        settings.update(PRESETS[args.preset])
    if args.config:
        settings.update(load_config_file(args.config))
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            settings[f.name] = _coerce(f.name, value)
    return ExperimentConfig(**settings)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        problems = validate(cfg)
    except (ConfigurationError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if problems:
        for problem in problems:
            log.error("config: %s", problem)
        return EXIT_CONFIG
    if args.check:
        print("configuration ok")
        return EXIT_OK
    try:
        written = run(cfg)
    except ConfigurationError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
