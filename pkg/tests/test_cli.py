import json

import pytest

from wiretap import cli
from wiretap.cli import ExperimentConfig, main, validate
from wiretap.gf2 import random_dense_scrambler, write_matrix

SMALL_HARQ = ["--experiment", "harq-curves", "--code", "bch", "--snr-start", "3.5", "--snr-stop", "4.5",
              "--snr-step", "0.5", "--frames", "200"]


def _csvs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix == ".csv"}


def test_validate_flags_problems():
    assert validate(ExperimentConfig()) == []
    assert any("w=" in p for p in validate(ExperimentConfig(w="2000")))
    assert any("q_max" in p for p in validate(ExperimentConfig(q_max=0)))
    assert any("empty" in p for p in validate(ExperimentConfig(snr_start=3.0, snr_stop=2.0)))
    assert any("frames" in p for p in validate(ExperimentConfig(frames=0)))
    assert any("syndrome" in p for p in validate(ExperimentConfig(integrity="syndrome")))
    assert any("scrambler file" in p for p in validate(ExperimentConfig(scrambler="file")))
    assert any("pe_bob_max" in p for p in validate(ExperimentConfig(pe_eve_min=0.7)))


def test_exit_codes(tmp_path, capsys):
    assert main(["--preset", "fig3", "--frames", "0", "--out-dir", str(tmp_path)]) == 2
    assert main(["--preset", "fig1", "--check"]) == 0
    assert "configuration ok" in capsys.readouterr().out
    assert main(["--preset", "fig3", "--scrambler-file", str(tmp_path / "missing.gf2")]) == 2
    assert not any(tmp_path.iterdir())


def test_runtime_failure_removes_partial_outputs(tmp_path, monkeypatch):
    # second artifact cannot be written, so the first must not survive
    monkeypatch.setitem(cli.RUNNERS, "p0-check", lambda cfg: ({"csv": "a\n", "bad.csv": None}, {}))
    assert main(["--experiment", "p0-check", "--out-dir", str(tmp_path)]) == 3
    assert list(tmp_path.iterdir()) == []


def test_config_file_and_overrides(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("experiment = gap-table\nL = 1, 2\nw = 20  # real blocks\nsnr-start = 2.0\n"
                        "snr_stop = 7.0\nsnr_step = 0.1\n")
    args = cli.build_parser().parse_args(["--config", str(cfg_file), "--L", "1,10", "--seed", "9"])
    cfg = cli.config_from_args(args)
    assert cfg.experiment == "gap-table" and cfg.L == (1, 10) and cfg.w == "20" and cfg.seed == 9
    assert cfg.snr_start == 2.0

    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["--config", str(bad)]) == 2


def test_gap_table_output(tmp_path):
    assert main(["--experiment", "gap-table", "--L", "1,2,10", "--w", "none", "--snr-start", "2",
                 "--snr-stop", "7", "--snr-step", "0.05", "--out-dir", str(tmp_path)]) == 0
    (gaps,) = tmp_path.glob("gap-table-*.gaps.csv")
    rows = gaps.read_text().strip().split("\n")[1:]
    values = [float(r.split(",")[-1]) for r in rows]
    assert values[0] > values[1] > values[2]
    assert not list(tmp_path.glob("*.pe_perfect_L1.csv"))


def test_names_follow_config_hash(tmp_path):
    a = ExperimentConfig(out_dir="x", threads=4)
    b = ExperimentConfig(out_dir="y", threads=1)
    assert a.digest() == b.digest()
    assert ExperimentConfig(seed=2).digest() != a.digest()
    # the same frame count reached through --scale hashes the same
    assert ExperimentConfig(frames=1000, scale=0.1).digest() == ExperimentConfig(frames=100).digest()


def test_harq_run_is_reproducible_across_threads(tmp_path):
    one, two = tmp_path / "one", tmp_path / "two"
    assert main(SMALL_HARQ + ["--out-dir", str(one), "--threads", "1"]) == 0
    assert main(SMALL_HARQ + ["--out-dir", str(two), "--threads", "2"]) == 0
    first, second = _csvs(one), _csvs(two)
    assert first == second and len(first) == 2
    (manifest,) = one.glob("*.manifest.json")
    meta = json.loads(manifest.read_text())
    assert meta["seed"] == 1 and meta["frames_per_point"] == 200
    assert meta["noise_method"].startswith("philox")


def test_scrambler_file_and_target_ci(tmp_path):
    path = tmp_path / "s.gf2"
    write_matrix(path, random_dense_scrambler(36, 3).inverse)
    out = tmp_path / "out"
    # code parameters are not flags; go through a config file instead
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("n = 63\nk = 36\nt = 5\n")
    argv = ["--config", str(cfg_file), "--experiment", "harq-curves", "--code", "bch", "--snr-start", "-1",
            "--snr-stop", "-1", "--frames", "5000", "--scrambler-file", str(path), "--target-ci", "0.2",
            "--out-dir", str(out)]
    assert main(argv) == 0
    (report,) = out.glob("*[0-9a-f].json")
    body = json.loads(report.read_text())
    frames = body["points"][0]["bob"]["frames"]
    assert frames < 5000 and frames % 1000 == 0
    assert body["metadata"]["scrambler_sha256"]


def test_p0_check(tmp_path):
    assert main(["--experiment", "p0-check", "--snr-start", "0", "--snr-stop", "2", "--snr-step", "1",
                 "--frames", "50", "--out-dir", str(tmp_path)]) == 0
    (out,) = tmp_path.glob("p0-check-*.csv")
    rows = out.read_text().strip().split("\n")
    assert rows[0] == "ebn0_db,bits,errors,ber,p0,z" and len(rows) == 4
    assert all(abs(float(r.split(",")[-1])) < 5 for r in rows[1:])
