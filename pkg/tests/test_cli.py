"""Command line interface, exercised in-process through main().

Calling main() directly keeps the suite fast; one subprocess test at the
end confirms the module entry point works outside the test process too.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from densereg import io as vio
from densereg.cli import main
from densereg.geometry import Volume3D


def read_text(path):
    with open(path, "r", encoding="ascii") as fh:
        return fh.read()


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


PHANTOM_ARGS = ["--dims", "16", "--organs", "3", "--deformation",
                "translation", "--magnitude", "0.08", "--noise-sigma",
                "0.01", "--seed", "3"]
REGISTER_ARGS = ["--grid", "5", "--steps", "5", "--q", "0.4"]


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("phantom")
    rc = main(["phantom", "--out-dir", str(d)] + PHANTOM_ARGS)
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def register_dir(tmp_path_factory, phantom_dir):
    d = tmp_path_factory.mktemp("reg")
    rc = main(["register",
               "--fixed", str(phantom_dir / "fixed.hdr"),
               "--moving", str(phantom_dir / "moving.hdr"),
               "--fixed-labels", str(phantom_dir / "fixed_labels.hdr"),
               "--moving-labels", str(phantom_dir / "moving_labels.hdr"),
               "--out-dir", str(d), "--report", str(d / "report.csv")]
              + REGISTER_ARGS)
    assert rc == 0
    return d


class TestPhantom:
    def test_artifacts_written(self, phantom_dir):
        for stem in ("fixed", "moving", "fixed_labels", "moving_labels",
                     "truth_field"):
            assert (phantom_dir / f"{stem}.hdr").exists(), stem
            assert (phantom_dir / f"{stem}.raw").exists(), stem

    def test_summary_line(self, phantom_dir, capsys, tmp_path):
        rc = main(["phantom", "--out-dir", str(tmp_path)] + PHANTOM_ARGS)
        assert rc == 0
        out = capsys.readouterr().out
        assert "seed=3" in out and "16x16x16" in out

    def test_deterministic_across_runs(self, phantom_dir, tmp_path):
        rc = main(["phantom", "--out-dir", str(tmp_path)] + PHANTOM_ARGS)
        assert rc == 0
        for stem in ("fixed", "moving_labels", "truth_field"):
            assert read_bytes(tmp_path / f"{stem}.raw") \
                == read_bytes(phantom_dir / f"{stem}.raw"), stem

    def test_round_trip_readable(self, phantom_dir):
        vol = vio.read_volume(str(phantom_dir / "fixed.hdr"))
        assert vol.dims == (16, 16, 16)
        labels = vio.read_volume(str(phantom_dir / "fixed_labels.hdr"),
                                 as_labels=True)
        assert labels.is_label and labels.data.max() >= 1
        field = vio.read_field(str(phantom_dir / "truth_field.hdr"))
        assert field.vectors.shape == (16, 16, 16, 3)

    def test_bad_magnitude_is_usage_error(self, tmp_path, capsys):
        rc = main(["phantom", "--out-dir", str(tmp_path),
                   "--magnitude", "0.9"])
        assert rc == 1
        capsys.readouterr()


class TestRegister:
    def test_artifacts_written(self, register_dir):
        for name in ("field.hdr", "field.raw", "warped.hdr", "warped.raw",
                     "warped_labels.hdr", "warped_labels.raw", "report.txt",
                     "timings.txt", "report.csv"):
            assert (register_dir / name).exists(), name

    def test_report_contents(self, register_dir):
        text = read_text(register_dir / "report.txt")
        for key in ("dice_mean=", "std_jac=", "folding_fraction=",
                    "grid=5,5,5", "capture_range=0.4", "steps=5,5,5",
                    "lambda=1.5", "refine_steps=0", "label_loss_kind=nonlocal"):
            assert key in text, key
        csv = read_text(register_dir / "report.csv")
        assert csv.startswith("label,dice")
        timings = read_text(register_dir / "timings.txt")
        assert "correlation" in timings and "total" in timings

    def test_stdout_matches_report_file(self, phantom_dir, tmp_path, capsys):
        d = tmp_path / "out"
        rc = main(["register",
                   "--fixed", str(phantom_dir / "fixed.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--out-dir", str(d)] + REGISTER_ARGS)
        assert rc == 0
        out = capsys.readouterr().out
        assert out == read_text(d / "report.txt")

    def test_deterministic_artifacts(self, phantom_dir, register_dir,
                                     tmp_path):
        d = tmp_path / "again"
        rc = main(["register",
                   "--fixed", str(phantom_dir / "fixed.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--fixed-labels", str(phantom_dir / "fixed_labels.hdr"),
                   "--moving-labels", str(phantom_dir / "moving_labels.hdr"),
                   "--out-dir", str(d), "--report", str(d / "report.csv")]
                  + REGISTER_ARGS)
        assert rc == 0
        assert read_bytes(d / "field.raw") \
            == read_bytes(register_dir / "field.raw")
        assert read_text(d / "report.txt") \
            == read_text(register_dir / "report.txt")

    def test_warp_improves_overlap(self, phantom_dir, register_dir, capsys):
        rc = main(["evaluate",
                   "--fixed-labels", str(phantom_dir / "fixed_labels.hdr"),
                   "--moving-labels", str(phantom_dir / "moving_labels.hdr")])
        assert rc == 0
        before = float(capsys.readouterr().out.split("dice_mean=")[1]
                       .splitlines()[0])
        after = float(read_text(register_dir / "report.txt")
                      .split("dice_mean=")[1].splitlines()[0])
        assert after > before

    def test_no_mean_field_flag(self, phantom_dir, tmp_path):
        d = tmp_path / "nomf"
        rc = main(["register",
                   "--fixed", str(phantom_dir / "fixed.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--out-dir", str(d), "--no-mean-field"] + REGISTER_ARGS)
        assert rc == 0
        assert "mean_field_iterations=0" in read_text(d / "report.txt")

    def test_refine_flag(self, phantom_dir, tmp_path):
        d = tmp_path / "ref"
        rc = main(["register",
                   "--fixed", str(phantom_dir / "fixed.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--out-dir", str(d), "--refine"] + REGISTER_ARGS)
        assert rc == 0
        assert "refine_steps=50" in read_text(d / "report.txt")

    def test_seed_and_threads_recorded(self, phantom_dir, tmp_path):
        d = tmp_path / "seeded"
        rc = main(["register",
                   "--fixed", str(phantom_dir / "fixed.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--out-dir", str(d), "--seed", "17", "--threads", "2"]
                  + REGISTER_ARGS)
        assert rc == 0
        text = read_text(d / "report.txt")
        assert "seed=17" in text and "threads=2" in text


class TestConfigFile:
    def test_file_values_used(self, phantom_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# small run\n"
            f"fixed = {phantom_dir / 'fixed.hdr'}\n"
            f"moving = {phantom_dir / 'moving.hdr'}\n"
            f"out-dir = {tmp_path / 'out'}\n"
            "grid = 6\nsteps = 5\nq = 0.4\nlambda = 2.0\n",
            encoding="ascii")
        rc = main(["register", "--config", str(cfg)])
        assert rc == 0
        text = read_text(tmp_path / "out" / "report.txt")
        assert "grid=6,6,6" in text and "lambda=2" in text

    def test_flags_override_file(self, phantom_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"fixed = {phantom_dir / 'fixed.hdr'}\n"
            f"moving = {phantom_dir / 'moving.hdr'}\n"
            f"out-dir = {tmp_path / 'out'}\n"
            "grid = 6\nsteps = 5\n", encoding="ascii")
        rc = main(["register", "--config", str(cfg), "--grid", "5"])
        assert rc == 0
        assert "grid=5,5,5" in read_text(tmp_path / "out" / "report.txt")

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("grdi = 4\n", encoding="ascii")
        rc = main(["register", "--config", str(cfg)])
        assert rc == 1
        assert "grdi" in capsys.readouterr().err

    def test_phantom_config(self, tmp_path):
        cfg = tmp_path / "ph.cfg"
        cfg.write_text(f"out-dir = {tmp_path / 'ph'}\ndims = 16\n"
                       "organs = 2\nmagnitude = 0.05\nseed = 9\n",
                       encoding="ascii")
        rc = main(["phantom", "--config", str(cfg)])
        assert rc == 0
        assert (tmp_path / "ph" / "fixed.hdr").exists()


class TestEvaluate:
    def test_identical_labels_score_one(self, phantom_dir, capsys):
        rc = main(["evaluate",
                   "--fixed-labels", str(phantom_dir / "fixed_labels.hdr"),
                   "--moving-labels", str(phantom_dir / "fixed_labels.hdr")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "dice_mean=1\n" in out

    def test_field_warping_and_csv(self, phantom_dir, tmp_path, capsys):
        csv_path = tmp_path / "scores.csv"
        rc = main(["evaluate",
                   "--fixed-labels", str(phantom_dir / "fixed_labels.hdr"),
                   "--moving-labels", str(phantom_dir / "moving_labels.hdr"),
                   "--field", str(phantom_dir / "truth_field.hdr"),
                   "--report", str(csv_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "std_jac=" in out and "folding_fraction=" in out
        # The truth field maps fixed coordinates to moving ones, so warping
        # the moving labels with it restores strong overlap.
        warped_mean = float(out.split("dice_mean=")[1].splitlines()[0])
        assert warped_mean > 0.9
        csv = read_text(csv_path)
        assert csv.startswith("metric,value")
        assert "dice_mean," in csv and "folding_fraction," in csv


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["register", "--bogus"]) == 1
        capsys.readouterr()

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_missing_required(self, capsys):
        assert main(["register"]) == 1
        assert "missing required" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["register", "--fixed", str(tmp_path / "nope.hdr"),
                   "--moving", str(tmp_path / "nope.hdr"),
                   "--out-dir", str(tmp_path)])
        assert rc == 2
        capsys.readouterr()

    def test_truncated_payload(self, tmp_path, capsys):
        vol = Volume3D(np.zeros((16, 16, 16)))
        vio.write_volume(vol, str(tmp_path / "cut.hdr"))
        raw = tmp_path / "cut.raw"
        raw.write_bytes(read_bytes(raw)[:100])
        rc = main(["register", "--fixed", str(tmp_path / "cut.hdr"),
                   "--moving", str(tmp_path / "cut.hdr"),
                   "--out-dir", str(tmp_path)])
        assert rc == 2
        capsys.readouterr()

    def test_nan_payload(self, phantom_dir, tmp_path, capsys):
        bad = Volume3D(np.full((16, 16, 16), np.nan))
        vio.write_volume(bad, str(tmp_path / "nan.hdr"))
        rc = main(["register", "--fixed", str(tmp_path / "nan.hdr"),
                   "--moving", str(phantom_dir / "moving.hdr"),
                   "--out-dir", str(tmp_path)])
        assert rc == 3
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "register" in capsys.readouterr().out


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        rc = main(["selftest"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "FAIL" not in out
        assert out.count("ok ") >= 15

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "densereg.cli",
                               "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "phantom" in proc.stdout
