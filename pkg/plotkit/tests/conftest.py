"""Fixtures: a small but real experiment report produced by the `oodcert`
pipeline, consumed strictly through its report files."""

import subprocess
import sys
from pathlib import Path

import pytest


def run_oodcert(*argv) -> None:
    cmd = [sys.executable, "-m", "oodcert.cli", *map(str, argv)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, f"oodcert {' '.join(map(str, argv))} failed:\n{proc.stderr}"


@pytest.fixture(scope="session")
def mini_experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiment")
    run_oodcert("gen", "toy-sine", "--n", 128, "--seed", 0, "--out", root / "train.oodd")
    run_oodcert("gen", "toy-sine", "--n", 16, "--seed", 9, "--out", root / "test.oodd")
    run_oodcert("train", "regressor", "--data", root / "train.oodd", "--hidden", "16,16",
                "--epochs", 10, "--batch", 32, "--seed", 0, "--out", root / "reg.oodc")
    run_oodcert("train", "denoiser", "--data", root / "train.oodd", "--hidden", "24,24",
                "--epochs", 10, "--batch", 32, "--seed", 1, "--out", root / "den.oodc")
    run_oodcert("certify", "--regressor", root / "reg.oodc", "--denoiser", root / "den.oodc",
                "--data", root / "train.oodd", "--limit", 16, "--methods", "jlbc,jdpath",
                "--steps", 8, "--probes", 2, "--seed", 3, "--dataset-tag", "decision",
                "--out", root / "decision.json")
    run_oodcert("certify", "--regressor", root / "reg.oodc", "--denoiser", root / "den.oodc",
                "--data", root / "test.oodd", "--methods", "jlbc,jdpath",
                "--steps", 8, "--probes", 2, "--seed", 4, "--sample-offset", 1000,
                "--out", root / "report.json")
    run_oodcert("boundary", "--report", root / "decision.json", "--out", root / "boundary.json")
    run_oodcert("classify", "--report", root / "report.json", "--boundary", root / "boundary.json",
                "--out", root / "classified.json")
    run_oodcert("fit-error", "--report", root / "report.json", "--method", "JLBC",
                "--percentile", 75, "--out", root / "fit.json")
    run_oodcert("report", "--records", root / "classified.json", "--boundary", root / "boundary.json",
                "--fit", root / "fit.json", "--out", root / "final.json")
    return root
