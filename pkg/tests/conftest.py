"""Shared fixtures. The two expensive end-to-end runs (full default tabular
training via the CLI, full default neural training in-process) are session
scoped so the acceptance tests and the module tests that need them pay for
them once."""

import csv
import os
import subprocess
import sys
import time

import pytest

from edl.world import World

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="session")
def world():
    return World()


def run_cli(args, stdin_text=None, env_extra=None, timeout=600):
    """Run the command-line tool in a subprocess; returns CompletedProcess."""
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "edl.cli"] + list(args),
        input=stdin_text,
        capture_output=True,
        text=True,
        env=env,
        timeout=timeout,
    )


@pytest.fixture(scope="session")
def default_tabular_run(tmp_path_factory):
    """Full default tabular training driven through the CLI, timed.

    Returns (run_dir, elapsed_seconds, returncode, stderr).
    """
    base = tmp_path_factory.mktemp("tab_default")
    cfg_path = base / "default.cfg"
    cfg_path.write_text("mode = tabular\n")
    out_dir = base / "run"
    t0 = time.monotonic()
    proc = run_cli(["train", "--config", str(cfg_path), "--out", str(out_dir)])
    elapsed = time.monotonic() - t0
    return out_dir, elapsed, proc.returncode, proc.stderr


@pytest.fixture(scope="session")
def default_neural_result():
    """Full default neural training (supervised pretrain then policy
    gradient), run in-process; returns the TrainResult."""
    from edl.training import TrainSettings, train_neural

    return train_neural(TrainSettings(), world=World())


def read_reward_curve(run_dir):
    path = os.path.join(str(run_dir), "reward_curve.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iteration"]), float(r["greedy_mean_reward"])) for r in rows]
