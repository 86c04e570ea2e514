import os

import numpy as np
import pytest

from ftmine import dataset
from ftmine.fabric import FaultEvent, FaultSchedule, spawn_world
from ftmine.harness.runner import TEST_FILE, TRAIN_FILE, TRANS_FILE

os.environ.setdefault("HYPOTHESIS_PROFILE", "default")


def run_world(p, fn, *args, faults=(), seed=0, trace=False, **kwargs):
    """Run ``fn(ctx, ...)`` on a fresh world; ``faults`` are FaultEvents."""
    world = spawn_world(p, FaultSchedule(tuple(faults)), seed, trace=trace)
    return world, world.run(fn, *args, **kwargs)


def die_at_start(rank):
    """A fault that fires on the rank's first ``ctx.progress`` call."""
    return FaultEvent(rank, "at_progress_fraction", 0.0)


def wait_for_death(ctx, rank):
    seen = []
    while rank not in seen:
        seen += ctx.poll_faults()
    return seen


def make_fp_dir(path, n_trans, n_items, len_range, seed, zipf=1.0):
    path.mkdir(parents=True, exist_ok=True)
    dataset.generate_transactions(path / TRANS_FILE, n_trans, n_items, len_range, seed, zipf)
    return path


def make_knn_dir(path, n_train, n_test, dims, seed):
    path.mkdir(parents=True, exist_ok=True)
    dataset.generate_points(path / TRAIN_FILE, n_train, dims, seed)
    dataset.generate_points(path / TEST_FILE, n_test, dims, seed + 1)
    return path


@pytest.fixture(scope="session")
def fp_dir(tmp_path_factory):
    return make_fp_dir(tmp_path_factory.mktemp("fp"), 200, 15, (2, 7), 11)


@pytest.fixture(scope="session")
def dense_fp_dir(tmp_path_factory):
    # long transactions over few items give compact trees, so AMFT can fit
    # complete checkpoints into the processed region
    return make_fp_dir(tmp_path_factory.mktemp("dense"), 2000, 12, (6, 10), 5, zipf=0.3)


@pytest.fixture(scope="session")
def knn_dir(tmp_path_factory):
    return make_knn_dir(tmp_path_factory.mktemp("knn"), 240, 60, 3, 21)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def report(n: int, passed: bool, detail: str, informational: bool = False):
    tag = "PASS" if passed else ("MISS" if informational else "FAIL")
    line = f"criterion {n}: {tag}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
