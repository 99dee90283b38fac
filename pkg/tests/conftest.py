import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from evgrid.grid import Bus, Feeder, LineSegment, LoadPoint, Transformer

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# acceptance outcomes, reported once at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session", autouse=True)
def _repo_cwd():
    # configs reference data/ relative to the repository root
    old = os.getcwd()
    os.chdir(ROOT)
    yield
    os.chdir(old)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


def two_bus(r_ohm=0.5, x_ohm=1.0, kv=7.2, length=1.0) -> Feeder:
    """Source b0 and one single-phase load bus b1 joined by a line."""
    return Feeder(
        "two_bus",
        (Bus("b0", "ABC", kv, True), Bus("b1", "A", kv)),
        (LineSegment("l1", "b0", "b1", "A", r_ohm, x_ohm, length, 400.0),),
        (),
        (LoadPoint("ld1", "b1", "residential", 100.0, 0.9, "residential"),),
    )


def small_feeder(rating=50.0, lateral_mi=1.0, ampacity=200.0) -> Feeder:
    """b0 -l1- b1 -l2- b2 with transformers t1 (at b1) and t2 (at b2)."""
    return Feeder(
        "small",
        (Bus("b0", "ABC", 7.2, True), Bus("b1", "ABC", 7.2), Bus("b2", "A", 7.2),
         Bus("s1", "A", 0.24), Bus("s2", "A", 0.24)),
        (LineSegment("l1", "b0", "b1", "ABC", 0.306, 0.627, 0.5, ampacity),
         LineSegment("l2", "b1", "b2", "A", 0.592, 0.701, lateral_mi, ampacity)),
        (Transformer("t1", "b1", "s1", 1, rating, 2.0, 0.24),
         Transformer("t2", "b2", "s2", 1, rating, 2.0, 0.24)),
        (LoadPoint("ld1", "s1", "residential", 30.0, 0.95, "residential"),
         LoadPoint("ld2", "s2", "residential", 30.0, 0.95, "residential")),
    )


@pytest.fixture
def feeder_small():
    return small_feeder()


def blobs(seed, n=300, sigma=0.5, dim=2, spacing=20.0):
    """Three isotropic Gaussian blobs on an equilateral triangle ``spacing`` sigma on a side."""
    rng = np.random.default_rng(seed)
    side = spacing * sigma
    centers = np.zeros((3, dim))
    centers[1, 0] = side
    centers[2, :2] = (side / 2, side * np.sqrt(3) / 2)
    labels = np.arange(n) % 3
    return centers[labels] + rng.normal(0, sigma, (n, dim)), labels
