"""Shared fixtures: canonical-shaped expression CSV and small corpora.

The full expression dataset is license-gated, so the session fixture
synthesizes a file with the canonical row layout: 28,709 Training rows of
which exactly 11 are completely black, then 3,589 PublicTest and 3,589
PrivateTest rows. Pixel content is drawn from a small pool of random rows;
only the shape, the usage tags, and the black-row placement matter to the
split logic under test.
"""

from pathlib import Path

import numpy as np
import pytest

from engagerec.data import (
    FER_BLACK_TRAINING_ROWS,
    FER_TEST_SIZE,
    FER_TRAINING_ROWS,
    IMAGE_SIZE,
)

# deterministic, scattered positions for the all-black Training rows
_BLACK_TRAINING_INDICES = frozenset(
    {7, 1093, 2904, 5561, 8114, 11237, 14800, 18103, 21555, 25009, 28431}
)
assert len(_BLACK_TRAINING_INDICES) == FER_BLACK_TRAINING_ROWS


@pytest.fixture(scope="session")
def canonical_fer_csv(tmp_path_factory) -> Path:
    rng = np.random.default_rng(20240301)
    pool = [
        " ".join(str(v) for v in rng.integers(0, 256, IMAGE_SIZE * IMAGE_SIZE))
        for _ in range(40)
    ]
    black = " ".join("0" for _ in range(IMAGE_SIZE * IMAGE_SIZE))
    path = tmp_path_factory.mktemp("fer") / "fer_canonical.csv"
    with open(path, "w", encoding="utf-8", newline="") as stream:
        stream.write("emotion,pixels,Usage\n")
        row = 0
        for index in range(FER_TRAINING_ROWS):
            pixels = black if index in _BLACK_TRAINING_INDICES else pool[row % len(pool)]
            stream.write(f"{row % 7},{pixels},Training\n")
            row += 1
        for index in range(FER_TEST_SIZE):
            # one black row in the test portion: removal must not touch it
            pixels = black if index == 100 else pool[row % len(pool)]
            stream.write(f"{row % 7},{pixels},PublicTest\n")
            row += 1
        for _ in range(FER_TEST_SIZE):
            stream.write(f"{row % 7},{pool[row % len(pool)]},PrivateTest\n")
            row += 1
    return path


@pytest.fixture()
def tiny_fer_rows() -> str:
    """A 6-row CSV exercising every usage tag and one black Training row."""
    rng = np.random.default_rng(5)
    rows = ["emotion,pixels,Usage"]
    usages = ["Training", "Training", "Training", "Training", "PublicTest", "PrivateTest"]
    for index, usage in enumerate(usages):
        if index == 2:
            pixels = " ".join("0" for _ in range(IMAGE_SIZE * IMAGE_SIZE))
        else:
            pixels = " ".join(str(v) for v in rng.integers(0, 256, IMAGE_SIZE * IMAGE_SIZE))
        rows.append(f"{index % 7},{pixels},{usage}")
    return "\n".join(rows) + "\n"
