"""Shared fixtures: a small two-student log whose encoding is known by hand."""

import numpy as np
import pytest

from ktfm import EncodingConfig, QMatrix, Triplet

# Item 0 exercises no skill, item 1 exercises skills {0, 1}, item 2 skills
# {1, 2}. Student 1 answers item 1 (right, wrong, right) then item 2 (wrong,
# right); student 0 answers item 1 (right) and item 0 (wrong).
EXAMPLE_QMATRIX = np.array(
    [
        [0, 0, 0],
        [1, 1, 0],
        [0, 1, 1],
    ],
    dtype=np.int8,
)

EXAMPLE_TRIPLETS = [
    Triplet(1, 1, 1),
    Triplet(1, 1, 0),
    Triplet(1, 1, 1),
    Triplet(1, 2, 0),
    Triplet(1, 2, 1),
    Triplet(0, 1, 1),
    Triplet(0, 0, 0),
]

# users(2) | items(3) | skills(3) | wins(3) | fails(3), counters as they
# stood before each attempt, masked to the attempted item's skills
EXAMPLE_ENCODED = np.array(
    [
        [0, 1, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0],
        [0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0],
        [0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0],
        [0, 1, 0, 0, 1, 0, 1, 1, 0, 2, 0, 0, 1, 0],
        [0, 1, 0, 0, 1, 0, 1, 1, 0, 2, 0, 0, 2, 1],
        [1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0],
        [1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    ],
    dtype=np.float64,
)

EXAMPLE_LABELS = [1, 0, 1, 0, 1, 1, 0]

FULL_CONFIG = EncodingConfig(
    use_users=True, use_items=True, use_skills=True, use_wins=True, use_fails=True
)


@pytest.fixture
def example_qmatrix():
    return QMatrix(EXAMPLE_QMATRIX)


@pytest.fixture
def example_triplets():
    return list(EXAMPLE_TRIPLETS)


@pytest.fixture
def example_log_csv(tmp_path):
    """The same log as a raw CSV with 1-based ids, plus its q-matrix file."""
    data = tmp_path / "triplets.csv"
    lines = ["user_id,item_id,correct"]
    lines += [f"{t.student + 1},{t.item + 1},{t.outcome}" for t in EXAMPLE_TRIPLETS]
    data.write_text("\n".join(lines) + "\n")
    qfile = tmp_path / "qmatrix.csv"
    qfile.write_text("\n".join(",".join(str(c) for c in row) for row in EXAMPLE_QMATRIX) + "\n")
    return data, qfile
