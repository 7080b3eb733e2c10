"""Turn chronological (student, item, outcome) logs into sparse design rows.

Each row one-hot encodes the student and/or item, activates the skills the
item exercises, and writes the student's running win/fail (or attempt)
counters for those skills, *as they stood before the attempt*. Counters are
maintained over the full log in order, so a later train/test split applies to
rows, not to counter history.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .sparse import DesignMatrix, FeatureSpace, SparseRow, _readonly


class EncodingError(ValueError):
    """Inconsistent encoding inputs (bad ids, misaligned extras, ...)."""


class Triplet(NamedTuple):
    """One observed attempt: dense student id, dense item id, outcome 0/1."""

    student: int
    item: int
    outcome: int


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Binary item-by-skill incidence matrix.

    ``kc(j)`` is the (possibly empty) tuple of skills item ``j`` exercises.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.int8, copy=True)
        if m.ndim != 2:
            raise EncodingError("q-matrix must be 2-d")
        if m.size and not np.isin(m, (0, 1)).all():
            raise EncodingError("q-matrix entries must be 0 or 1")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_skills(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def _kc(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(int(k) for k in np.nonzero(row)[0]) for row in self.matrix
        )

    def kc(self, item: int) -> tuple[int, ...]:
        if not 0 <= item < self.n_items:
            raise EncodingError(f"item {item} outside [0, {self.n_items})")
        return self._kc[item]

    def reordered(self, item_order: Sequence[int]) -> "QMatrix":
        """Rows permuted so that row ``j`` describes ``item_order[j]``."""
        order = np.asarray(item_order, dtype=np.int64)
        if order.size and (order.min() < 0 or order.max() >= self.n_items):
            raise EncodingError("item order references rows outside the q-matrix")
        return QMatrix(self.matrix[order])


def load_qmatrix(path) -> QMatrix:
    """Read a headerless CSV of 0/1 cells, one row per item."""
    rows: list[list[int]] = []
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            cells = []
            for cell in record:
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise EncodingError(
                        f"{path}: line {lineno}: cell {cell!r} is not 0/1"
                    )
                cells.append(int(cell))
            if rows and len(cells) != len(rows[0]):
                raise EncodingError(
                    f"{path}: line {lineno}: expected {len(rows[0])} columns, got {len(cells)}"
                )
            rows.append(cells)
    if not rows:
        raise EncodingError(f"{path}: empty q-matrix")
    return QMatrix(np.array(rows, dtype=np.int8))


@dataclass(frozen=True, eq=False)
class CounterState:
    """Per-(student, skill) win and fail tallies; attempts = wins + fails."""

    wins: np.ndarray
    fails: np.ndarray

    def __post_init__(self):
        w = np.array(self.wins, dtype=np.int64, copy=True)
        f = np.array(self.fails, dtype=np.int64, copy=True)
        if w.shape != f.shape or w.ndim != 2:
            raise EncodingError("wins/fails must be matching 2-d arrays")
        if (w < 0).any() or (f < 0).any():
            raise EncodingError("counters cannot be negative")
        object.__setattr__(self, "wins", _readonly(w))
        object.__setattr__(self, "fails", _readonly(f))

    @classmethod
    def zeros(cls, n_students: int, n_skills: int) -> "CounterState":
        return cls(
            np.zeros((n_students, n_skills), dtype=np.int64),
            np.zeros((n_students, n_skills), dtype=np.int64),
        )

    @property
    def attempts(self) -> np.ndarray:
        return self.wins + self.fails


def update_counters(state: CounterState, t: Triplet, q: QMatrix) -> CounterState:
    """New state with the attempt applied to every skill of ``t.item``."""
    wins = state.wins.copy()
    fails = state.fails.copy()
    _apply_attempt(wins, fails, t, q.kc(t.item))
    return CounterState(wins, fails)


def _apply_attempt(wins, fails, t: Triplet, kc: tuple[int, ...]) -> None:
    target = wins if t.outcome == 1 else fails
    for k in kc:
        target[t.student, k] += 1


# canonical block order; presets pick subsets, extras append in declared order
_BLOCK_ORDER = ("users", "items", "skills", "wins", "fails", "attempts")


@dataclass(frozen=True)
class EncodingConfig:
    """Which feature blocks to emit, in the fixed canonical order."""

    use_users: bool = False
    use_items: bool = False
    use_skills: bool = False
    use_wins: bool = False
    use_fails: bool = False
    use_attempts: bool = False
    extra_columns: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "extra_columns",
            tuple((str(n), int(c)) for n, c in self.extra_columns),
        )
        flags = (
            self.use_users,
            self.use_items,
            self.use_skills,
            self.use_wins,
            self.use_fails,
            self.use_attempts,
        )
        if not any(flags) and not self.extra_columns:
            raise EncodingError("encoding must enable at least one block")
        if self.use_attempts and (self.use_wins or self.use_fails):
            raise EncodingError(
                "attempt counters and win/fail counters are mutually exclusive"
            )
        for name, card in self.extra_columns:
            if card <= 0:
                raise EncodingError(f"extra column {name!r} needs positive cardinality")
        names = [n for n, _ in self.extra_columns]
        if len(names) != len(set(names)):
            raise EncodingError(f"duplicate extra column names: {names}")
        if set(names) & set(_BLOCK_ORDER):
            raise EncodingError("extra columns cannot shadow built-in block names")

    @property
    def needs_counters(self) -> bool:
        return self.use_wins or self.use_fails or self.use_attempts

    @property
    def needs_skills(self) -> bool:
        return self.use_skills or self.needs_counters

    def enabled_blocks(self) -> tuple[str, ...]:
        flags = {
            "users": self.use_users,
            "items": self.use_items,
            "skills": self.use_skills,
            "wins": self.use_wins,
            "fails": self.use_fails,
            "attempts": self.use_attempts,
        }
        names = [b for b in _BLOCK_ORDER if flags[b]]
        names.extend(n for n, _ in self.extra_columns)
        return tuple(names)

    def feature_space(self, n_students: int, n_items: int, n_skills: int) -> FeatureSpace:
        widths = {
            "users": n_students,
            "items": n_items,
            "skills": n_skills,
            "wins": n_skills,
            "fails": n_skills,
            "attempts": n_skills,
        }
        widths.update(dict(self.extra_columns))
        blocks = tuple((b, widths[b]) for b in self.enabled_blocks())
        return FeatureSpace(blocks)

    def replace(self, **kwargs) -> "EncodingConfig":
        from dataclasses import replace

        return replace(self, **kwargs)


def encode_extra(
    space: FeatureSpace,
    config: EncodingConfig,
    extra_values: Mapping[str, int],
) -> list[tuple[int, float]]:
    """One-hot fragment for the extra blocks of a single observation."""
    pairs: list[tuple[int, float]] = []
    for name, card in config.extra_columns:
        try:
            value = int(extra_values[name])
        except KeyError:
            raise EncodingError(f"missing value for extra column {name!r}") from None
        if not 0 <= value < card:
            raise EncodingError(
                f"extra column {name!r}: value {value} outside cardinality {card}"
            )
        pairs.append((space.column(name, value), 1.0))
    return pairs


def encode_dataset(
    triplets: Sequence[Triplet],
    q: QMatrix | None,
    config: EncodingConfig,
    n_students: int,
    extras: Mapping[str, Sequence[int]] | None = None,
    n_items: int | None = None,
) -> DesignMatrix:
    """One sparse row per triplet, in order, labels = outcomes.

    Counter blocks reflect the state *before* each attempt and cover only the
    skills of the attempted item. A negative student or item id means "unknown
    at encode time" and simply drops that one-hot (cold-start convention).
    """
    if config.needs_skills and q is None:
        raise EncodingError("this encoding needs skill information but no q-matrix was given")
    if n_items is None:
        if q is not None:
            n_items = q.n_items
        else:
            n_items = 1 + max((t.item for t in triplets), default=-1)
    n_skills = q.n_skills if q is not None else 0
    if config.use_users and n_students <= 0:
        raise EncodingError("users block enabled but no students declared")
    if (config.use_items or config.needs_skills) and n_items <= 0:
        raise EncodingError("items/skills blocks enabled but no items declared")

    space = config.feature_space(n_students, n_items, n_skills)

    extras = dict(extras or {})
    for name, _ in config.extra_columns:
        if name not in extras:
            raise EncodingError(f"dataset has no values for extra column {name!r}")
        if len(extras[name]) != len(triplets):
            raise EncodingError(
                f"extra column {name!r} has {len(extras[name])} values for "
                f"{len(triplets)} triplets"
            )

    wins = np.zeros((n_students, n_skills), dtype=np.int64)
    fails = np.zeros((n_students, n_skills), dtype=np.int64)

    rows: list[SparseRow] = []
    labels = np.empty(len(triplets), dtype=np.int8)
    for r, t in enumerate(triplets):
        if t.student >= n_students:
            raise EncodingError(f"row {r}: student {t.student} >= {n_students}")
        if t.item >= n_items:
            raise EncodingError(f"row {r}: item {t.item} >= {n_items}")
        if t.outcome not in (0, 1):
            raise EncodingError(f"row {r}: outcome {t.outcome} is not 0/1")
        kc = q.kc(t.item) if (q is not None and t.item >= 0) else ()

        pairs: list[tuple[int, float]] = []
        if config.use_users and t.student >= 0:
            pairs.append((space.column("users", t.student), 1.0))
        if config.use_items and t.item >= 0:
            pairs.append((space.column("items", t.item), 1.0))
        if config.use_skills:
            off = space.offset("skills")
            pairs.extend((off + k, 1.0) for k in kc)
        if config.use_wins and t.student >= 0:
            off = space.offset("wins")
            pairs.extend(
                (off + k, float(wins[t.student, k])) for k in kc if wins[t.student, k]
            )
        if config.use_fails and t.student >= 0:
            off = space.offset("fails")
            pairs.extend(
                (off + k, float(fails[t.student, k])) for k in kc if fails[t.student, k]
            )
        if config.use_attempts and t.student >= 0:
            off = space.offset("attempts")
            pairs.extend(
                (off + k, float(wins[t.student, k] + fails[t.student, k]))
                for k in kc
                if wins[t.student, k] + fails[t.student, k]
            )
        if config.extra_columns:
            pairs.extend(encode_extra(space, config, {n: extras[n][r] for n, _ in config.extra_columns}))

        rows.append(SparseRow.from_pairs(pairs))
        labels[r] = t.outcome
        if t.student >= 0:
            _apply_attempt(wins, fails, t, kc)

    return DesignMatrix(space, tuple(rows), labels)
