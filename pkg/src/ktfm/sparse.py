"""Sparse feature rows and the fixed column layout they live in.

Everything downstream (encoder, model, trainers) shares these types. Rows are
immutable once built; bulk math goes through the cached CSR view of a
``DesignMatrix`` instead of touching rows one by one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp


class LayoutError(ValueError):
    """Block name or column index outside the declared layout."""


class RowFormatError(ValueError):
    """Malformed sparse row or design-matrix text."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureSpace:
    """Named feature blocks laid out left to right over columns [0, N).

    Column order is the declaration order of ``blocks``; a block's offset is
    the total width of everything declared before it.
    """

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "blocks", tuple((str(n), int(w)) for n, w in self.blocks)
        )
        names = [n for n, _ in self.blocks]
        if not names:
            raise LayoutError("a feature space needs at least one block")
        if len(names) != len(set(names)):
            raise LayoutError(f"duplicate block names: {names}")
        for name, w in self.blocks:
            if w <= 0:
                raise LayoutError(f"block {name!r} must have positive width, got {w}")

    @cached_property
    def _offsets(self) -> dict[str, int]:
        out, at = {}, 0
        for name, width in self.blocks:
            out[name] = at
            at += width
        return out

    @property
    def width(self) -> int:
        """Total number of columns N."""
        return sum(w for _, w in self.blocks)

    @property
    def block_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.blocks)

    def offset(self, block: str) -> int:
        try:
            return self._offsets[block]
        except KeyError:
            raise LayoutError(f"unknown block {block!r}; have {self.block_names}") from None

    def block_width(self, block: str) -> int:
        self.offset(block)  # raises on unknown name
        return dict(self.blocks)[block]

    def column(self, block: str, local_id: int) -> int:
        off = self.offset(block)
        w = self.block_width(block)
        if not 0 <= local_id < w:
            raise LayoutError(
                f"local id {local_id} out of range for block {block!r} of width {w}"
            )
        return off + local_id

    def owner(self, column: int) -> tuple[str, int]:
        """Inverse of :meth:`column`: map a global column to (block, local id)."""
        if not 0 <= column < self.width:
            raise LayoutError(f"column {column} outside [0, {self.width})")
        for name, width in self.blocks:
            if column < width:
                return name, column
            column -= width
        raise AssertionError("unreachable")


def feature_index(space: FeatureSpace, block: str, local_id: int) -> int:
    """Global column of ``local_id`` inside ``block``."""
    return space.column(block, local_id)


@dataclass(frozen=True, eq=False)
class SparseRow:
    """Nonzero entries of one observation, as parallel index/value arrays.

    Indices are strictly increasing, values finite and nonzero.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        val = np.array(self.values, dtype=np.float64, copy=True)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise RowFormatError("indices and values must be 1-d and same length")
        if idx.size:
            if idx[0] < 0:
                raise RowFormatError(f"negative column index {idx[0]}")
            if np.any(np.diff(idx) <= 0):
                raise RowFormatError("indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise RowFormatError("values must be finite")
        if np.any(val == 0.0):
            raise RowFormatError("zero-valued entries must not be stored")
        object.__setattr__(self, "indices", _readonly(idx))
        object.__setattr__(self, "values", _readonly(val))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseRow":
        pairs = list(pairs)
        idx = np.array([i for i, _ in pairs], dtype=np.int64)
        val = np.array([v for _, v in pairs], dtype=np.float64)
        return cls(idx, val)

    @classmethod
    def from_dense(cls, dense: Sequence[float]) -> "SparseRow":
        arr = np.asarray(dense, dtype=np.float64)
        (nz,) = np.nonzero(arr)
        return cls(nz.astype(np.int64), arr[nz])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def densify(self, width: int) -> np.ndarray:
        if self.nnz and self.indices[-1] >= width:
            raise LayoutError(f"row touches column {self.indices[-1]} >= width {width}")
        out = np.zeros(width, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def dot(self, dense: np.ndarray) -> float:
        return sparse_dot(self, dense)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseRow):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )


def sparse_dot(row: SparseRow, dense: np.ndarray) -> float:
    """Dot product of a sparse row with a dense vector of the full width."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 1:
        raise ValueError("dense operand must be a vector")
    if row.nnz == 0:
        return 0.0
    if row.indices[-1] >= dense.size:
        raise LayoutError(
            f"row touches column {row.indices[-1]} but vector has length {dense.size}"
        )
    return float(np.dot(row.values, dense[row.indices]))


def _format_value(v: float) -> str:
    # integers round-trip as bare ints; anything else uses shortest repr,
    # which is bit-exact for doubles
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Chronologically ordered sparse rows with binary outcome labels."""

    space: FeatureSpace
    rows: tuple[SparseRow, ...]
    labels: np.ndarray

    def __post_init__(self):
        rows = tuple(self.rows)
        labels = np.array(self.labels, dtype=np.int8, copy=True)
        if labels.ndim != 1 or len(rows) != labels.size:
            raise RowFormatError(
                f"{len(rows)} rows but {labels.size} labels"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise RowFormatError("labels must be 0 or 1")
        width = self.space.width
        for r, row in enumerate(rows):
            if row.nnz and row.indices[-1] >= width:
                raise LayoutError(
                    f"row {r} touches column {row.indices[-1]} >= width {width}"
                )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", _readonly(labels))

    def __len__(self) -> int:
        return len(self.rows)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """CSR view used for batch scoring and full-batch gradients."""
        indptr = np.zeros(len(self.rows) + 1, dtype=np.int64)
        for r, row in enumerate(self.rows):
            indptr[r + 1] = indptr[r] + row.nnz
        indices = np.empty(indptr[-1], dtype=np.int64)
        data = np.empty(indptr[-1], dtype=np.float64)
        for r, row in enumerate(self.rows):
            indices[indptr[r] : indptr[r + 1]] = row.indices
            data[indptr[r] : indptr[r + 1]] = row.values
        return sp.csr_matrix(
            (data, indices, indptr), shape=(len(self.rows), self.space.width)
        )

    @cached_property
    def csr_squared(self) -> sp.csr_matrix:
        """Same sparsity pattern as :attr:`csr` with squared values."""
        sq = self.csr.copy()
        sq.data = sq.data**2
        return sq

    def subset(self, row_indices: Sequence[int]) -> "DesignMatrix":
        idx = np.asarray(row_indices, dtype=np.int64)
        return DesignMatrix(
            self.space,
            tuple(self.rows[i] for i in idx),
            self.labels[idx],
        )

    def densify(self) -> np.ndarray:
        return np.vstack([row.densify(self.space.width) for row in self.rows]) if self.rows else np.zeros((0, self.space.width))

    def dump(self, stream: TextIO) -> None:
        stream.write(f"#N {self.space.width}\n")
        for row, label in zip(self.rows, self.labels):
            parts = [str(int(label))]
            parts.extend(
                f"{int(i)}:{_format_value(v)}" for i, v in zip(row.indices, row.values)
            )
            stream.write(" ".join(parts) + "\n")

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            self.dump(fh)


def load_design_matrix(path, space: FeatureSpace | None = None) -> DesignMatrix:
    """Read the text format written by :meth:`DesignMatrix.save`.

    When no ``space`` is given the columns are wrapped in a single anonymous
    block, since the text format only carries the total width.
    """
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#N "):
            raise RowFormatError(f"missing '#N <width>' header, got {header!r}")
        try:
            width = int(header[3:])
        except ValueError:
            raise RowFormatError(f"bad width in header {header!r}") from None
        if space is None:
            space = FeatureSpace((("features", width),))
        elif space.width != width:
            raise LayoutError(f"header width {width} != space width {space.width}")
        rows, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if fields[0] not in ("0", "1"):
                raise RowFormatError(f"line {lineno}: label must be 0 or 1")
            labels.append(int(fields[0]))
            pairs = []
            for field in fields[1:]:
                try:
                    i, v = field.split(":")
                    pairs.append((int(i), float(v)))
                except ValueError:
                    raise RowFormatError(
                        f"line {lineno}: bad entry {field!r}"
                    ) from None
            rows.append(SparseRow.from_pairs(pairs))
    return DesignMatrix(space, tuple(rows), np.array(labels, dtype=np.int8))
