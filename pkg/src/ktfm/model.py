"""Factorization-machine score, link functions, and the encoding presets.

The score of a row x is

    bias + sum_k w[k] x[k] + sum_{k<l} x[k] x[l] <V[k], V[l]>

with the pairwise term evaluated per factor dimension f as
``0.5 * ((sum_k x_k V[k,f])^2 - sum_k x_k^2 V[k,f]^2)``, which costs
O(nnz * d) instead of O(nnz^2 * d) and excludes self-interactions.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
from scipy.special import erfc, expit

from .encoding import EncodingConfig
from .sparse import DesignMatrix, FeatureSpace, SparseRow, _readonly

# open-interval guard for predicted probabilities
PROB_EPS = 1e-15

_SQRT2 = math.sqrt(2.0)


class Link(str, enum.Enum):
    """Map between the real score line and probabilities."""

    LOGIT = "logit"
    PROBIT = "probit"

    def inverse(self, z):
        """Probability for score ``z``, clipped into the open unit interval."""
        z = np.asarray(z, dtype=np.float64)
        if self is Link.LOGIT:
            p = expit(z)
        else:
            p = 0.5 * erfc(-z / _SQRT2)
        return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True, eq=False)
class FMParams:
    """Trained model: global bias, per-feature biases w, factor matrix V.

    ``V`` is ``None`` exactly when the factor dimension d is zero, in which
    case the model is plain (regularized) logistic/probit regression.
    """

    bias: float
    w: np.ndarray
    V: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        if w.ndim != 1:
            raise ValueError("w must be a vector")
        if not math.isfinite(self.bias) or not np.all(np.isfinite(w)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "w", _readonly(w))
        if self.V is not None:
            V = np.array(self.V, dtype=np.float64, copy=True)
            if V.ndim != 2 or V.shape[0] != w.size:
                raise ValueError(f"V must be {w.size} x d, got {V.shape}")
            if V.shape[1] == 0:
                raise ValueError("V must be None when d = 0")
            if not np.all(np.isfinite(V)):
                raise ValueError("parameters must be finite")
            object.__setattr__(self, "V", _readonly(V))

    @property
    def n_features(self) -> int:
        return int(self.w.size)

    @property
    def d(self) -> int:
        return 0 if self.V is None else int(self.V.shape[1])

    @classmethod
    def zeros(cls, n_features: int, d: int = 0) -> "FMParams":
        V = np.zeros((n_features, d)) if d > 0 else None
        return cls(0.0, np.zeros(n_features), V)


def raw_score(params: FMParams, x: SparseRow) -> float:
    """Model score of one row on the link scale."""
    if x.nnz == 0:
        return params.bias
    if x.indices[-1] >= params.n_features:
        raise IndexError(
            f"row touches column {x.indices[-1]} but model has {params.n_features} features"
        )
    z = params.bias + float(np.dot(params.w[x.indices], x.values))
    if params.V is not None:
        vx = params.V[x.indices] * x.values[:, None]
        q = vx.sum(axis=0)
        z += 0.5 * (float(np.dot(q, q)) - float((vx * vx).sum()))
    return z


def raw_scores(params: FMParams, data: DesignMatrix) -> np.ndarray:
    """Vectorized :func:`raw_score` over all rows of a design matrix."""
    if data.space.width != params.n_features:
        raise IndexError(
            f"matrix width {data.space.width} != model features {params.n_features}"
        )
    X = data.csr
    z = params.bias + X @ params.w
    if params.V is not None:
        q = X @ params.V
        s2 = data.csr_squared @ (params.V**2)
        z = z + 0.5 * ((q * q).sum(axis=1) - s2.sum(axis=1))
    return np.asarray(z, dtype=np.float64)


def predict_proba(params: FMParams, x: SparseRow, link: Link) -> float:
    """Probability of a positive outcome for one row."""
    return float(link.inverse(raw_score(params, x)))


def predict_proba_matrix(params: FMParams, data: DesignMatrix, link: Link) -> np.ndarray:
    return link.inverse(raw_scores(params, data))


class DimensionRule(str, enum.Enum):
    """What factor dimensions a preset admits."""

    ZERO = "d = 0"
    POSITIVE = "d > 0"
    ANY = "any d"

    def check(self, d: int) -> None:
        if d < 0:
            raise ValueError(f"dimension must be >= 0, got {d}")
        if self is DimensionRule.ZERO and d != 0:
            raise ValueError(f"this preset requires d = 0, got d = {d}")
        if self is DimensionRule.POSITIVE and d <= 0:
            raise ValueError(f"this preset requires d > 0, got d = {d}")


# preset -> (enabled blocks, dimension rule, wants extra side columns)
_PRESETS: dict[str, tuple[tuple[str, ...], DimensionRule, bool]] = {
    "irt": (("users", "items"), DimensionRule.ZERO, False),
    "mirtb": (("users", "items"), DimensionRule.POSITIVE, False),
    "afm": (("skills", "attempts"), DimensionRule.ZERO, False),
    "pfa": (("skills", "wins", "fails"), DimensionRule.ZERO, False),
    "ktm-iswf": (("items", "skills", "wins", "fails"), DimensionRule.ANY, False),
    "ktm-iswfe": (("items", "skills", "wins", "fails"), DimensionRule.ANY, True),
}
_ALIASES = {"iswf": "ktm-iswf", "iswfe": "ktm-iswfe"}

PRESET_NAMES = tuple(_PRESETS)


def preset_requires_extras(name: str) -> bool:
    return _PRESETS[_canonical_preset(name)][2]


def _canonical_preset(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    return key


def preset_encoding(
    name: str, extra_columns: Sequence[tuple[str, int]] = ()
) -> tuple[EncodingConfig, DimensionRule]:
    """Named block set and its dimension constraint.

    Presets that use extra side information need the dataset's extra columns
    passed in, since their widths depend on the data.
    """
    key = _canonical_preset(name)
    blocks, rule, wants_extras = _PRESETS[key]
    if wants_extras and not extra_columns:
        raise ValueError(f"preset {name!r} needs extra side columns but none were given")
    config = EncodingConfig(
        use_users="users" in blocks,
        use_items="items" in blocks,
        use_skills="skills" in blocks,
        use_wins="wins" in blocks,
        use_fails="fails" in blocks,
        use_attempts="attempts" in blocks,
        extra_columns=tuple(extra_columns) if wants_extras else (),
    )
    return config, rule


EMBEDDING_HEADER = ("block", "local_id", "bias")


def _fmt(v: float) -> str:
    return repr(float(v))


def export_embeddings(params: FMParams, space: FeatureSpace, stream: TextIO) -> None:
    """Write one CSV row per feature: block label, local id, bias, factors."""
    if space.width != params.n_features:
        raise IndexError(
            f"space width {space.width} != model features {params.n_features}"
        )
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(EMBEDDING_HEADER) + [f"v{f}" for f in range(params.d)])
    for col in range(space.width):
        block, local = space.owner(col)
        row = [block, str(local), _fmt(params.w[col])]
        if params.V is not None:
            row.extend(_fmt(v) for v in params.V[col])
        writer.writerow(row)


def read_embeddings(path) -> tuple[FeatureSpace, np.ndarray, np.ndarray | None]:
    """Inverse of :func:`export_embeddings` (global bias is not part of it)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - len(EMBEDDING_HEADER)
        blocks: list[tuple[str, int]] = []
        w: list[float] = []
        V: list[list[float]] = []
        for record in reader:
            block, local = record[0], int(record[1])
            if not blocks or blocks[-1][0] != block:
                blocks.append((block, 0))
            if local != blocks[-1][1]:
                raise ValueError(f"non-contiguous local ids in block {block!r}")
            blocks[-1] = (block, local + 1)
            w.append(float(record[2]))
            if d:
                V.append([float(v) for v in record[3:]])
    space = FeatureSpace(tuple(blocks))
    return space, np.array(w), (np.array(V) if d else None)
