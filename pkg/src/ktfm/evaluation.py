"""Metrics, fold construction, and the cross-validated experiment runner.

AUC uses the rank-sum form of the Mann-Whitney statistic with average ranks,
so tied scores count one half; it is exactly the all-pairs computation at
O(S log S) cost. Accuracy thresholds at 0.5 with ties predicting positive.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
from scipy.stats import rankdata

from .encoding import encode_dataset
from .model import Link, preset_encoding, raw_scores
from .sparse import DesignMatrix
from .training import TrainConfig, nll, train_gibbs_probit, train_map_logit


def accuracy(predictions: Sequence[float], labels: Sequence[int]) -> float:
    """Fraction of rows where thresholding at 0.5 recovers the label."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} predictions, {y.shape} labels")
    if p.size == 0:
        raise ValueError("empty prediction list")
    return float(np.mean((p >= 0.5) == (y == 1)))


def auc(predictions: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative; ties = 1/2."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} predictions, {y.shape} labels")
    n_pos = int((y == 1).sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when all labels are the same class")
    ranks = rankdata(p, method="average")
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class FoldSpec:
    """How to split rows for cross-validation."""

    k: int = 5
    seed: int = 0
    mode: str = "by_row"  # or "by_student"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least two folds")
        if self.mode not in ("by_row", "by_student"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def make_folds(
    n_rows: int, spec: FoldSpec, student_of_row: Sequence[int] | None = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint (train, test) index pairs covering every row exactly once.

    ``by_student`` partitions students instead of rows; a fold's test set is
    every row of its students, which evaluates performance on learners the
    model never saw.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    folds = []
    if spec.mode == "by_row":
        order = rng.permutation(n_rows)
        parts = np.array_split(order, spec.k)
    else:
        if student_of_row is None:
            raise ValueError("by_student mode needs the row-to-student map")
        students = np.asarray(student_of_row)
        if students.size != n_rows:
            raise ValueError("row-to-student map length mismatch")
        unique = np.unique(students)
        if unique.size < spec.k:
            raise ValueError(
                f"cannot make {spec.k} student folds from {unique.size} students"
            )
        order = rng.permutation(unique)
        parts = [
            np.flatnonzero(np.isin(students, chunk))
            for chunk in np.array_split(order, spec.k)
        ]
    all_rows = np.arange(n_rows)
    for part in parts:
        test = np.sort(part)
        train = np.setdiff1d(all_rows, test, assume_unique=False)
        folds.append((train, test))
    return folds


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    acc: float
    auc: float | None  # None when the fold's test labels are single-class
    nll: float


@dataclass(frozen=True)
class CVReport:
    """Per-fold and aggregate metrics for one (preset, dimension) cell."""

    preset: str
    d: int
    folds: tuple[FoldMetrics, ...]

    def _mean(self, values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    @property
    def mean_acc(self) -> float:
        return float(np.mean([f.acc for f in self.folds]))

    @property
    def mean_auc(self) -> float | None:
        return self._mean([f.auc for f in self.folds if f.auc is not None])

    @property
    def mean_nll(self) -> float:
        return float(np.mean([f.nll for f in self.folds]))


def _fit_and_predict(
    train: DesignMatrix,
    test: DesignMatrix,
    config: TrainConfig,
    link: Link,
) -> np.ndarray:
    if link is Link.PROBIT:
        out = train_gibbs_probit(train, test, config)
        return out.test_predictions
    params = train_map_logit(train, config)
    return link.inverse(raw_scores(params, test))


def evaluate_predictions(predictions, labels, fold: int) -> FoldMetrics:
    try:
        fold_auc = auc(predictions, labels)
    except ValueError:
        warnings.warn(
            f"fold {fold}: test labels are single-class, AUC reported as missing"
        )
        fold_auc = None
    return FoldMetrics(
        fold=fold,
        acc=accuracy(predictions, labels),
        auc=fold_auc,
        nll=nll(predictions, labels),
    )


def cross_validate_encoded(
    data: DesignMatrix,
    preset: str,
    d: int,
    folds: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    link: Link,
) -> CVReport:
    """Train/evaluate one already-encoded grid cell over the given folds."""
    metrics = []
    for fold, (train_idx, test_idx) in enumerate(folds):
        predictions = _fit_and_predict(
            data.subset(train_idx), data.subset(test_idx), config, link
        )
        metrics.append(evaluate_predictions(predictions, data.labels[test_idx], fold))
    return CVReport(preset=preset, d=d, folds=tuple(metrics))


def run_cv(
    dataset,
    grid: Sequence[tuple[str, int]],
    fold_spec: FoldSpec,
    train_config: TrainConfig,
    link: Link = Link.LOGIT,
) -> list[CVReport]:
    """Cross-validate every (preset, d) grid cell on one dataset.

    Each cell encodes the full log once (counters always see the whole
    history), reuses one fold partition across cells, and reports per-fold
    ACC/AUC/NLL. Reports come back sorted by mean AUC, best first.
    """
    students = [t.student for t in dataset.triplets]
    folds = make_folds(len(dataset.triplets), fold_spec, students)
    reports = []
    for preset, d in grid:
        config, rule = preset_encoding(preset, dataset.extra_columns)
        rule.check(d)
        encoded = encode_dataset(
            dataset.triplets,
            dataset.qmatrix,
            config,
            dataset.n_students,
            extras=dataset.extras,
            n_items=dataset.n_items,
        )
        cell_config = train_config.replace(d=d)
        reports.append(
            cross_validate_encoded(encoded, preset, d, folds, cell_config, link)
        )
    reports.sort(key=lambda r: -1.0 if r.mean_auc is None else r.mean_auc, reverse=True)
    return reports


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_fold_report(reports: Sequence[CVReport], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["preset", "d", "fold", "acc", "auc", "nll"])
    for report in reports:
        for fm in report.folds:
            writer.writerow(
                [report.preset, report.d, fm.fold, _fmt(fm.acc), _fmt(fm.auc), _fmt(fm.nll)]
            )


def write_summary(reports: Sequence[CVReport], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["preset", "d", "acc", "auc", "nll"])
    for report in reports:
        writer.writerow(
            [
                report.preset,
                report.d,
                _fmt(report.mean_acc),
                _fmt(report.mean_auc),
                _fmt(report.mean_nll),
            ]
        )


def format_table(reports: Sequence[CVReport]) -> str:
    """Aligned text summary, best AUC first."""
    lines = [f"{'preset':<12} {'d':>3} {'ACC':>7} {'AUC':>7} {'NLL':>7}"]
    for report in reports:
        auc_txt = "--" if report.mean_auc is None else f"{report.mean_auc:.3f}"
        lines.append(
            f"{report.preset:<12} {report.d:>3} {report.mean_acc:>7.3f} "
            f"{auc_txt:>7} {report.mean_nll:>7.3f}"
        )
    return "\n".join(lines)
