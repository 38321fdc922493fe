"""Group-fairness metrics, accuracy, and Pareto fronts over (accuracy, gap) points.

Group ``1`` plays the role of ``s1`` and group ``0`` of ``s2``; both gaps are
absolute differences, so the naming is symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from dvge import kernels

REPORT_CSV_HEADER = ("run_id", "eta1", "eta2", "gamma", "seed", "accuracy", "delta_dp", "delta_eo")


class UndefinedMetricError(ValueError):
    """A metric's conditioning event has no samples."""


def _binary(name: str, values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class EvalBatch:
    predictions: np.ndarray
    labels: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        pred = _binary("predictions", self.predictions)
        lab = _binary("labels", self.labels)
        grp = _binary("groups", self.groups)
        if not (len(pred) == len(lab) == len(grp)):
            raise ValueError(f"length mismatch: {len(pred)} predictions, {len(lab)} labels, {len(grp)} groups")
        object.__setattr__(self, "predictions", pred)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "groups", grp)

    def __len__(self) -> int:
        return len(self.predictions)


def _rate(values: np.ndarray, what: str) -> float:
    if values.size == 0:
        raise UndefinedMetricError(f"no samples for {what}")
    return float(values.mean())


def delta_dp(batch: EvalBatch) -> float:
    """|P(ŷ=1 | s=1) - P(ŷ=1 | s=0)|."""
    p1 = _rate(batch.predictions[batch.groups == 1], "group 1 positive rate")
    p0 = _rate(batch.predictions[batch.groups == 0], "group 0 positive rate")
    return abs(p1 - p0)


def delta_eo(batch: EvalBatch) -> float:
    """Absolute true-positive-rate gap between the groups."""
    pos = batch.labels == 1
    t1 = _rate(batch.predictions[pos & (batch.groups == 1)], "group 1 true-positive rate")
    t0 = _rate(batch.predictions[pos & (batch.groups == 0)], "group 0 true-positive rate")
    return abs(t1 - t0)


def delta_eo_fnr(batch: EvalBatch) -> float:
    """The same gap written with false-negative rates; equals :func:`delta_eo`."""
    pos = batch.labels == 1
    f1 = _rate(1 - batch.predictions[pos & (batch.groups == 1)], "group 1 false-negative rate")
    f0 = _rate(1 - batch.predictions[pos & (batch.groups == 0)], "group 0 false-negative rate")
    return abs(f1 - f0)


def accuracy(batch: EvalBatch) -> float:
    if len(batch) == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    return float(np.mean(batch.predictions == batch.labels))


@dataclass(frozen=True)
class FairnessReport:
    """Metrics of one model plus the ``[group, label, prediction]`` count table they derive from."""

    accuracy: float
    delta_dp: float
    delta_eo: float
    counts: np.ndarray = field(repr=False)

    @classmethod
    def from_counts(cls, counts) -> "FairnessReport":
        c = np.asarray(counts, dtype=np.int64).reshape(2, 2, 2)
        total = int(c.sum())
        if total == 0:
            raise ValueError("empty count table")
        acc = (int(c[:, 0, 0].sum()) + int(c[:, 1, 1].sum())) / total
        group_n = c.sum(axis=(1, 2))
        if (group_n == 0).any():
            raise UndefinedMetricError("a sensitive group is empty; demographic parity is undefined")
        pos_rate = c[:, :, 1].sum(axis=1) / group_n
        pos_n = c[:, 1, :].sum(axis=1)
        if (pos_n == 0).any():
            raise UndefinedMetricError("a sensitive group has no positive labels; equal opportunity is undefined")
        tpr = c[:, 1, 1] / pos_n
        return cls(
            accuracy=float(acc),
            delta_dp=float(abs(pos_rate[1] - pos_rate[0])),
            delta_eo=float(abs(tpr[1] - tpr[0])),
            counts=c,
        )

    @classmethod
    def evaluate(cls, predictions, labels, groups) -> "FairnessReport":
        batch = EvalBatch(predictions, labels, groups)
        return cls.from_counts(kernels.confusion_counts(batch.predictions, batch.labels, batch.groups))

    def csv_row(self, run_id: str, eta1: float, eta2: float, gamma: float, seed: int) -> list[str]:
        return [
            run_id,
            repr(float(eta1)),
            repr(float(eta2)),
            repr(float(gamma)),
            str(int(seed)),
            repr(self.accuracy),
            repr(self.delta_dp),
            repr(self.delta_eo),
        ]


# ---------------------------------------------------------------------------
# Pareto fronts


def pareto_indices(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of non-dominated ``(accuracy, delta)`` points.

    Maximises accuracy and minimises delta. Exact duplicates keep only
    their first occurrence. The result is ordered by delta ascending, along
    which accuracy strictly increases.
    """
    if len(points) == 0:
        raise ValueError("pareto front of an empty point set")
    order = sorted(range(len(points)), key=lambda i: (points[i][1], -points[i][0], i))
    front = []
    best = -np.inf
    for i in order:
        if points[i][0] > best:
            front.append(i)
            best = points[i][0]
    return front


def pareto_front(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    return [tuple(points[i]) for i in pareto_indices(points)]


def front_accuracy_at(front: Sequence[tuple[float, float]], delta: float) -> float:
    """Best accuracy on ``front`` among points with gap <= ``delta`` (``-inf`` if none)."""
    best = -np.inf
    for acc, d in front:
        if d <= delta:
            best = max(best, acc)
    return best


def dominance_fraction(
    front: Sequence[tuple[float, float]],
    reference: Sequence[tuple[float, float]],
    grid: Iterable[float] | None = None,
) -> float:
    """Share of gap thresholds at which ``front`` reaches at least ``reference``'s accuracy.

    The default grid is the set of gap values on the reference front.
    """
    grid = sorted({d for _, d in reference}) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty comparison grid")
    wins = sum(front_accuracy_at(front, t) >= front_accuracy_at(reference, t) for t in grid)
    return wins / len(grid)
