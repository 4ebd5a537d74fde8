"""Pixel confusion counts, precision/recall/F1 and split-level aggregation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .losses import LabelMask
from .numgrad import DimensionError, Tensor

ROAD = 1


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _road_prob(pred) -> np.ndarray:
    arr = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    if arr.ndim == 3:
        return arr[ROAD]
    if arr.ndim == 2:
        return arr
    raise DimensionError(f"prediction must be [2,H,W] or a [H,W] road map, got {list(arr.shape)}")


def confusion(pred, label: LabelMask, threshold: float = 0.5) -> Confusion:
    """Counts over valid pixels; a pixel is called road when P(road) >= threshold."""
    road = _road_prob(pred)
    if road.shape != label.shape:
        raise DimensionError(f"prediction {list(road.shape)} does not match label {list(label.shape)}")
    called = road >= threshold
    truth = label.classes == ROAD
    v = label.valid
    return Confusion(
        tp=int(np.count_nonzero(called & truth & v)),
        fp=int(np.count_nonzero(called & ~truth & v)),
        fn=int(np.count_nonzero(~called & truth & v)),
        tn=int(np.count_nonzero(~called & ~truth & v)),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_from_pre_rec(pre: float, rec: float) -> float:
    return _ratio(2.0 * pre * rec, pre + rec)


def f1_from_confusion(c: Confusion) -> tuple[float, float, float]:
    """(precision, recall, F1); any 0/0 is taken as 0."""
    pre = _ratio(c.tp, c.tp + c.fp)
    rec = _ratio(c.tp, c.tp + c.fn)
    return pre, rec, f1_from_pre_rec(pre, rec)


def dataset_f1(preds: Iterable, labels: Iterable[LabelMask], threshold: float = 0.5) -> float:
    """Micro-averaged F1: confusion counts summed over frames first."""
    total = Confusion()
    for p, lab in zip(preds, labels):
        total = total + confusion(p, lab, threshold)
    return f1_from_confusion(total)[2]


def max_f1(preds: Sequence, labels: Sequence[LabelMask], levels: int = 256) -> tuple[float, float]:
    """MaxF: best micro-averaged F1 over ``levels`` evenly spaced thresholds.

    Returns (max F1, threshold attaining it).
    """
    thresholds = np.arange(levels) / levels
    tp = np.zeros(levels)
    fp = np.zeros(levels)
    fn = np.zeros(levels)
    for p, lab in zip(preds, labels):
        road = _road_prob(p)[lab.valid]
        truth = (lab.classes == ROAD)[lab.valid]
        called = road[None, :] >= thresholds[:, None]
        tp += (called & truth).sum(axis=1)
        fp += (called & ~truth).sum(axis=1)
        fn += (~called & truth).sum(axis=1)
    best, best_t = 0.0, float(thresholds[0])
    for i, t in enumerate(thresholds):
        _, _, f = f1_from_confusion(Confusion(int(tp[i]), int(fp[i]), int(fn[i]), 0))
        if f > best:
            best, best_t = f, float(t)
    return best, best_t


class SingleSampleWarning(UserWarning):
    pass


def aggregate(scores: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation. A single score gets std 0 and a warning."""
    vals = [float(s) for s in scores]
    if not vals:
        raise ValueError("aggregate needs at least one score")
    mean = math.fsum(vals) / len(vals)
    if len(vals) == 1:
        warnings.warn("standard deviation of a single score reported as 0", SingleSampleWarning, stacklevel=2)
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


class ScoreTable:
    """F1 scores keyed by (subset size, view, method), one entry per split."""

    def __init__(self):
        self.scores: dict[tuple[int, str, str], dict[int, float]] = {}

    def add(self, size: int, view: str, method: str, split_id: int, f1: float) -> None:
        self.scores.setdefault((int(size), view, method), {})[int(split_id)] = float(f1)

    def sizes(self) -> list[int]:
        return sorted({k[0] for k in self.scores})

    def views(self) -> list[str]:
        return sorted({k[1] for k in self.scores})

    def stats(self, size: int, view: str, method: str) -> tuple[float, float, int] | None:
        vals = self.scores.get((size, view, method))
        if not vals:
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingleSampleWarning)
            mean, std = aggregate([vals[k] for k in sorted(vals)])
        return mean, std, len(vals)

    def delta(self, size: int, view: str, method: str = "cotrain", baseline: str = "supervised") -> float | None:
        a = self.stats(size, view, method)
        b = self.stats(size, view, baseline)
        if a is None or b is None:
            return None
        return a[0] - b[0]

    def rows(self, method: str = "cotrain", baseline: str = "supervised") -> list[dict]:
        out = []
        for size in self.sizes():
            for view in self.views():
                base = self.stats(size, view, baseline)
                meth = self.stats(size, view, method)
                out.append({
                    "N": size,
                    "view": view,
                    "baseline_mean": None if base is None else base[0],
                    "baseline_std": None if base is None else base[1],
                    "baseline_n": 0 if base is None else base[2],
                    "method_mean": None if meth is None else meth[0],
                    "method_std": None if meth is None else meth[1],
                    "method_n": 0 if meth is None else meth[2],
                    "delta": self.delta(size, view, method, baseline),
                })
        return out


def _cell(mean, std, n) -> str:
    if mean is None:
        return "--"
    flag = "*" if n == 1 else ""
    return f"{100 * mean:.2f} ± {100 * std:.2f}{flag}"


def format_table(table: ScoreTable, method: str = "cotrain", baseline: str = "supervised") -> str:
    """Plain-text table shaped like ``92.39 ± 1.34 (8.14)`` per (N, view) row.

    ``*`` marks a standard deviation computed from a single split; ``--`` a
    missing cell.
    """
    head = f"{'N':>5}  {'view':<7}  {'Supervised baseline':>20}  {'Co-training':>28}"
    lines = [head, "-" * len(head)]
    for r in table.rows(method, baseline):
        base = _cell(r["baseline_mean"], r["baseline_std"], r["baseline_n"])
        meth = _cell(r["method_mean"], r["method_std"], r["method_n"])
        if r["delta"] is not None:
            meth = f"{meth} ({100 * r['delta']:.2f})"
        lines.append(f"{r['N']:>5}  {r['view']:<7}  {base:>20}  {meth:>28}")
    return "\n".join(lines)
