"""Supervised cross-entropy, teacher-to-student KL agreement, and their weighted sum.

All losses average over valid pixels so their scale does not depend on image
size or on how much of the label is marked as ignore.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numgrad import DimensionError, NumgradError, Tensor, add, record, scale

PROB_FLOOR = 1e-12


class EmptyLossError(NumgradError):
    pass


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel road label plus validity; ``valid == 0`` marks ignored pixels."""

    classes: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int64)
        valid = np.asarray(self.valid, dtype=bool)
        if classes.shape != valid.shape or classes.ndim != 2:
            raise DimensionError(f"label classes {classes.shape} and valid {valid.shape} must be equal 2-D shapes")
        if not np.isin(classes, (0, 1)).all():
            raise ValueError("label classes must be 0 or 1")
        classes.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def all_valid(cls, classes) -> "LabelMask":
        classes = np.asarray(classes)
        return cls(classes, np.ones(classes.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def num_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class CotrainWeight:
    lambda_cot: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.lambda_cot) or self.lambda_cot < 0:
            raise ValueError(f"lambda_cot must be finite and >= 0, got {self.lambda_cot}")


def _as_valid(valid, shape) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != shape:
        raise DimensionError(f"mask shape {valid.shape} does not match prediction pixels {shape}")
    return valid


def cross_entropy(pred: Tensor, label: LabelMask) -> Tensor:
    """Mean of ``-ln pred[class(p), p]`` over valid pixels ``p``."""
    if pred.data.ndim != 3 or pred.shape[1:] != label.shape:
        raise DimensionError(f"prediction {list(pred.shape)} does not match label {list(label.shape)}")
    n = label.num_valid()
    if n == 0:
        raise EmptyLossError("cross_entropy: label has no valid pixels")
    onehot = np.zeros(pred.shape, dtype=bool)
    onehot[(label.classes, *np.indices(label.shape))] = True
    onehot &= label.valid[None]
    picked = pred.data[onehot]
    clamped = picked < PROB_FLOOR
    value = -np.log(np.maximum(picked, PROB_FLOOR)).sum() / n

    def grad_fn(g):
        gp = np.zeros(pred.shape)
        gp[onehot] = np.where(clamped, 0.0, -1.0 / np.maximum(picked, PROB_FLOOR)) * (float(g) / n)
        return (gp,)

    return record("cross_entropy", np.array(value), (pred,), grad_fn)


def kl_divergence(teacher, student: Tensor, valid=None) -> Tensor:
    """Mean over valid pixels of ``sum_c t_c ln(t_c / s_c)``.

    The teacher is a constant target: no gradient is routed to it even when it
    is a tracked tensor. Terms with ``t_c == 0`` contribute zero.
    """
    t = np.asarray(teacher.data if isinstance(teacher, Tensor) else teacher, dtype=np.float64)
    s = student.data
    if t.shape != s.shape or s.ndim != 3:
        raise DimensionError(f"teacher {list(t.shape)} and student {list(s.shape)} must match as [C,H,W]")
    mask = _as_valid(valid, s.shape[1:])
    n = int(mask.sum())
    if n == 0:
        raise EmptyLossError("kl_divergence: no valid pixels")
    s_c = np.maximum(s, PROB_FLOOR)
    t_pos = t > 0
    log_t = np.log(np.where(t_pos, t, 1.0))
    terms = np.where(t_pos, t * (log_t - np.log(s_c)), 0.0)
    value = terms.sum(axis=0)[mask].sum() / n

    def grad_fn(g):
        gs = np.where(s >= PROB_FLOOR, -t / s_c, 0.0) * mask[None] * (float(g) / n)
        return (gs,)

    return record("kl_divergence", np.array(value), (student,), grad_fn)


def total_loss(l_sup: Tensor, l_cot: Tensor, weight: CotrainWeight | float) -> Tensor:
    """``l_sup + lambda_cot * l_cot``."""
    lam = weight.lambda_cot if isinstance(weight, CotrainWeight) else CotrainWeight(float(weight)).lambda_cot
    return add(l_sup, scale(l_cot, lam))
