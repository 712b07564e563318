"""Supervised task losses and their weighted combination.

Label layout conventions used throughout the package (batch-major):

* ``landmarks``  -- (batch, 2m), interleaved as x1, y1, x2, y2, ... in
  face-box-normalized coordinates;
* ``visibility`` -- (batch, m), ground truth exactly 0/1, predictions in (0,1);
* ``pose``       -- (batch, 3) degrees (roll, pitch, yaw) in continuous mode,
  or (batch, K) with one-hot ground truth / probability rows in discrete mode;
* ``gender``     -- (batch, 1), ground truth 0/1, predictions in (0,1);
* ``attributes`` -- (batch, n), ground truth 0/1, predictions in (0,1).

Every loss returns a scalar Tensor averaged over the batch, and every
probability is clamped to [1e-12, 1 - 1e-12] before a log, so all losses are
finite and non-negative on any input in range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ContractViolationError, DimensionError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    clamp_probs,
    log,
    mul,
    neg,
    scale,
    square,
    sub,
    sum_all,
)

ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass
class LabelBundle:
    """One batch of target (or predicted) labels; unused fields stay None."""

    landmarks: Optional[ArrayOrTensor] = None
    visibility: Optional[ArrayOrTensor] = None
    pose: Optional[ArrayOrTensor] = None
    gender: Optional[ArrayOrTensor] = None
    attributes: Optional[ArrayOrTensor] = None

    def field_names(self):
        return tuple(
            name for name in ("landmarks", "visibility", "pose", "gender", "attributes")
            if getattr(self, name) is not None
        )


def bundle_values(bundle: LabelBundle) -> LabelBundle:
    """Copy of ``bundle`` with every field as a plain ndarray."""
    def val(x):
        if x is None:
            return None
        return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

    return LabelBundle(
        landmarks=val(bundle.landmarks),
        visibility=val(bundle.visibility),
        pose=val(bundle.pose),
        gender=val(bundle.gender),
        attributes=val(bundle.attributes),
    )


def bundle_rows(bundle: LabelBundle, idx) -> LabelBundle:
    """Select rows ``idx`` from every ndarray field (ground truth batches)."""
    def take(x):
        return None if x is None else np.asarray(x)[idx]

    return LabelBundle(
        landmarks=take(bundle.landmarks),
        visibility=take(bundle.visibility),
        pose=take(bundle.pose),
        gender=take(bundle.gender),
        attributes=take(bundle.attributes),
    )


@dataclass
class LossWeights:
    """Non-negative weights for the supervised tasks and the adversarial term."""

    landmark: float = 1.0
    visibility: float = 1.0
    pose: float = 1.0
    gender: float = 1.0
    attributes: float = 1.0
    adversarial: float = 0.1

    def validate(self):
        for name, value in vars(self).items():
            v = float(value)
            if not np.isfinite(v) or v < 0.0:
                raise ContractViolationError(f"loss weight {name}={value} must be finite and >= 0")


def _truth_array(x, name) -> np.ndarray:
    if x is None:
        raise ContractViolationError(f"ground-truth bundle is missing field '{name}'")
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def _check_binary(arr: np.ndarray, name: str) -> None:
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ContractViolationError(f"ground-truth {name} must be exactly 0 or 1")


def _bce_mean(pred: Tensor, truth: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over every element of the batch."""
    p = clamp_probs(as_tensor(pred))
    t = truth
    # -(mean over elements)[t log p + (1-t) log(1-p)]
    term = add(mul(Tensor(t), log(p)), mul(Tensor(1.0 - t), log(sub(Tensor(np.ones_like(t)), p))))
    return neg(scale(sum_all(term), 1.0 / t.size))


def loss_landmark(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Visibility-masked squared landmark error, (1/2m) sum_i v_i (dx_i^2 + dy_i^2)."""
    p = as_tensor(pred.landmarks)
    t = _truth_array(truth.landmarks, "landmarks")
    v = _truth_array(truth.visibility, "visibility")
    if p.data.shape != t.shape or t.shape[1] != 2 * v.shape[1]:
        raise DimensionError(
            f"landmark shapes do not agree: predicted {p.data.shape}, truth {t.shape}, "
            f"visibility {v.shape}"
        )
    _check_binary(v, "visibility")
    batch, two_m = t.shape
    mask = np.repeat(v, 2, axis=1)  # v_i masks both the x and y residual
    masked = mul(square(sub(p, Tensor(t))), Tensor(mask))
    return scale(sum_all(masked), 1.0 / (two_m * batch))


def loss_visibility(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Mean binary cross-entropy of per-landmark visibility."""
    p = as_tensor(pred.visibility)
    t = _truth_array(truth.visibility, "visibility")
    if p.data.shape != t.shape:
        raise DimensionError(f"visibility shapes differ: predicted {p.data.shape}, truth {t.shape}")
    _check_binary(t, "visibility")
    return _bce_mean(p, t)


def loss_pose_continuous(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Mean squared error over the three pose angles (degrees)."""
    p = as_tensor(pred.pose)
    t = _truth_array(truth.pose, "pose")
    if p.data.shape != t.shape or t.shape[1] != 3:
        raise DimensionError(f"continuous pose expects (batch, 3): predicted {p.data.shape}, truth {t.shape}")
    batch = t.shape[0]
    return scale(sum_all(square(sub(p, Tensor(t)))), 1.0 / (3.0 * batch))


def loss_pose_discrete(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Cross-entropy against a one-hot pose class."""
    p = as_tensor(pred.pose)
    t = _truth_array(truth.pose, "pose")
    if p.data.shape != t.shape:
        raise DimensionError(f"pose shapes differ: predicted {p.data.shape}, truth {t.shape}")
    _check_binary(t, "pose")
    if not np.all(t.sum(axis=1) == 1.0):
        raise ContractViolationError("discrete pose ground truth must be one-hot rows")
    batch = t.shape[0]
    picked = mul(Tensor(t), log(clamp_probs(p)))
    return neg(scale(sum_all(picked), 1.0 / batch))


def loss_gender(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Binary cross-entropy of the gender head."""
    p = as_tensor(pred.gender)
    t = _truth_array(truth.gender, "gender")
    if p.data.shape != t.shape:
        raise DimensionError(f"gender shapes differ: predicted {p.data.shape}, truth {t.shape}")
    _check_binary(t, "gender")
    return _bce_mean(p, t)


def loss_attributes(pred: LabelBundle, truth: LabelBundle) -> Tensor:
    """Mean binary cross-entropy over the n attributes."""
    p = as_tensor(pred.attributes)
    t = _truth_array(truth.attributes, "attributes")
    if p.data.shape != t.shape:
        raise DimensionError(f"attribute shapes differ: predicted {p.data.shape}, truth {t.shape}")
    _check_binary(t, "attributes")
    return _bce_mean(p, t)


def supervised_components(pred: LabelBundle, truth: LabelBundle, mode: str,
                          pose_kind: str = "discrete") -> dict:
    """Each task loss as a named scalar Tensor, before weighting."""
    if mode == "landmark":
        pose_fn = loss_pose_continuous if pose_kind == "continuous" else loss_pose_discrete
        return {
            "landmark": loss_landmark(pred, truth),
            "visibility": loss_visibility(pred, truth),
            "pose": pose_fn(pred, truth),
            "gender": loss_gender(pred, truth),
        }
    if mode == "attribute":
        return {"attributes": loss_attributes(pred, truth)}
    raise ContractViolationError(f"unknown mode '{mode}'")


def combine_supervised(components: dict, weights: LossWeights, mode: str) -> Tensor:
    """Weighted sum of the task losses for the given mode."""
    weights.validate()
    if mode == "landmark":
        parts = [
            (weights.landmark, components["landmark"]),
            (weights.visibility, components["visibility"]),
            (weights.pose, components["pose"]),
            (weights.gender, components["gender"]),
        ]
    elif mode == "attribute":
        parts = [(weights.attributes, components["attributes"])]
    else:
        raise ContractViolationError(f"unknown mode '{mode}'")
    total = None
    for w, loss in parts:
        if w == 0.0:
            continue
        term = scale(loss, w)
        total = term if total is None else add(total, term)
    if total is None:
        total = Tensor(0.0)
    return total


def loss_supervised(pred: LabelBundle, truth: LabelBundle, weights: LossWeights,
                    mode: str, pose_kind: str = "discrete") -> Tensor:
    return combine_supervised(supervised_components(pred, truth, mode, pose_kind), weights, mode)
