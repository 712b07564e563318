"""Label-combination assembly and the adversarial objectives.

A label combination is the fixed-order concatenation (landmarks, visibility,
pose, gender, attributes) of the label fields named by a subset. Predicted
combinations are assembled from head outputs directly, so gradients flow
back into the recognizer; ground-truth combinations are exact binary/one-hot
values wrapped as constants. Continuous pose entries are scaled by
``pose_scale`` (degrees / 90 by convention elsewhere in the package) to keep
the discriminator's input bounded like the normalized landmark coordinates.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .losses import LabelBundle, LossWeights
from .tensor import Tensor, add, as_tensor, clamp_probs, concat_columns, log, mean_all, neg, scale, sub

# Subset names follow the ablation family: which label fields feed the
# discriminator. "none" disables the adversary entirely.
SUBSET_FIELDS = {
    "none": (),
    "l": ("landmarks",),
    "lv": ("landmarks", "visibility"),
    "lvg": ("landmarks", "visibility", "gender"),
    "lvp": ("landmarks", "visibility", "pose"),
    "all": ("landmarks", "visibility", "pose", "gender"),
    "attr": ("attributes",),
}

FIELD_ORDER = ("landmarks", "visibility", "pose", "gender", "attributes")

# Degrees are mapped into [-1, 1] when continuous pose enters a combo.
DEGREES_COMBO_SCALE = 1.0 / 90.0


def subset_fields(name: str):
    try:
        return SUBSET_FIELDS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown label subset '{name}'; expected one of {sorted(SUBSET_FIELDS)}"
        ) from None


def combo_width(subset: str, m: int = 0, pose_width: int = 0, n_attributes: int = 0) -> int:
    widths = {
        "landmarks": 2 * m,
        "visibility": m,
        "pose": pose_width,
        "gender": 1,
        "attributes": n_attributes,
    }
    return sum(widths[f] for f in subset_fields(subset))


def assemble_combo(bundle: LabelBundle, subset: str, pose_scale: float = 1.0) -> Tensor:
    """Concatenate the subset's fields, in fixed order, into a (batch, width) combo."""
    fields = subset_fields(subset)
    if not fields:
        raise ConfigurationError("subset 'none' has no combo to assemble")
    parts = []
    for name in FIELD_ORDER:
        if name not in fields:
            continue
        value = getattr(bundle, name)
        if value is None:
            raise ConfigurationError(f"bundle is missing field '{name}' required by the subset")
        t = as_tensor(value)
        if name == "pose" and pose_scale != 1.0:
            t = scale(t, pose_scale)
        parts.append(t)
    if len(parts) == 1:
        return parts[0]
    return concat_columns(parts)


def slice_combo(values: np.ndarray, subset: str, m: int = 0, pose_width: int = 0,
                n_attributes: int = 0) -> dict:
    """Split a combo value matrix back into its named fields (testing aid)."""
    widths = {
        "landmarks": 2 * m,
        "visibility": m,
        "pose": pose_width,
        "gender": 1,
        "attributes": n_attributes,
    }
    out = {}
    offset = 0
    for name in FIELD_ORDER:
        if name not in subset_fields(subset):
            continue
        w = widths[name]
        out[name] = values[:, offset:offset + w]
        offset += w
    return out


def loss_adv_recognizer(d_out) -> Tensor:
    """Recognizer-side adversarial loss: batch mean of -log D(prediction)."""
    return neg(mean_all(log(clamp_probs(as_tensor(d_out)))))


def loss_discriminator(d_real, d_fake) -> Tensor:
    """Discriminator loss: batch mean of -[log D(real) + log(1 - D(fake))].

    The fake path must already be detached from the recognizer; this
    function does not stop gradients itself.
    """
    d_real = clamp_probs(as_tensor(d_real))
    d_fake = clamp_probs(as_tensor(d_fake))
    real_term = mean_all(log(d_real))
    fake_term = mean_all(log(sub(Tensor(np.ones_like(d_fake.data)), d_fake)))
    return neg(add(real_term, fake_term))


def loss_recognizer_total(supervised, adversarial, weights: LossWeights) -> Tensor:
    """Full recognizer objective: supervised + adversarial_weight * adversarial."""
    if weights.adversarial == 0.0:
        return as_tensor(supervised)
    return add(as_tensor(supervised), scale(as_tensor(adversarial), weights.adversarial))


def discriminator_accuracy(d_real_values: np.ndarray, d_fake_values: np.ndarray) -> float:
    """Fraction of combos classified correctly at the 0.5 threshold."""
    correct = float(np.count_nonzero(d_real_values > 0.5) + np.count_nonzero(d_fake_values < 0.5))
    total = d_real_values.size + d_fake_values.size
    return correct / total
