"""Alternating minibatch training of the recognizer/discriminator pair.

Each outer step runs ``inner_steps`` discriminator updates, then one
recognizer update. Discriminator updates draw a feature batch and a label
batch independently by default (unpaired real combos); set
``paired_discriminator_batches`` to use one paired draw instead. The fake
combos fed to the discriminator come from a fresh recognizer forward pass
evaluated off-tape, so no gradient ever reaches recognizer parameters from a
discriminator update, and recognizer updates never step discriminator
parameters.

Batch sampling uses ``numpy.random.default_rng(config.seed)`` and draws
``rng.integers(0, n, size=batch_size)`` per batch (with replacement), or an
epoch-shuffled cursor when ``sampling="epoch"``; with a fixed seed the whole
index sequence is reproducible.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import checkpoint as checkpoint_io
from .adversary import (
    DEGREES_COMBO_SCALE,
    assemble_combo,
    combo_width,
    discriminator_accuracy,
    loss_adv_recognizer,
    loss_discriminator,
    loss_recognizer_total,
    subset_fields,
)
from .errors import ConfigurationError, TrainingAbortError
from .losses import (
    LabelBundle,
    LossWeights,
    bundle_rows,
    bundle_values,
    combine_supervised,
    supervised_components,
)
from .models import Discriminator, Recognizer
from .tensor import SGD, Tape, backward, zero_grads

logger = logging.getLogger(__name__)

# Consecutive outer steps with a saturated discriminator before warning.
_DIVERGENCE_GUARD_LOSS = 0.05
_DIVERGENCE_GUARD_STEPS = 50


@dataclass
class TrainConfig:
    batch_size: int = 32
    outer_steps: int = 1000
    inner_steps: int = 1
    lr_recognizer: float = 0.2
    lr_discriminator: float = 0.1
    momentum: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    subset: str = "all"
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0
    paired_discriminator_batches: bool = False
    sampling: str = "replacement"

    def validate(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.outer_steps < 1:
            raise ConfigurationError("outer_steps must be >= 1")
        if self.inner_steps < 0:
            raise ConfigurationError("inner_steps must be >= 0")
        if self.lr_recognizer <= 0 or self.lr_discriminator <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.sampling not in ("replacement", "epoch"):
            raise ConfigurationError(f"unknown sampling mode '{self.sampling}'")
        self.weights.validate()
        subset_fields(self.subset)
        if self.subset == "none":
            if self.inner_steps != 0:
                raise ConfigurationError("subset 'none' requires inner_steps=0")
            if self.weights.adversarial != 0.0:
                raise ConfigurationError("subset 'none' requires adversarial weight 0")


@dataclass
class StepRecord:
    step: int
    loss_landmark: float = float("nan")
    loss_vis: float = float("nan")
    loss_pose: float = float("nan")
    loss_gender: float = float("nan")
    loss_attr: float = float("nan")
    loss_adv_r: float = float("nan")
    loss_d: float = float("nan")
    d_acc: float = float("nan")
    ms: float = 0.0
    d_losses: tuple = ()


CSV_HEADER = "step,loss_landmark,loss_vis,loss_pose,loss_gender,loss_attr,loss_adv_r,loss_d,d_acc,ms"


class TrainLog:
    """Per-outer-step records plus run-level instrumentation."""

    def __init__(self, config_hash: str = ""):
        self.records: list[StepRecord] = []
        self.update_sequence: list[str] = []
        self.warnings: list[str] = []
        self.eval_records: list = []
        self.config_hash = config_hash

    def to_csv(self) -> str:
        lines = []
        if self.config_hash:
            lines.append(f"# config_hash={self.config_hash}")
        lines.append(CSV_HEADER)
        for r in self.records:
            cells = [str(r.step)] + [
                repr(float(v)) for v in (
                    r.loss_landmark, r.loss_vis, r.loss_pose, r.loss_gender,
                    r.loss_attr, r.loss_adv_r, r.loss_d, r.d_acc, r.ms,
                )
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_csv())


class _BatchSampler:
    def __init__(self, rng, n: int, batch_size: int, mode: str):
        self.rng = rng
        self.n = n
        self.batch_size = batch_size
        self.mode = mode
        self._perm = None
        self._cursor = 0

    def draw(self) -> np.ndarray:
        if self.mode == "replacement":
            return self.rng.integers(0, self.n, size=self.batch_size)
        if self._perm is None or self._cursor + self.batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._cursor = 0
        out = self._perm[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return out


@dataclass
class DiscriminatorStepResult:
    loss: float
    accuracy: float


@dataclass
class RecognizerStepResult:
    loss_supervised: float
    loss_adversarial: float
    per_task: dict


def _pose_scale(recognizer: Recognizer) -> float:
    if recognizer.mode == "landmark" and recognizer.pose_kind == "continuous":
        return DEGREES_COMBO_SCALE
    return 1.0


def update_discriminator_step(batch_features: np.ndarray, batch_labels: LabelBundle,
                              recognizer: Recognizer, discriminator: Discriminator,
                              cfg: TrainConfig,
                              optimizer: Optional[SGD] = None) -> DiscriminatorStepResult:
    """One discriminator update: real combos from ``batch_labels``, fake combos
    from a fresh off-tape recognizer pass over ``batch_features``."""
    if optimizer is None:
        optimizer = SGD(discriminator.parameters(), cfg.lr_discriminator, cfg.momentum)
    pose_scale = _pose_scale(recognizer)
    fake_bundle = bundle_values(recognizer.forward(batch_features))  # detached
    fake = assemble_combo(fake_bundle, cfg.subset, pose_scale)
    real = assemble_combo(batch_labels, cfg.subset, pose_scale)
    zero_grads(discriminator.parameters())
    with Tape() as tape:
        d_real = discriminator.forward(real)
        d_fake = discriminator.forward(fake)
        loss = loss_discriminator(d_real, d_fake)
    backward(loss, tape)
    optimizer.step()
    acc = discriminator_accuracy(d_real.data, d_fake.data)
    return DiscriminatorStepResult(loss=loss.item(), accuracy=acc)


def update_recognizer_step(batch_features: np.ndarray, batch_labels: LabelBundle,
                           recognizer: Recognizer, discriminator: Optional[Discriminator],
                           cfg: TrainConfig,
                           optimizer: Optional[SGD] = None) -> RecognizerStepResult:
    """One recognizer update descending supervised + weighted adversarial loss."""
    if optimizer is None:
        optimizer = SGD(recognizer.parameters(), cfg.lr_recognizer, cfg.momentum)
    adversarial = cfg.subset != "none"
    zero_grads(recognizer.parameters())
    if adversarial:
        zero_grads(discriminator.parameters())
    with Tape() as tape:
        pred = recognizer.forward(batch_features)
        components = supervised_components(pred, batch_labels, recognizer.mode,
                                           recognizer.pose_kind)
        supervised = combine_supervised(components, cfg.weights, recognizer.mode)
        if adversarial:
            combo = assemble_combo(pred, cfg.subset, _pose_scale(recognizer))
            adv = loss_adv_recognizer(discriminator.forward(combo))
            total = loss_recognizer_total(supervised, adv, cfg.weights)
        else:
            adv = None
            total = supervised
    backward(total, tape)
    optimizer.step()
    return RecognizerStepResult(
        loss_supervised=supervised.item(),
        loss_adversarial=adv.item() if adv is not None else float("nan"),
        per_task={name: t.item() for name, t in components.items()},
    )


def _check_widths(dataset, recognizer: Recognizer, discriminator, cfg: TrainConfig):
    if dataset.features.shape[1] != recognizer.in_dim:
        raise ConfigurationError(
            f"dataset feature width {dataset.features.shape[1]} does not match "
            f"recognizer input width {recognizer.in_dim}"
        )
    if cfg.subset == "none":
        return
    if discriminator is None:
        raise ConfigurationError(f"subset '{cfg.subset}' needs a discriminator")
    expected = combo_width(
        cfg.subset, m=recognizer.m,
        pose_width=(3 if recognizer.pose_kind == "continuous" else recognizer.pose_bins),
        n_attributes=recognizer.n_attributes,
    )
    if expected != discriminator.in_width:
        raise ConfigurationError(
            f"subset '{cfg.subset}' produces combos of width {expected}, discriminator "
            f"expects {discriminator.in_width}"
        )


def train(dataset, recognizer: Recognizer, discriminator: Optional[Discriminator],
          cfg: TrainConfig, *, eval_fn: Optional[Callable] = None, out_dir=None,
          config_hash: str = "", on_update: Optional[Callable] = None):
    """Run ``outer_steps`` rounds of (inner_steps x D-update, 1 x R-update).

    Returns ``(recognizer, discriminator, TrainLog)``; the models are updated
    in place. ``on_update(kind, outer_step, recognizer, discriminator)`` fires
    after every single parameter update for instrumentation.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigurationError("training set is empty")
    _check_widths(dataset, recognizer, discriminator, cfg)
    adversarial = cfg.subset != "none"

    rng = np.random.default_rng(cfg.seed)
    sampler = _BatchSampler(rng, len(dataset), cfg.batch_size, cfg.sampling)
    opt_r = SGD(recognizer.parameters(), cfg.lr_recognizer, cfg.momentum)
    opt_d = SGD(discriminator.parameters(), cfg.lr_discriminator, cfg.momentum) \
        if adversarial else None

    log = TrainLog(config_hash=config_hash)
    features = dataset.features
    labels = dataset.labels
    saturated_streak = 0

    for step in range(1, cfg.outer_steps + 1):
        t0 = time.perf_counter()
        d_losses = []
        d_acc = float("nan")
        for _ in range(cfg.inner_steps):
            if cfg.paired_discriminator_batches:
                idx = sampler.draw()
                feat_idx, label_idx = idx, idx
            else:
                feat_idx = sampler.draw()
                label_idx = sampler.draw()
            result = update_discriminator_step(
                features[feat_idx], bundle_rows(labels, label_idx),
                recognizer, discriminator, cfg, opt_d,
            )
            log.update_sequence.append("D")
            if on_update is not None:
                on_update("D", step, recognizer, discriminator)
            if not np.isfinite(result.loss):
                raise TrainingAbortError(
                    f"non-finite discriminator loss at outer step {step}"
                )
            d_losses.append(result.loss)
            d_acc = result.accuracy

        idx = sampler.draw()
        r_result = update_recognizer_step(
            features[idx], bundle_rows(labels, idx), recognizer, discriminator, cfg, opt_r,
        )
        log.update_sequence.append("R")
        if on_update is not None:
            on_update("R", step, recognizer, discriminator)
        total_check = r_result.loss_supervised + (
            r_result.loss_adversarial if adversarial else 0.0)
        if not np.isfinite(total_check):
            raise TrainingAbortError(f"non-finite recognizer loss at outer step {step}")

        per_task = r_result.per_task
        record = StepRecord(
            step=step,
            loss_landmark=per_task.get("landmark", float("nan")),
            loss_vis=per_task.get("visibility", float("nan")),
            loss_pose=per_task.get("pose", float("nan")),
            loss_gender=per_task.get("gender", float("nan")),
            loss_attr=per_task.get("attributes", float("nan")),
            loss_adv_r=r_result.loss_adversarial,
            loss_d=float(np.mean(d_losses)) if d_losses else float("nan"),
            d_acc=d_acc,
            ms=(time.perf_counter() - t0) * 1000.0,
            d_losses=tuple(d_losses),
        )
        log.records.append(record)

        if d_losses and record.loss_d < _DIVERGENCE_GUARD_LOSS:
            saturated_streak += 1
            if saturated_streak == _DIVERGENCE_GUARD_STEPS:
                message = (
                    f"discriminator loss below {_DIVERGENCE_GUARD_LOSS} for "
                    f"{_DIVERGENCE_GUARD_STEPS} consecutive steps (through step {step}); "
                    "training continues unmodified"
                )
                log.warnings.append(message)
                logger.warning(message)
        else:
            saturated_streak = 0

        if cfg.eval_every > 0 and eval_fn is not None and step % cfg.eval_every == 0:
            log.eval_records.append((step, eval_fn(recognizer, step)))
        if cfg.checkpoint_every > 0 and out_dir is not None and step % cfg.checkpoint_every == 0:
            checkpoint_io.save(f"{out_dir}/recognizer_step{step}.mtal", recognizer,
                               config_hash or "unspecified")

    return recognizer, discriminator, log
