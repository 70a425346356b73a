"""Stage-II fine-tuning of a pruned generator against its condensed teacher."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import DEFAULT_LEARNING_RATE
from .core.ops import concat_channels, l1_loss
from .core.optim import AdamState, adam_step, zero_grad
from .dataio import Checkpoint, PairedSample, iterate_batches, save_checkpoint
from .errors import ConfigurationError
from .netgraph import NetworkGraph, forward
from .trainer import (
    GanBatchLoss,
    LogRecord,
    TrainingLog,
    discriminator_step,
    generator_adversarial_loss,
    raise_on_non_finite,
)

logger = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    weight_gt_l1: float = 100.0
    weight_teacher_l1: float = 100.0
    weight_gan: float = 1.0
    epochs: int = 1
    batch_size: int = 1
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    halve_discriminator: bool = True

    def validate(self) -> None:
        weights = (self.weight_gt_l1, self.weight_teacher_l1, self.weight_gan)
        if min(weights) < 0:
            raise ConfigurationError("distill loss weights must be non-negative")
        if max(weights) <= 0:
            raise ConfigurationError("at least one distill loss weight must be positive")
        if self.epochs < 1:
            raise ConfigurationError(f"distill.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"distill.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"distill.learning_rate must be positive, got {self.learning_rate}")


@dataclass
class Stage2Result:
    checkpoint: Checkpoint
    log: TrainingLog = field(default_factory=TrainingLog)


def stage2_finetune(
    student: NetworkGraph,
    teacher: NetworkGraph,
    discriminator: NetworkGraph,
    dataset: Sequence[PairedSample],
    config: DistillConfig,
    checkpoint_path=None,
    metadata: Optional[dict[str, str]] = None,
) -> Stage2Result:
    """Minimise ``w_gt * l1(s, y) + w_teacher * l1(s, t) + w_gan * gan_g`` over the student.

    The teacher only runs inference; the discriminator is trained alongside
    the student when ``weight_gan`` is positive.
    """
    config.validate()
    if not dataset:
        raise ConfigurationError("stage II needs a non-empty dataset")
    if not student.same_topology(teacher):
        raise ConfigurationError(
            "student and teacher differ beyond channel counts", {"student": student.name}
        )
    student = student.copy()
    discriminator = discriminator.copy()
    s_params = student.parameters()
    s_state = AdamState.for_params(s_params, config.learning_rate)
    d_state = AdamState.for_params(discriminator.parameters(), config.learning_rate)

    log = TrainingLog()
    step = 0
    for epoch in range(config.epochs):
        epoch_totals: list[float] = []
        for masks, images in iterate_batches(dataset, config.batch_size, config.seed, epoch):
            step += 1
            target = forward(teacher, masks, record_gradients=False)
            output = forward(student, masks)
            raise_on_non_finite([("teacher_output", target), ("student_output", output)], epoch + 1, step)

            gan_d = 0.0
            gan_g_value = 0.0
            gt_l1 = l1_loss(output, images)
            teacher_l1 = l1_loss(output, target)
            total = gt_l1 * config.weight_gt_l1 + teacher_l1 * config.weight_teacher_l1
            if config.weight_gan > 0:
                gan_d = discriminator_step(
                    discriminator, d_state, masks, images, output, config.halve_discriminator, epoch + 1, step
                )
                gan_g = generator_adversarial_loss(forward(discriminator, concat_channels(masks, output)))
                raise_on_non_finite([("gan_g", gan_g)], epoch + 1, step)
                total = total + gan_g * config.weight_gan
                gan_g_value = gan_g.item()
            raise_on_non_finite([("total", total)], epoch + 1, step)

            zero_grad(s_params)
            total.backward()
            adam_step(s_params, s_state)
            zero_grad(s_params)
            zero_grad(discriminator.parameters())

            loss = GanBatchLoss(
                gan_g=gan_g_value, gan_d=gan_d, l1=gt_l1.item(), penal=0.0, total_g=total.item()
            )
            log.records.append(
                LogRecord(epoch=epoch + 1, step=step, loss=loss, teacher_l1=teacher_l1.item())
            )
            epoch_totals.append(loss.total_g)
        logger.info(
            "distill epoch %d/%d: total=%.4f teacher_l1=%.4f",
            epoch + 1,
            config.epochs,
            float(np.mean(epoch_totals)),
            log.records[-1].teacher_l1,
        )

    meta = dict(metadata or {})
    meta.update(
        {
            "epoch": str(config.epochs),
            "seed": str(config.seed),
            "stage": "2",
            "step": str(step),
            "weight_gan": repr(float(config.weight_gan)),
            "weight_gt_l1": repr(float(config.weight_gt_l1)),
            "weight_teacher_l1": repr(float(config.weight_teacher_l1)),
        }
    )
    checkpoint = Checkpoint(
        graphs={"generator": student, "discriminator": discriminator},
        optimizer_states={"generator": s_state, "discriminator": d_state},
        metadata=meta,
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, checkpoint)
    return Stage2Result(checkpoint=checkpoint, log=log)
