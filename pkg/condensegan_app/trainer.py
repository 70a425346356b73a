"""Stage-I training: conditional GAN with l1 reconstruction and channel penalization."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constants import DEFAULT_LAMBDA_L1, DEFAULT_LEARNING_RATE, DEFAULT_NEAR_ZERO_THRESHOLD
from .core.ops import bce_loss, concat_channels, l1_loss
from .core.optim import AdamState, adam_step, zero_grad
from .core.tensor import Tensor, first_non_finite, no_grad
from .costmodel import CostVector, build_cost_vector
from .dataio import Checkpoint, PairedSample, iterate_batches, save_checkpoint, stack_batch
from .errors import ConfigurationError, DomainError, NonFiniteError
from .netgraph import NetworkGraph, forward
from .penalize import (
    PenalizationConfig,
    calibrate_alpha,
    channel_importance,
    total_penalty,
    total_penalty_tensor,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 1
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    lambda_l1: float = DEFAULT_LAMBDA_L1
    penal: PenalizationConfig = field(default_factory=PenalizationConfig)
    halve_discriminator: bool = True
    checkpoint_every: int = 1
    near_zero_threshold: float = DEFAULT_NEAR_ZERO_THRESHOLD

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"train.learning_rate must be positive, got {self.learning_rate}")
        if self.lambda_l1 <= 0:
            raise ConfigurationError(f"train.lambda_l1 must be positive, got {self.lambda_l1}")
        if self.checkpoint_every < 1:
            raise ConfigurationError(f"train.checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not 0.0 < self.near_zero_threshold < 1.0:
            raise ConfigurationError(
                f"train.near_zero_threshold must lie in (0, 1), got {self.near_zero_threshold}"
            )
        self.penal.validate()


@dataclass
class GanBatchLoss:
    gan_g: float
    gan_d: float
    l1: float
    penal: float
    total_g: float


@dataclass
class LogRecord:
    epoch: int
    step: int
    loss: GanBatchLoss
    near_zero_fraction: Optional[float] = None
    teacher_l1: Optional[float] = None

    def as_row(self) -> dict[str, object]:
        row: dict[str, object] = {
            "epoch": self.epoch,
            "step": self.step,
            "gan_g": self.loss.gan_g,
            "gan_d": self.loss.gan_d,
            "l1": self.loss.l1,
            "penal": self.loss.penal,
            "total_g": self.loss.total_g,
            "near_zero_fraction": self.near_zero_fraction,
        }
        if self.teacher_l1 is not None:
            row["teacher_l1"] = self.teacher_l1
        return row


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)
    alpha: float = 0.0

    def rows(self) -> list[dict[str, object]]:
        return [record.as_row() for record in self.records]


@dataclass
class Stage1Result:
    checkpoint: Checkpoint
    log: TrainingLog
    alpha: float


# ------------------------------------------------------------------- losses
def discriminator_loss(d_real: Tensor, d_fake: Tensor, halve: bool = True) -> Tensor:
    ones = Tensor(np.ones(d_real.shape), dtype=d_real.dtype)
    zeros = Tensor(np.zeros(d_fake.shape), dtype=d_fake.dtype)
    loss = bce_loss(d_real, ones) + bce_loss(d_fake, zeros)
    return loss * 0.5 if halve else loss


def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating form: -mean log D(G(x))."""
    return bce_loss(d_fake, Tensor(np.ones(d_fake.shape), dtype=d_fake.dtype))


def gan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """(g_loss, d_loss) with the discriminator objective halved."""
    return generator_adversarial_loss(d_fake), discriminator_loss(d_real, d_fake, halve=True)


# ---------------------------------------------------------------- telemetry
def near_zero_fraction(graph: NetworkGraph, rel_threshold: float = DEFAULT_NEAR_ZERO_THRESHOLD) -> float:
    """Share of prunable channels whose magnitude is below ``rel_threshold`` x their layer's max."""
    if not 0.0 < rel_threshold < 1.0:
        raise DomainError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    counted = 0
    total = 0
    for layer_id in graph.prunable_layer_ids():
        gamma = channel_importance(graph, layer_id).gamma
        total += gamma.size
        peak = gamma.max()
        if peak > 0:
            counted += int((gamma < rel_threshold * peak).sum())
    return counted / total if total else 0.0


def evaluate_l1(generator: NetworkGraph, samples: Sequence[PairedSample], batch_size: int = 8) -> float:
    """Mean absolute reconstruction error over ``samples``."""
    if not samples:
        raise ConfigurationError("evaluate_l1 needs at least one sample")
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(samples), batch_size):
            masks, images = stack_batch(samples[start : start + batch_size])
            output = forward(generator, masks, record_gradients=False)
            total += float(np.abs(output.data.astype(np.float64) - images.data).sum())
            count += images.size
    return total / count


def raise_on_non_finite(named: Sequence[tuple[str, Tensor]], epoch: int, step: int) -> None:
    name = first_non_finite(named)
    if name is not None:
        raise NonFiniteError(
            f"non-finite value in '{name}' at epoch {epoch} step {step}",
            {"tensor": name, "epoch": epoch, "step": step},
        )


def discriminator_step(
    discriminator: NetworkGraph,
    state: AdamState,
    masks: Tensor,
    images: Tensor,
    fake: Tensor,
    halve: bool,
    epoch: int,
    step: int,
) -> float:
    """One discriminator update on real pairs and detached fakes; returns its loss."""
    d_params = discriminator.parameters()
    d_real = forward(discriminator, concat_channels(masks, images))
    d_fake = forward(discriminator, concat_channels(masks, fake.detach()))
    raise_on_non_finite([("d_real", d_real), ("d_fake", d_fake)], epoch, step)
    d_loss = discriminator_loss(d_real, d_fake, halve)
    raise_on_non_finite([("gan_d", d_loss)], epoch, step)
    zero_grad(d_params)
    d_loss.backward()
    adam_step(d_params, state)
    zero_grad(d_params)
    return d_loss.item()


# ------------------------------------------------------------------ stage I
def _metadata(config: TrainConfig, cost: CostVector, alpha: float, epoch: int, step: int) -> dict[str, str]:
    return {
        "alpha": repr(float(alpha)),
        "epoch": str(epoch),
        "factor_source": cost.source.value,
        "lambda_l1": repr(float(config.lambda_l1)),
        "penal_enabled": str(int(config.penal.enabled)),
        "penal_strategy": config.penal.strategy.value,
        "regime": config.penal.regime.value,
        "seed": str(config.seed),
        "stage": "1",
        "step": str(step),
        "target_ratio": repr(float(config.penal.target_ratio)),
    }


def stage1_train(
    generator: NetworkGraph,
    discriminator: NetworkGraph,
    dataset: Sequence[PairedSample],
    config: TrainConfig,
    cost_vector: Optional[CostVector] = None,
    resume: Optional[Checkpoint] = None,
    checkpoint_path=None,
    metadata: Optional[dict[str, str]] = None,
    on_epoch: Optional[Callable[[int, TrainingLog], None]] = None,
) -> Stage1Result:
    """Alternate discriminator and generator updates under the penalized objective.

    The generator minimises ``gan_g + lambda_l1 * l1 + alpha * penal``. When
    ``penal.alpha`` is unset it is calibrated on the very first step so that
    ``alpha * penal / (lambda_l1 * l1)`` equals ``penal.target_ratio`` (scaled for the low
    regime), then frozen. ``resume`` continues a checkpoint written by this
    function with bit-identical results.
    """
    config.validate()
    if not dataset:
        raise ConfigurationError("stage I needs a non-empty dataset")
    input_size = dataset[0].mask.shape[-1]

    start_epoch = 0
    step = 0
    alpha: Optional[float] = None
    if resume is not None:
        generator = resume.graphs["generator"].copy()
        discriminator = resume.graphs["discriminator"].copy()
        g_state = copy.deepcopy(resume.optimizer_states["generator"])
        d_state = copy.deepcopy(resume.optimizer_states["discriminator"])
        start_epoch = int(resume.metadata.get("epoch", "0"))
        step = int(resume.metadata.get("step", "0"))
        if step:
            alpha = float(resume.metadata["alpha"])
        logger.info("resuming stage I at epoch %d step %d", start_epoch, step)
    else:
        generator = generator.copy()
        discriminator = discriminator.copy()
        g_state = AdamState.for_params(generator.parameters(), config.learning_rate)
        d_state = AdamState.for_params(discriminator.parameters(), config.learning_rate)

    penal = config.penal
    if cost_vector is None:
        cost_vector = build_cost_vector(generator, input_size, penal.layer_factor_source)
    if not penal.enabled:
        alpha = 0.0
    elif alpha is None and penal.alpha is not None:
        alpha = float(penal.alpha)

    log = TrainingLog(alpha=alpha or 0.0)
    g_params = generator.parameters()
    extra = dict(metadata or {})

    def snapshot(epoch: int) -> Checkpoint:
        meta = {**extra, **_metadata(config, cost_vector, alpha or 0.0, epoch, step)}
        return Checkpoint(
            graphs={"generator": generator, "discriminator": discriminator},
            optimizer_states={"generator": g_state, "discriminator": d_state},
            metadata=meta,
        )

    for epoch in range(start_epoch, config.epochs):
        epoch_records: list[LogRecord] = []
        for masks, images in iterate_batches(dataset, config.batch_size, config.seed, epoch):
            step += 1
            fake = forward(generator, masks)
            raise_on_non_finite([("generator_output", fake)], epoch + 1, step)
            gan_d = discriminator_step(
                discriminator, d_state, masks, images, fake, config.halve_discriminator, epoch + 1, step
            )

            d_fake = forward(discriminator, concat_channels(masks, fake))
            gan_g = generator_adversarial_loss(d_fake)
            l1 = l1_loss(fake, images)
            if penal.enabled:
                penal_term = total_penalty_tensor(generator, cost_vector, penal.strategy)
            else:
                penal_term = Tensor(total_penalty(generator, cost_vector, penal.strategy))
            raise_on_non_finite(
                [("gan_g", gan_g), ("l1", l1), ("penal", penal_term)], epoch + 1, step
            )
            if alpha is None:
                alpha = calibrate_alpha(
                    penal_term.item(), config.lambda_l1 * l1.item(), penal.target_ratio, penal.regime
                )
                log.alpha = alpha

            total = gan_g + l1 * config.lambda_l1
            if penal.enabled and alpha > 0:
                total = total + penal_term * alpha
            zero_grad(g_params)
            total.backward()
            adam_step(g_params, g_state)
            zero_grad(g_params)
            zero_grad(discriminator.parameters())

            loss = GanBatchLoss(
                gan_g=gan_g.item(),
                gan_d=gan_d,
                l1=l1.item(),
                penal=penal_term.item(),
                total_g=total.item(),
            )
            logger.debug("epoch %d step %d %s", epoch + 1, step, loss)
            record = LogRecord(epoch=epoch + 1, step=step, loss=loss)
            epoch_records.append(record)
            log.records.append(record)

        fraction = near_zero_fraction(generator, config.near_zero_threshold)
        epoch_records[-1].near_zero_fraction = fraction
        logger.info(
            "epoch %d/%d: gan_g=%.4f gan_d=%.4f l1=%.4f penal=%.4f near_zero=%.3f",
            epoch + 1,
            config.epochs,
            np.mean([r.loss.gan_g for r in epoch_records]),
            np.mean([r.loss.gan_d for r in epoch_records]),
            np.mean([r.loss.l1 for r in epoch_records]),
            np.mean([r.loss.penal for r in epoch_records]),
            fraction,
        )
        if on_epoch is not None:
            on_epoch(epoch + 1, log)
        if checkpoint_path is not None and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, snapshot(epoch + 1))

    final = snapshot(max(config.epochs, start_epoch))
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, final)
    return Stage1Result(checkpoint=final, log=log, alpha=alpha or 0.0)
