"""Adam optimizer state and update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, DEFAULT_LEARNING_RATE
from ..errors import OptimizerStateError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moments plus the hyper-parameters of one optimizer."""

    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    learning_rate: float = DEFAULT_LEARNING_RATE

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate: float = DEFAULT_LEARNING_RATE) -> "AdamState":
        return cls(
            first_moment=[np.zeros(p.shape, dtype=p.dtype) for p in params],
            second_moment=[np.zeros(p.shape, dtype=p.dtype) for p in params],
            learning_rate=learning_rate,
        )

    def matches(self, params: Sequence[Tensor]) -> bool:
        if len(self.first_moment) != len(params) or len(self.second_moment) != len(params):
            return False
        return all(
            m.shape == p.shape and v.shape == p.shape
            for m, v, p in zip(self.first_moment, self.second_moment, params)
        )


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update; gradients are left for the caller to clear."""
    if not state.first_moment and not state.second_moment and params:
        state.first_moment = [np.zeros(p.shape, dtype=p.dtype) for p in params]
        state.second_moment = [np.zeros(p.shape, dtype=p.dtype) for p in params]
    if not state.matches(params):
        raise OptimizerStateError("optimizer moments do not match the parameter shapes")
    for index, param in enumerate(params):
        if param.grad is None:
            raise OptimizerStateError(f"parameter {index} has no gradient", {"param": index})

    state.step_count += 1
    step = state.step_count
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    for index, param in enumerate(params):
        grad = param.grad
        dtype = param.dtype
        m = (state.beta1 * state.first_moment[index] + (1.0 - state.beta1) * grad).astype(dtype)
        v = (state.beta2 * state.second_moment[index] + (1.0 - state.beta2) * grad * grad).astype(dtype)
        state.first_moment[index] = m
        state.second_moment[index] = v
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        # Assigned, not updated in place; recorded graphs still see the old values.
        param.data = (param.data - update).astype(dtype)


def zero_grad(params: Sequence[Tensor]) -> None:
    for param in params:
        param.zero_grad()
