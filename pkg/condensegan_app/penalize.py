"""Sorted channel-weight penalization.

Channels of a layer are ranked by their L1 magnitude (largest first) and the
j-th ranked channel is charged ``f(j) * ||W_j||_1``; with a growing ``f`` the
tail of small channels pays the most and is driven to zero. Layer penalties
are combined with per-layer cost factors ``l(i)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .constants import DEFAULT_TARGET_RATIO, EXPONENTIAL_RATE, LOW_REG_SCALE
from .core.ops import weighted_channel_l1
from .core.tensor import Tensor
from .costmodel import CostVector, FactorSource
from .errors import CalibrationError, ConfigurationError, DomainError
from .netgraph import LayerSpec, NetworkGraph

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    UNIFORM = "uniform"
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class Regime(str, Enum):
    HIGH = "high"
    LOW = "low"


@dataclass
class ChannelImportance:
    layer_id: int
    gamma: np.ndarray
    order: np.ndarray


@dataclass
class PenalizationConfig:
    strategy: Strategy = Strategy.LINEAR
    regime: Regime = Regime.HIGH
    alpha: Optional[float] = None
    layer_factor_source: FactorSource = FactorSource.MAC
    target_ratio: float = DEFAULT_TARGET_RATIO
    enabled: bool = True

    def validate(self) -> None:
        if not 0.0 < self.target_ratio <= 1.0:
            raise ConfigurationError(
                f"penal.target_ratio must lie in (0, 1], got {self.target_ratio}"
            )
        if self.alpha is not None and self.alpha < 0:
            raise ConfigurationError(f"penal.alpha must be non-negative, got {self.alpha}")


def descending_order(gamma: np.ndarray) -> np.ndarray:
    """Indices sorting ``gamma`` largest first; ties broken by ascending index."""
    gamma = np.asarray(gamma)
    return np.lexsort((np.arange(gamma.size), -gamma))


def channel_gamma(spec: LayerSpec, weight: np.ndarray) -> np.ndarray:
    axes = tuple(a for a in range(weight.ndim) if a != spec.output_axis)
    return np.abs(weight).sum(axis=axes)


def channel_importance(graph: NetworkGraph, layer_id: int) -> ChannelImportance:
    spec = graph.layer(layer_id)
    gamma = channel_gamma(spec, graph.weights[layer_id].data).astype(np.float64)
    return ChannelImportance(layer_id=layer_id, gamma=gamma, order=descending_order(gamma))


def channel_weight_factor(strategy: Strategy, j: int) -> float:
    """f(j) for the 1-based sorted rank ``j``."""
    if j < 1:
        raise DomainError(f"channel rank must be >= 1, got {j}")
    strategy = Strategy(strategy)
    if strategy is Strategy.UNIFORM:
        return 1.0
    if strategy is Strategy.LINEAR:
        return float(j)
    return math.exp(EXPONENTIAL_RATE * j)


def rank_factors(strategy: Strategy, count: int) -> np.ndarray:
    return np.array([channel_weight_factor(strategy, j) for j in range(1, count + 1)])


def channel_coefficients(importance: ChannelImportance, strategy: Strategy) -> np.ndarray:
    """Per-channel multiplier: the channel at rank j (1-based) receives f(j)."""
    coefficients = np.empty(importance.gamma.size)
    coefficients[importance.order] = rank_factors(strategy, importance.gamma.size)
    return coefficients


def layer_penalty(importance: ChannelImportance, strategy: Strategy) -> float:
    """L_i = sum_j f(j) * gamma[order[j-1]]."""
    factors = rank_factors(strategy, importance.gamma.size)
    return float((factors * importance.gamma[importance.order]).sum())


def layer_penalty_tensor(graph: NetworkGraph, layer_id: int, strategy: Strategy) -> Tensor:
    """Differentiable L_i; the sort permutation is a constant of the current step."""
    spec = graph.layer(layer_id)
    weight = graph.weights[layer_id]
    gamma = channel_gamma(spec, weight.data)
    importance = ChannelImportance(layer_id, gamma, descending_order(gamma))
    coefficients = channel_coefficients(importance, strategy)
    return weighted_channel_l1(weight, coefficients, spec.output_axis, channel_sums=gamma)


def _check_factors(graph: NetworkGraph, factors: CostVector) -> list[int]:
    layer_ids = graph.penalized_layer_ids()
    if len(factors.layer_ids) != len(layer_ids) or set(factors.layer_ids) != set(layer_ids):
        raise ConfigurationError(
            f"cost vector covers {len(factors.layer_ids)} layers, graph penalizes {len(layer_ids)}",
            {"factors": len(factors.layer_ids), "layers": len(layer_ids)},
        )
    return layer_ids


def total_penalty(graph: NetworkGraph, factors: CostVector, strategy: Strategy) -> float:
    """L_PENAL = sum_i l(i) * L_i over the generator layers."""
    total = 0.0
    for layer_id in _check_factors(graph, factors):
        importance = channel_importance(graph, layer_id)
        total += factors.factor_for(layer_id) * layer_penalty(importance, strategy)
    return total


def total_penalty_tensor(graph: NetworkGraph, factors: CostVector, strategy: Strategy) -> Tensor:
    terms = [
        layer_penalty_tensor(graph, layer_id, strategy) * factors.factor_for(layer_id)
        for layer_id in _check_factors(graph, factors)
    ]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def calibrate_alpha(
    l_penal_first: float,
    l_l1_first: float,
    target_ratio: float = DEFAULT_TARGET_RATIO,
    regime: Regime = Regime.HIGH,
) -> float:
    """alpha such that alpha * L_PENAL / L_l1 = target_ratio on the first iteration.

    ``l_l1_first`` is the reconstruction term as it enters the generator
    objective, i.e. already multiplied by ``lambda_l1``.
    """
    if l_penal_first <= 0:
        raise CalibrationError(
            f"cannot calibrate alpha: first-iteration penalty is {l_penal_first}"
        )
    if l_l1_first <= 0:
        raise CalibrationError(f"cannot calibrate alpha: first-iteration l1 is {l_l1_first}")
    if not 0.0 < target_ratio <= 1.0:
        raise ConfigurationError(f"target_ratio must lie in (0, 1], got {target_ratio}")
    alpha = target_ratio * l_l1_first / l_penal_first
    if Regime(regime) is Regime.LOW:
        alpha *= LOW_REG_SCALE
    logger.info("calibrated alpha=%.6g (%s regime)", alpha, Regime(regime).value)
    return alpha
