"""Per-layer cost factors l(i): analytic MACs, measured latency, or uniform.

Latency profiling times each layer's forward pass in isolation. It must run on
a single thread with no other load from this process; the numbers are only
meaningful for the device executing the profile.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Protocol

import numpy as np

from .constants import MAX_BATCHED_INVOCATIONS, MIN_PROFILE_REPEATS, MIN_SAMPLE_SECONDS
from .core.tensor import Tensor, no_grad
from .errors import ConfigurationError
from .netgraph import NetworkGraph, count_macs, forward, layer_sizes, run_layer

logger = logging.getLogger(__name__)


class FactorSource(str, Enum):
    MAC = "mac"
    LATENCY = "latency"
    UNIFORM = "uniform"


@dataclass
class LayerLatency:
    mean_ms: float
    std_ms: float
    median_ms: float


@dataclass
class DeviceProfile:
    per_layer_latency: list[LayerLatency]
    repeats: int
    warmup: int


@dataclass
class CostVector:
    layer_ids: list[int]
    factors: np.ndarray
    source: FactorSource
    normalization: str = "mean_one"
    profile: Optional[DeviceProfile] = None

    def factor_for(self, layer_id: int) -> float:
        return float(self.factors[self.layer_ids.index(layer_id)])


class LayerClock(Protocol):
    """Times one invocation of ``fn`` for layer ``layer_id``; returns seconds."""

    def time_call(self, layer_id: int, fn: Callable[[], object]) -> float: ...


class PerfCounterClock:
    """Wall-clock timer; batches invocations when one call is below the timer's resolution."""

    def __init__(self, min_sample_seconds: float = MIN_SAMPLE_SECONDS) -> None:
        resolution = time.get_clock_info("perf_counter").resolution
        self.min_sample_seconds = max(min_sample_seconds, 100 * resolution)
        self._invocations: dict[int, int] = {}

    def time_call(self, layer_id: int, fn: Callable[[], object]) -> float:
        count = self._invocations.get(layer_id)
        if count is None:
            start = time.perf_counter()
            fn()
            elapsed = time.perf_counter() - start
            count = 1
            if elapsed < self.min_sample_seconds:
                count = min(
                    MAX_BATCHED_INVOCATIONS,
                    math.ceil(self.min_sample_seconds / max(elapsed, 1e-9)),
                )
                logger.warning(
                    "layer %d runs in %.3g s, below timer resolution; batching %d calls per sample",
                    layer_id,
                    elapsed,
                    count,
                )
            self._invocations[layer_id] = count
        start = time.perf_counter()
        for _ in range(count):
            fn()
        return (time.perf_counter() - start) / count


def normalize_mean_one(costs: np.ndarray) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0 or (costs <= 0).any():
        raise ConfigurationError("cost factors must be positive to normalise")
    return costs / costs.mean()


def uniform_factors(graph: NetworkGraph) -> CostVector:
    ids = graph.penalized_layer_ids()
    return CostVector(layer_ids=ids, factors=np.ones(len(ids)), source=FactorSource.UNIFORM)


def mac_factors(graph: NetworkGraph, input_size: int) -> CostVector:
    report = count_macs(graph, input_size)
    return CostVector(
        layer_ids=list(report.layer_ids),
        factors=normalize_mean_one(np.array(report.per_layer_macs, dtype=np.float64)),
        source=FactorSource.MAC,
    )


def _validate_profile_args(repeats: int, warmup: int) -> None:
    if repeats < MIN_PROFILE_REPEATS:
        raise ConfigurationError(
            f"latency profiling needs repeats >= {MIN_PROFILE_REPEATS}, got {repeats}",
            {"repeats": repeats},
        )
    if warmup < 1:
        raise ConfigurationError(f"latency profiling needs warmup >= 1, got {warmup}")


def latency_factors(
    graph: NetworkGraph,
    input_size: int,
    repeats: int = 5,
    warmup: int = 1,
    clock: Optional[LayerClock] = None,
    batch_size: int = 1,
    seed: int = 0,
) -> CostVector:
    """Benchmark every layer's forward pass on representative inputs; median / mean of medians."""
    _validate_profile_args(repeats, warmup)
    clock = clock or PerfCounterClock()
    sizes = layer_sizes(graph, input_size)
    rng = np.random.default_rng(seed)
    ids: list[int] = []
    latencies: list[LayerLatency] = []
    for spec in graph.topological_order():
        size_in = sizes[spec.id][0]
        x = Tensor(rng.standard_normal((batch_size, spec.in_ch, size_in, size_in)))
        weight = graph.weights[spec.id]

        def call(spec=spec, x=x, weight=weight) -> Tensor:
            with no_grad():
                return run_layer(spec, x, weight)

        for _ in range(warmup):
            call()
        samples = np.array(
            [clock.time_call(spec.id, call) for _ in range(repeats)], dtype=np.float64
        )
        ids.append(spec.id)
        latencies.append(
            LayerLatency(
                mean_ms=float(samples.mean() * 1e3),
                std_ms=float(samples.std() * 1e3),
                median_ms=float(np.median(samples) * 1e3),
            )
        )
    medians = np.array([lat.median_ms for lat in latencies])
    return CostVector(
        layer_ids=ids,
        factors=normalize_mean_one(medians),
        source=FactorSource.LATENCY,
        profile=DeviceProfile(per_layer_latency=latencies, repeats=repeats, warmup=warmup),
    )


def build_cost_vector(
    graph: NetworkGraph,
    input_size: int,
    source: FactorSource,
    repeats: int = 5,
    warmup: int = 1,
    clock: Optional[LayerClock] = None,
) -> CostVector:
    source = FactorSource(source)
    if source is FactorSource.MAC:
        return mac_factors(graph, input_size)
    if source is FactorSource.LATENCY:
        return latency_factors(graph, input_size, repeats, warmup, clock)
    return uniform_factors(graph)


def forward_latency(
    graph: NetworkGraph,
    input_size: int,
    repeats: int = 5,
    warmup: int = 1,
    clock: Optional[LayerClock] = None,
    seed: int = 0,
) -> float:
    """Median whole-graph forward latency in milliseconds."""
    _validate_profile_args(repeats, warmup)
    clock = clock or PerfCounterClock()
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, graph.input_channels, input_size, input_size)))

    def call() -> Tensor:
        return forward(graph, x, record_gradients=False)

    for _ in range(warmup):
        call()
    samples = [clock.time_call(-1, call) for _ in range(repeats)]
    return float(np.median(samples) * 1e3)


def cost_rows(cost: CostVector, graph: NetworkGraph, input_size: int) -> list[dict[str, object]]:
    """CSV rows: layer id, macs, params, latency mean/std (latency source only), factor."""
    report = count_macs(graph, input_size)
    macs = dict(zip(report.layer_ids, report.per_layer_macs))
    params = dict(zip(report.layer_ids, report.per_layer_params))
    rows = []
    for index, layer_id in enumerate(cost.layer_ids):
        latency = cost.profile.per_layer_latency[index] if cost.profile else None
        rows.append(
            {
                "layer_id": layer_id,
                "macs": macs[layer_id],
                "params": params[layer_id],
                "latency_mean_ms": latency.mean_ms if latency else None,
                "latency_std_ms": latency.std_ms if latency else None,
                "factor": float(cost.factors[index]),
            }
        )
    return rows
