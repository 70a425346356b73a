"""Hinge detection on sorted channel magnitudes and channel-removal graph surgery.

After condensing, each layer's descending magnitude curve drops sharply
between the channels that carry the signal and the near-zero tail. The drop
(the hinge) decides how many channels a layer keeps; surgery then removes
the pruned channels together with every input slice that read them, through
plain successors and skip connections alike.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .constants import DEFAULT_HINGE_FLOOR, DEFAULT_MIN_DROP_RATIO, NETWORK_INPUT
from .core.tensor import Tensor
from .errors import ConfigurationError, PlanError, StructuralError
from .netgraph import LayerKind, NetworkGraph, replace_channels
from .penalize import channel_importance

logger = logging.getLogger(__name__)


class HingeMethod(str, Enum):
    MAX_RATIO_DROP = "max_ratio_drop"
    MANUAL = "manual"


@dataclass
class MagnitudeCurve:
    layer_id: int
    sorted_gamma: np.ndarray
    channel_ids: np.ndarray

    @property
    def out_ch(self) -> int:
        return int(self.sorted_gamma.size)


@dataclass
class HingeReport:
    layer_id: int
    out_ch: int
    keep_count: int
    method: HingeMethod
    drop_ratio: Optional[float] = None

    @property
    def pruned(self) -> bool:
        return self.keep_count < self.out_ch


@dataclass
class PruningPlan:
    """Kept output channels per layer and the input slices they induce downstream.

    Keep-sets hold original channel ids in ascending order; ``input_keep``
    indexes the concatenated input of each layer.
    """

    output_keep: dict[int, np.ndarray]
    input_keep: dict[int, np.ndarray]

    def is_identity(self, graph: NetworkGraph) -> bool:
        return all(
            self.output_keep[spec.id].size == spec.out_ch for spec in graph.layers
        )


# ------------------------------------------------------------------- curves
def magnitude_curve(graph: NetworkGraph, layer_id: int) -> MagnitudeCurve:
    importance = channel_importance(graph, layer_id)
    return MagnitudeCurve(
        layer_id=layer_id,
        sorted_gamma=importance.gamma[importance.order],
        channel_ids=importance.order,
    )


def _drop_ratios(sorted_gamma: np.ndarray, floor: float) -> np.ndarray:
    """ratio[p - 1] = sorted_gamma[p - 1] / max(sorted_gamma[p], floor) for p = 1 .. n-1."""
    return sorted_gamma[:-1] / np.maximum(sorted_gamma[1:], floor)


def detect_hinge(
    curve: MagnitudeCurve,
    min_drop_ratio: float = DEFAULT_MIN_DROP_RATIO,
    floor: float = DEFAULT_HINGE_FLOOR,
) -> HingeReport:
    """Keep everything up to the largest adjacent drop, if that drop is at least ``min_drop_ratio``."""
    if min_drop_ratio <= 1.0:
        raise ConfigurationError(f"min_drop_ratio must exceed 1, got {min_drop_ratio}")
    if floor < 0:
        raise ConfigurationError(f"hinge floor must be non-negative, got {floor}")
    n = curve.out_ch
    report = HingeReport(curve.layer_id, n, n, HingeMethod.MAX_RATIO_DROP)
    if n < 2:
        return report
    ratios = _drop_ratios(curve.sorted_gamma, floor)
    qualifying = np.where(ratios >= min_drop_ratio, ratios, -np.inf)
    best = int(np.argmax(qualifying))
    if np.isfinite(qualifying[best]):
        report.keep_count = best + 1
        report.drop_ratio = float(ratios[best])
    return report


def manual_hinge(curve: MagnitudeCurve, keep_count: int, floor: float = DEFAULT_HINGE_FLOOR) -> HingeReport:
    n = curve.out_ch
    if not 1 <= keep_count <= n:
        raise PlanError(
            f"layer {curve.layer_id}: manual keep {keep_count} outside [1, {n}]",
            {"layer": curve.layer_id},
        )
    drop_ratio = None
    if keep_count < n:
        drop_ratio = float(_drop_ratios(curve.sorted_gamma, floor)[keep_count - 1])
    return HingeReport(curve.layer_id, n, keep_count, HingeMethod.MANUAL, drop_ratio)


def detect_hinges(
    graph: NetworkGraph,
    min_drop_ratio: float = DEFAULT_MIN_DROP_RATIO,
    floor: float = DEFAULT_HINGE_FLOOR,
    manual: Optional[Mapping[int, int]] = None,
) -> tuple[list[MagnitudeCurve], list[HingeReport]]:
    """Curves and hinge reports for every prunable layer; manual keeps override detection."""
    manual = dict(manual or {})
    prunable = graph.prunable_layer_ids()
    unknown = sorted(set(manual) - set(prunable))
    if unknown:
        raise ConfigurationError(
            f"manual keep names non-prunable layer(s) {unknown}", {"layer": unknown[0]}
        )
    curves: list[MagnitudeCurve] = []
    reports: list[HingeReport] = []
    for layer_id in prunable:
        curve = magnitude_curve(graph, layer_id)
        if layer_id in manual:
            report = manual_hinge(curve, manual[layer_id], floor)
        else:
            report = detect_hinge(curve, min_drop_ratio, floor)
        logger.info(
            "layer %d: keep %d/%d (%s)", layer_id, report.keep_count, report.out_ch, report.method.value
        )
        curves.append(curve)
        reports.append(report)
    if not any(r.pruned for r in reports):
        logger.warning("no hinge found in any layer; the pruned model equals the input model")
    return curves, reports


# -------------------------------------------------------------------- plans
def _input_keep_for(graph: NetworkGraph, sources: Sequence[int], output_keep: Mapping[int, np.ndarray]) -> np.ndarray:
    pieces = []
    offset = 0
    for source in sources:
        if source == NETWORK_INPUT:
            keep = np.arange(graph.input_channels)
        else:
            keep = output_keep[source]
        pieces.append(keep + offset)
        offset += graph.source_channels(source)
    return np.concatenate(pieces).astype(np.int64)


def identity_plan(graph: NetworkGraph) -> PruningPlan:
    output_keep = {spec.id: np.arange(spec.out_ch) for spec in graph.layers}
    input_keep = {
        spec.id: _input_keep_for(graph, spec.input_sources, output_keep) for spec in graph.layers
    }
    return PruningPlan(output_keep=output_keep, input_keep=input_keep)


def build_pruning_plan(graph: NetworkGraph, hinges: Sequence[HingeReport]) -> PruningPlan:
    """Top ``keep_count`` channels by magnitude per layer, propagated to every consumer."""
    output_id = graph.output_layer().id
    prunable = set(graph.prunable_layer_ids())
    output_keep = {spec.id: np.arange(spec.out_ch) for spec in graph.layers}
    for hinge in hinges:
        if hinge.layer_id == output_id:
            raise PlanError("the image output layer is never pruned", {"layer": output_id})
        if hinge.layer_id not in prunable:
            raise PlanError(f"no prunable layer {hinge.layer_id}", {"layer": hinge.layer_id})
        curve = magnitude_curve(graph, hinge.layer_id)
        if not 1 <= hinge.keep_count <= curve.out_ch:
            raise PlanError(
                f"layer {hinge.layer_id}: keep_count {hinge.keep_count} would leave its consumers "
                f"without input (out_ch {curve.out_ch})",
                {"layer": hinge.layer_id},
            )
        output_keep[hinge.layer_id] = np.sort(curve.channel_ids[: hinge.keep_count])
    input_keep = {
        spec.id: _input_keep_for(graph, spec.input_sources, output_keep) for spec in graph.layers
    }
    plan = PruningPlan(output_keep=output_keep, input_keep=input_keep)
    validate_plan(graph, plan)
    return plan


def validate_plan(graph: NetworkGraph, plan: PruningPlan) -> None:
    """Raise :class:`StructuralError` naming the first edge whose slices disagree."""
    for spec in graph.topological_order():
        keep = plan.output_keep.get(spec.id)
        if keep is None:
            raise StructuralError(f"plan has no keep-set for layer {spec.id}", {"layer": spec.id})
        keep = np.asarray(keep)
        if keep.size == 0 or keep.min() < 0 or keep.max() >= spec.out_ch:
            raise StructuralError(f"layer {spec.id}: keep-set out of range", {"layer": spec.id})
        if np.any(np.diff(keep) <= 0):
            raise StructuralError(
                f"layer {spec.id}: keep-set must be strictly ascending", {"layer": spec.id}
            )
    output_id = graph.output_layer().id
    if plan.output_keep[output_id].size != graph.layer(output_id).out_ch:
        raise StructuralError("the image output layer must keep all channels", {"layer": output_id})

    for spec in graph.topological_order():
        actual = plan.input_keep.get(spec.id)
        if actual is None:
            raise StructuralError(f"plan has no input slice for layer {spec.id}", {"layer": spec.id})
        actual = np.asarray(actual)
        offset = 0
        cursor = 0
        for source in spec.input_sources:
            width = graph.source_channels(source)
            if source == NETWORK_INPUT:
                expected = np.arange(width)
            else:
                expected = np.asarray(plan.output_keep[source])
            segment = actual[cursor : cursor + expected.size] - offset
            if segment.size != expected.size or not np.array_equal(segment, expected):
                edge = f"{'input' if source == NETWORK_INPUT else source}->{spec.id}"
                raise StructuralError(
                    f"edge {edge}: consumer input slice disagrees with producer keep-set",
                    {"edge": edge},
                )
            cursor += expected.size
            offset += width
        if cursor != actual.size:
            raise StructuralError(
                f"layer {spec.id}: input slice has {actual.size} entries, producers keep {cursor}",
                {"layer": spec.id},
            )


# ------------------------------------------------------------------ surgery
def _slice_weight(kind: LayerKind, data: np.ndarray, in_keep: np.ndarray, out_keep: np.ndarray) -> np.ndarray:
    if kind is LayerKind.CONV:
        return data[np.ix_(out_keep, in_keep)]
    return data[np.ix_(in_keep, out_keep)]


def apply_pruning(graph: NetworkGraph, plan: PruningPlan) -> NetworkGraph:
    """Return a smaller graph whose weights are the kept slices, channel order preserved."""
    validate_plan(graph, plan)
    layers = []
    weights: dict[int, Tensor] = {}
    for spec in graph.layers:
        out_keep = np.asarray(plan.output_keep[spec.id])
        in_keep = np.asarray(plan.input_keep[spec.id])
        layers.append(replace_channels(spec, int(in_keep.size), int(out_keep.size)))
        original = graph.weights[spec.id]
        weights[spec.id] = Tensor(
            _slice_weight(spec.kind, original.data, in_keep, out_keep),
            requires_grad=True,
            dtype=original.dtype,
        )
    pruned = NetworkGraph(
        layers=layers,
        weights=weights,
        input_channels=graph.input_channels,
        skip_edges=list(graph.skip_edges),
        name=graph.name,
    )
    before, after = graph.param_count(), pruned.param_count()
    logger.info("pruned %s: params %d -> %d", graph.name, before, after)
    return pruned


def mask_graph(graph: NetworkGraph, plan: PruningPlan) -> NetworkGraph:
    """Copy of ``graph`` with pruned channels and the input slices reading them zeroed."""
    validate_plan(graph, plan)
    masked = graph.copy()
    for spec in graph.layers:
        data = masked.weights[spec.id].data
        out_mask = np.ones(spec.out_ch, dtype=bool)
        out_mask[np.asarray(plan.output_keep[spec.id])] = False
        in_mask = np.ones(spec.in_ch, dtype=bool)
        in_mask[np.asarray(plan.input_keep[spec.id])] = False
        index_out = [slice(None)] * data.ndim
        index_out[spec.output_axis] = out_mask
        data[tuple(index_out)] = 0
        index_in = [slice(None)] * data.ndim
        index_in[spec.input_axis] = in_mask
        data[tuple(index_in)] = 0
    return masked


# ------------------------------------------------------------------ reports
def curve_rows(curves: Sequence[MagnitudeCurve], hinges: Sequence[HingeReport]) -> list[dict[str, object]]:
    keep_counts = {h.layer_id: h.keep_count for h in hinges}
    rows = []
    for curve in curves:
        keep_count = keep_counts.get(curve.layer_id, curve.out_ch)
        for rank, (channel, gamma) in enumerate(zip(curve.channel_ids, curve.sorted_gamma), start=1):
            rows.append(
                {
                    "layer_id": curve.layer_id,
                    "rank": rank,
                    "channel_id": int(channel),
                    "gamma": float(gamma),
                    "keep": int(rank <= keep_count),
                }
            )
    return rows


def hinge_rows(hinges: Sequence[HingeReport]) -> list[dict[str, object]]:
    return [
        {
            "layer_id": h.layer_id,
            "out_ch": h.out_ch,
            "keep_count": h.keep_count,
            "method": h.method.value,
            "drop_ratio": h.drop_ratio,
        }
        for h in hinges
    ]
