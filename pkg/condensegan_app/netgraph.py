"""Declarative network graphs: U-net and PatchGAN builders, execution and MAC accounting.

A :class:`NetworkGraph` is the single source of truth for channel
connectivity. Every layer names the producers whose channel-concatenation
feeds it, so skip connections and plain successors go through one mechanism.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .constants import (
    IMAGE_CHANNELS,
    INIT_STD,
    LEAKY_SLOPE,
    NETWORK_INPUT,
    PATCHGAN_KERNELS,
    PATCHGAN_PADDINGS,
    PATCHGAN_STRIDES,
    UNET_KERNEL,
)
from .core.ops import (
    Activation,
    activation,
    concat_channels,
    conv2d,
    conv_output_size,
    conv_transpose2d,
    conv_transpose_output_size,
    instance_norm,
)
from .core.tensor import Tensor, no_grad
from .errors import (
    ConfigurationError,
    DimensionError,
    StructuralError,
    UnsupportedTopologyError,
)

logger = logging.getLogger(__name__)


class LayerKind(str, Enum):
    CONV = "conv"
    CONV_TRANSPOSE = "conv_transpose"


@dataclass(frozen=True)
class LayerSpec:
    """One convolution (or transposed convolution) plus its activation."""

    id: int
    kind: LayerKind
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    activation: Optional[Activation] = None
    input_sources: tuple[int, ...] = (NETWORK_INPUT,)
    leaky_slope: float = LEAKY_SLOPE
    instance_norm: bool = False

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.kind is LayerKind.CONV:
            return (self.out_ch, self.in_ch, self.kernel, self.kernel)
        return (self.in_ch, self.out_ch, self.kernel, self.kernel)

    @property
    def output_axis(self) -> int:
        """Weight axis that indexes output channels."""
        return 0 if self.kind is LayerKind.CONV else 1

    @property
    def input_axis(self) -> int:
        return 1 if self.kind is LayerKind.CONV else 0

    def output_size(self, size: int) -> int:
        if self.kind is LayerKind.CONV:
            return conv_output_size(size, self.kernel, self.stride, self.padding)
        return conv_transpose_output_size(size, self.kernel, self.stride, self.padding)


@dataclass
class MacReport:
    layer_ids: list[int]
    per_layer_macs: list[int]
    per_layer_params: list[int]
    per_layer_activations: list[int]
    total_macs: int
    total_params: int
    activation_bytes: int


@dataclass
class NetworkGraph:
    """Layer specs, one weight tensor per layer, and explicit skip edges."""

    layers: list[LayerSpec]
    weights: dict[int, Tensor]
    input_channels: int
    skip_edges: list[tuple[int, int]] = field(default_factory=list)
    name: str = "generator"

    def __post_init__(self) -> None:
        self.validate()

    # --------------------------------------------------------------- queries
    def layer(self, layer_id: int) -> LayerSpec:
        for spec in self.layers:
            if spec.id == layer_id:
                return spec
        raise StructuralError(f"graph '{self.name}' has no layer {layer_id}", {"layer": layer_id})

    def source_channels(self, source: int) -> int:
        if source == NETWORK_INPUT:
            return self.input_channels
        return self.layer(source).out_ch

    def topological_order(self) -> list[LayerSpec]:
        """Kahn's algorithm; ready layers are taken in ascending id order."""
        by_id = {spec.id: spec for spec in self.layers}
        remaining = {
            spec.id: {s for s in spec.input_sources if s != NETWORK_INPUT} for spec in self.layers
        }
        order: list[LayerSpec] = []
        while remaining:
            ready = sorted(i for i, deps in remaining.items() if not deps)
            if not ready:
                raise StructuralError(f"graph '{self.name}' contains a cycle")
            current = ready[0]
            order.append(by_id[current])
            del remaining[current]
            for deps in remaining.values():
                deps.discard(current)
        return order

    def consumers(self, layer_id: int) -> list[LayerSpec]:
        return [spec for spec in self.topological_order() if layer_id in spec.input_sources]

    def output_layer(self) -> LayerSpec:
        consumed = {s for spec in self.layers for s in spec.input_sources}
        sinks = [spec for spec in self.topological_order() if spec.id not in consumed]
        if len(sinks) != 1:
            raise UnsupportedTopologyError(
                f"graph '{self.name}' must have exactly one output layer, found {len(sinks)}"
            )
        return sinks[0]

    def parameters(self) -> list[Tensor]:
        return [self.weights[spec.id] for spec in self.topological_order()]

    def penalized_layer_ids(self) -> list[int]:
        return [spec.id for spec in self.topological_order()]

    def prunable_layer_ids(self) -> list[int]:
        output_id = self.output_layer().id
        return [spec.id for spec in self.topological_order() if spec.id != output_id]

    def param_count(self) -> int:
        return sum(int(np.prod(spec.weight_shape)) for spec in self.layers)

    def copy(self) -> "NetworkGraph":
        weights = {
            layer_id: Tensor(t.data, requires_grad=t.requires_grad, dtype=t.dtype)
            for layer_id, t in self.weights.items()
        }
        return NetworkGraph(
            layers=list(self.layers),
            weights=weights,
            input_channels=self.input_channels,
            skip_edges=list(self.skip_edges),
            name=self.name,
        )

    def same_topology(self, other: "NetworkGraph") -> bool:
        """True when both graphs differ at most in channel counts and weights."""

        def signature(graph: NetworkGraph) -> list[tuple]:
            return [
                (s.id, s.kind, s.kernel, s.stride, s.padding, s.activation, s.input_sources,
                 s.leaky_slope, s.instance_norm)
                for s in graph.topological_order()
            ]

        return (
            signature(self) == signature(other)
            and sorted(self.skip_edges) == sorted(other.skip_edges)
            and self.input_channels == other.input_channels
            and self.output_layer().out_ch == other.output_layer().out_ch
        )

    # ------------------------------------------------------------ validation
    def validate(self) -> None:
        if self.input_channels < 1:
            raise StructuralError("input_channels must be positive")
        ids = [spec.id for spec in self.layers]
        if len(set(ids)) != len(ids):
            raise StructuralError(f"graph '{self.name}' has duplicate layer ids")
        known = set(ids)
        for spec in self.layers:
            if spec.id < 0:
                raise StructuralError(f"layer id {spec.id} must be non-negative")
            if spec.kernel < 1 or spec.stride < 1 or spec.padding < 0:
                raise StructuralError(f"layer {spec.id}: invalid kernel/stride/padding")
            if spec.in_ch < 1 or spec.out_ch < 1:
                raise StructuralError(f"layer {spec.id}: channel counts must be positive")
            if not spec.input_sources:
                raise StructuralError(f"layer {spec.id} has no input sources")
            for source in spec.input_sources:
                if source != NETWORK_INPUT and source not in known:
                    raise StructuralError(
                        f"layer {spec.id} reads from unknown layer {source}",
                        {"edge": f"{source}->{spec.id}"},
                    )
        for spec in self.layers:
            expected = sum(self.source_channels(s) for s in spec.input_sources)
            if spec.in_ch != expected:
                raise StructuralError(
                    f"layer {spec.id}: in_ch={spec.in_ch} but its sources provide {expected}",
                    {"layer": spec.id},
                )
            weight = self.weights.get(spec.id)
            if weight is None or weight.shape != spec.weight_shape:
                got = None if weight is None else weight.shape
                raise StructuralError(
                    f"layer {spec.id}: weight shape {got} does not match {spec.weight_shape}",
                    {"layer": spec.id},
                )
        position = {spec.id: index for index, spec in enumerate(self.topological_order())}
        for producer, consumer in self.skip_edges:
            if producer not in position or consumer not in position:
                raise StructuralError(f"skip edge {producer}->{consumer} names an unknown layer")
            if producer not in self.layer(consumer).input_sources:
                raise StructuralError(
                    f"skip edge {producer}->{consumer} is not an input of layer {consumer}",
                    {"edge": f"{producer}->{consumer}"},
                )
            if position[producer] >= position[consumer]:
                raise StructuralError(f"skip edge {producer}->{consumer} points backwards")


# -------------------------------------------------------------------- builders
def encoder_schedule(base_channels: int, depth: int, cap: int) -> list[int]:
    """Channel count per encoder level: doubled per strided conv, capped."""
    return [min(base_channels * 2**level, cap) for level in range(depth)]


def unet_name(base_channels: int) -> str:
    return f"Unet-{base_channels}"


def _init_weights(layers: list[LayerSpec], seed: int) -> dict[int, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        spec.id: Tensor(rng.normal(0.0, INIT_STD, spec.weight_shape), requires_grad=True)
        for spec in sorted(layers, key=lambda s: s.id)
    }


def build_unet(
    base_channels: int,
    depth: int,
    cap: int,
    input_size: int,
    input_channels: int = IMAGE_CHANNELS,
    output_channels: int = IMAGE_CHANNELS,
    use_instance_norm: bool = False,
    seed: int = 0,
) -> NetworkGraph:
    """U-net generator: ``depth`` stride-2 convs, a mirrored transposed-conv decoder, skips.

    Encoder layers get ids ``0 .. depth-1``; decoder layers ``depth .. 2*depth-1``
    from the innermost level outwards, the last one mapping to the image.
    """
    if min(base_channels, depth, cap, input_size, input_channels, output_channels) < 1:
        raise ConfigurationError("U-net parameters must be positive")
    if base_channels > cap:
        raise ConfigurationError(f"base_channels={base_channels} exceeds cap={cap}")
    if input_size % 2**depth:
        raise ConfigurationError(
            f"input_size={input_size} is not divisible by 2^{depth}",
            {"input_size": input_size, "depth": depth},
        )

    schedule = encoder_schedule(base_channels, depth, cap)
    layers: list[LayerSpec] = []
    skip_edges: list[tuple[int, int]] = []
    for level, channels in enumerate(schedule):
        layers.append(
            LayerSpec(
                id=level,
                kind=LayerKind.CONV,
                in_ch=input_channels if level == 0 else schedule[level - 1],
                out_ch=channels,
                kernel=UNET_KERNEL,
                stride=2,
                padding=1,
                activation=Activation.LEAKY_RELU,
                input_sources=(NETWORK_INPUT if level == 0 else level - 1,),
                instance_norm=use_instance_norm and level > 0,
            )
        )

    previous = depth - 1
    for level in reversed(range(depth)):
        layer_id = depth + (depth - 1 - level)
        outermost = level == 0
        if level == depth - 1:
            sources: tuple[int, ...] = (level,)
        else:
            sources = (previous, level)
            skip_edges.append((level, layer_id))
        in_ch = sum(schedule[s] if s < depth else schedule[level] for s in sources)
        layers.append(
            LayerSpec(
                id=layer_id,
                kind=LayerKind.CONV_TRANSPOSE,
                in_ch=in_ch,
                out_ch=output_channels if outermost else schedule[level - 1],
                kernel=UNET_KERNEL,
                stride=2,
                padding=1,
                activation=Activation.TANH if outermost else Activation.RELU,
                input_sources=sources,
                instance_norm=use_instance_norm and not outermost,
            )
        )
        previous = layer_id

    graph = NetworkGraph(
        layers=layers,
        weights=_init_weights(layers, seed),
        input_channels=input_channels,
        skip_edges=skip_edges,
        name="generator",
    )
    logger.debug("built %s depth=%d schedule=%s", unet_name(base_channels), depth, schedule)
    return graph


def build_patchgan(input_channels: int, base_channels: int = 64, seed: int = 0) -> NetworkGraph:
    """PatchGAN discriminator with a 70x70 receptive field and a 1-channel score map."""
    if input_channels < 1 or base_channels < 1:
        raise ConfigurationError("PatchGAN channels must be positive")
    cap = base_channels * 8
    widths = [min(base_channels * 2**i, cap) for i in range(len(PATCHGAN_KERNELS) - 1)] + [1]
    layers: list[LayerSpec] = []
    in_ch = input_channels
    last = len(widths) - 1
    for index, (out_ch, kernel, stride, padding) in enumerate(
        zip(widths, PATCHGAN_KERNELS, PATCHGAN_STRIDES, PATCHGAN_PADDINGS)
    ):
        layers.append(
            LayerSpec(
                id=index,
                kind=LayerKind.CONV,
                in_ch=in_ch,
                out_ch=out_ch,
                kernel=kernel,
                stride=stride,
                padding=padding,
                activation=Activation.SIGMOID if index == last else Activation.LEAKY_RELU,
                input_sources=(NETWORK_INPUT if index == 0 else index - 1,),
            )
        )
        in_ch = out_ch
    return NetworkGraph(
        layers=layers,
        weights=_init_weights(layers, seed),
        input_channels=input_channels,
        name="discriminator",
    )


# ------------------------------------------------------------------- analysis
def receptive_field(graph: NetworkGraph) -> int:
    """Receptive field of a purely sequential conv stack."""
    field_size, jump = 1, 1
    previous = NETWORK_INPUT
    for spec in graph.topological_order():
        if spec.kind is not LayerKind.CONV or spec.input_sources != (previous,):
            raise UnsupportedTopologyError(
                f"receptive_field needs a sequential conv stack; layer {spec.id} breaks it"
            )
        field_size += (spec.kernel - 1) * jump
        jump *= spec.stride
        previous = spec.id
    return field_size


def layer_sizes(graph: NetworkGraph, input_size: int) -> dict[int, tuple[int, int]]:
    """Map layer id -> (input spatial size, output spatial size) for a square input."""
    sizes: dict[int, int] = {NETWORK_INPUT: input_size}
    result: dict[int, tuple[int, int]] = {}
    for spec in graph.topological_order():
        incoming = {sizes[s] for s in spec.input_sources}
        if len(incoming) != 1:
            raise DimensionError(
                f"layer {spec.id}: sources disagree on spatial size {sorted(incoming)}",
                {"layer": spec.id},
            )
        size_in = incoming.pop()
        size_out = spec.output_size(size_in)
        if size_out < 1:
            raise ConfigurationError(
                f"layer {spec.id}: output size {size_out} for input {size_in}",
                {"layer": spec.id},
            )
        sizes[spec.id] = size_out
        result[spec.id] = (size_in, size_out)
    return result


def count_macs(graph: NetworkGraph, input_size: int) -> MacReport:
    """Per-layer MACs, parameters and activation elements for one sample."""
    sizes = layer_sizes(graph, input_size)
    ids: list[int] = []
    macs: list[int] = []
    params: list[int] = []
    activations: list[int] = []
    for spec in graph.topological_order():
        size_in, size_out = sizes[spec.id]
        per_position = spec.kernel * spec.kernel * spec.in_ch * spec.out_ch
        positions = size_out * size_out if spec.kind is LayerKind.CONV else size_in * size_in
        ids.append(spec.id)
        macs.append(positions * per_position)
        params.append(per_position)
        activations.append(size_out * size_out * spec.out_ch)
    return MacReport(
        layer_ids=ids,
        per_layer_macs=macs,
        per_layer_params=params,
        per_layer_activations=activations,
        total_macs=sum(macs),
        total_params=sum(params),
        activation_bytes=4 * sum(activations),
    )


# ------------------------------------------------------------------ execution
def run_layer(spec: LayerSpec, x: Tensor, weight: Tensor) -> Tensor:
    """Convolution, optional instance norm, then the activation of one layer."""
    if spec.kind is LayerKind.CONV:
        h = conv2d(x, weight, spec.stride, spec.padding)
    else:
        h = conv_transpose2d(x, weight, spec.stride, spec.padding)
    if spec.instance_norm:
        h = instance_norm(h)
    if spec.activation is not None:
        h = activation(h, spec.activation, spec.leaky_slope)
    return h


def forward(graph: NetworkGraph, x: Tensor, record_gradients: bool = True) -> Tensor:
    """Execute the graph in topological order and return the output layer's result."""
    if x.ndim != 4 or x.shape[1] != graph.input_channels:
        raise DimensionError(
            f"graph '{graph.name}' expects (N, {graph.input_channels}, H, W) input, got {x.shape}",
            {"layer": "input"},
        )
    context = contextlib.nullcontext() if record_gradients else no_grad()
    with context:
        outputs: dict[int, Tensor] = {NETWORK_INPUT: x}
        for spec in graph.topological_order():
            try:
                h = concat_channels(*(outputs[s] for s in spec.input_sources))
                outputs[spec.id] = run_layer(spec, h, graph.weights[spec.id])
            except (DimensionError, ConfigurationError) as exc:
                raise DimensionError(
                    f"layer {spec.id}: {exc.message}", {"layer": spec.id}
                ) from exc
        return outputs[graph.output_layer().id]


def replace_channels(spec: LayerSpec, in_ch: int, out_ch: int) -> LayerSpec:
    return replace(spec, in_ch=in_ch, out_ch=out_ch)
