"""Synthetic paired data, the binary checkpoint codec and CSV reports.

Checkpoint layout (all integers little-endian, ``str`` = u32 length + UTF-8)::

    magic            8 bytes  b"CNDSGAN\\0"
    format_version   u32
    metadata         u32 count, (str key, str value) pairs sorted by key
    graphs           u32 count, per graph:
        name str, input_channels u32, layer count u32, per layer:
            id i32, kind str, in_ch u32, out_ch u32, kernel u32, stride u32,
            padding u32, activation str ("" = none), leaky_slope f64,
            instance_norm u8, source count u32, sources i32...
        skip edge count u32, (producer i32, consumer i32) pairs
        per layer (same order): ndim u32, dims u32..., float32 data
    optimizer states u32 count, per state:
        name str, step_count u64, beta1 f64, beta2 f64, epsilon f64,
        learning_rate f64, tensor count u32, per tensor:
            length u32, first_moment float32[length], second_moment float32[length]
"""

from __future__ import annotations

import csv
import io
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .constants import (
    BACKGROUND_COLOR,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    CLASS_COLORS,
    IMAGE_CHANNELS,
    REPORT_HEADERS,
)
from .core.ops import Activation
from .core.optim import AdamState
from .core.tensor import Tensor
from .errors import (
    CheckpointCorruptError,
    CheckpointFormatError,
    CondenseError,
    ConfigurationError,
    UnsupportedVersionError,
)
from .netgraph import LayerKind, LayerSpec, NetworkGraph

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


# ------------------------------------------------------------ synthetic data
@dataclass
class PairedSample:
    mask: Tensor
    image: Tensor


def _render_shape(rng: np.random.Generator, size: int) -> np.ndarray:
    """Boolean footprint of one random axis-aligned rectangle or ellipse."""
    low = max(1, size // 8)
    height, width = rng.integers(low, max(low + 1, size // 2), size=2)
    top = int(rng.integers(0, size - height + 1))
    left = int(rng.integers(0, size - width + 1))
    rows, cols = np.mgrid[0:size, 0:size]
    if rng.random() < 0.5:
        return (rows >= top) & (rows < top + height) & (cols >= left) & (cols < left + width)
    cy, cx = top + (height - 1) / 2, left + (width - 1) / 2
    ry, rx = max(height / 2, 0.5), max(width / 2, 0.5)
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def gen_synthetic_pairs(
    seed: int, n: int, size: int, depth: Optional[int] = None
) -> list[PairedSample]:
    """Paired (class mask, rendered image) samples from a private seeded generator.

    Each mask holds 1-3 rectangles or ellipses on one-hot class planes; the
    image paints every class with its fixed color plus a gentle per-sample
    linear shading, clipped to [-1, 1].
    """
    if n < 0 or size < 1:
        raise ConfigurationError(f"need n >= 0 and size >= 1, got n={n}, size={size}")
    if depth is not None and size % 2**depth:
        raise ConfigurationError(
            f"sample size {size} is not divisible by 2^{depth}", {"size": size, "depth": depth}
        )
    rng = np.random.default_rng(seed)
    classes = len(CLASS_COLORS)
    grid = np.linspace(-1.0, 1.0, size)
    samples: list[PairedSample] = []
    for _ in range(n):
        labels = np.full((size, size), -1, dtype=np.int64)
        for _ in range(int(rng.integers(1, 4))):
            labels[_render_shape(rng, size)] = int(rng.integers(0, classes))
        mask = np.stack([(labels == c) for c in range(classes)]).astype(np.float32)

        slope_y, slope_x = rng.uniform(-0.1, 0.1, size=2)
        shading = slope_y * grid[:, None] + slope_x * grid[None, :]
        image = np.empty((IMAGE_CHANNELS, size, size), dtype=np.float64)
        for channel in range(IMAGE_CHANNELS):
            plane = np.full((size, size), BACKGROUND_COLOR[channel])
            for c in range(classes):
                plane[labels == c] = CLASS_COLORS[c][channel]
            image[channel] = np.where(labels >= 0, plane + shading, plane)
        image = np.clip(image, -1.0, 1.0)
        samples.append(PairedSample(mask=Tensor(mask[None]), image=Tensor(image[None])))
    return samples


def split_pairs(samples: Sequence[PairedSample], holdout: int) -> tuple[list[PairedSample], list[PairedSample]]:
    """Last ``holdout`` samples are held out for evaluation."""
    if holdout < 0 or holdout > len(samples):
        raise ConfigurationError(f"cannot hold out {holdout} of {len(samples)} samples")
    cut = len(samples) - holdout
    return list(samples[:cut]), list(samples[cut:])


def stack_batch(samples: Sequence[PairedSample]) -> tuple[Tensor, Tensor]:
    masks = np.concatenate([s.mask.data for s in samples], axis=0)
    images = np.concatenate([s.image.data for s in samples], axis=0)
    return Tensor(masks), Tensor(images)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Sample permutation for one epoch; depends only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def iterate_batches(
    samples: Sequence[PairedSample], batch_size: int, seed: int, epoch: int
) -> Iterator[tuple[Tensor, Tensor]]:
    order = epoch_order(seed, epoch, len(samples))
    for start in range(0, len(order), batch_size):
        yield stack_batch([samples[i] for i in order[start : start + batch_size]])


# --------------------------------------------------------------- checkpoints
@dataclass
class Checkpoint:
    graphs: dict[str, NetworkGraph] = field(default_factory=dict)
    optimizer_states: dict[str, AdamState] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)


class _Writer:
    def __init__(self) -> None:
        self.buffer = io.BytesIO()

    def pack(self, fmt: str, *values) -> None:
        self.buffer.write(struct.pack("<" + fmt, *values))

    def string(self, value: str) -> None:
        encoded = value.encode("utf-8")
        self.pack("I", len(encoded))
        self.buffer.write(encoded)

    def floats(self, array: np.ndarray) -> None:
        self.buffer.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if count < 0 or end > len(self.data):
            raise CheckpointCorruptError(
                f"checkpoint {self.path} is truncated at byte {self.offset}",
                {"path": self.path, "offset": self.offset},
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def string(self) -> str:
        raw = self.take(self.unpack("I"))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointCorruptError(f"checkpoint {self.path}: invalid UTF-8", {"path": self.path}) from exc

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def _write_graph(writer: _Writer, graph: NetworkGraph) -> None:
    writer.string(graph.name)
    writer.pack("I", graph.input_channels)
    layers = sorted(graph.layers, key=lambda spec: spec.id)
    writer.pack("I", len(layers))
    for spec in layers:
        writer.pack("i", spec.id)
        writer.string(spec.kind.value)
        writer.pack("5I", spec.in_ch, spec.out_ch, spec.kernel, spec.stride, spec.padding)
        writer.string(spec.activation.value if spec.activation else "")
        writer.pack("dB", spec.leaky_slope, int(spec.instance_norm))
        writer.pack("I", len(spec.input_sources))
        writer.pack(f"{len(spec.input_sources)}i", *spec.input_sources)
    writer.pack("I", len(graph.skip_edges))
    for producer, consumer in graph.skip_edges:
        writer.pack("2i", producer, consumer)
    for spec in layers:
        data = graph.weights[spec.id].data
        writer.pack("I", data.ndim)
        writer.pack(f"{data.ndim}I", *data.shape)
        writer.floats(data)


def _read_graph(reader: _Reader) -> NetworkGraph:
    name = reader.string()
    input_channels = reader.unpack("I")
    layers: list[LayerSpec] = []
    try:
        for _ in range(reader.unpack("I")):
            layer_id = reader.unpack("i")
            kind = LayerKind(reader.string())
            in_ch, out_ch, kernel, stride, padding = reader.unpack("5I")
            act = reader.string()
            slope, norm = reader.unpack("dB")
            count = reader.unpack("I")
            sources = reader.unpack(f"{count}i") if count else ()
            sources = (sources,) if isinstance(sources, int) else tuple(sources)
            layers.append(
                LayerSpec(
                    id=layer_id,
                    kind=kind,
                    in_ch=in_ch,
                    out_ch=out_ch,
                    kernel=kernel,
                    stride=stride,
                    padding=padding,
                    activation=Activation(act) if act else None,
                    input_sources=sources,
                    leaky_slope=slope,
                    instance_norm=bool(norm),
                )
            )
    except ValueError as exc:
        if isinstance(exc, CondenseError):
            raise
        raise CheckpointCorruptError(f"checkpoint {reader.path}: {exc}", {"path": reader.path}) from exc
    skip_edges = [tuple(reader.unpack("2i")) for _ in range(reader.unpack("I"))]
    weights: dict[int, Tensor] = {}
    for spec in layers:
        ndim = reader.unpack("I")
        dims = reader.unpack(f"{ndim}I") if ndim else ()
        shape = (dims,) if isinstance(dims, int) else tuple(dims)
        values = reader.floats(int(np.prod(shape)) if shape else 1)
        if shape != spec.weight_shape:
            raise CheckpointCorruptError(
                f"checkpoint {reader.path}: layer {spec.id} stores shape {shape}, expected {spec.weight_shape}",
                {"path": reader.path, "layer": spec.id},
            )
        weights[spec.id] = Tensor(values.reshape(shape), requires_grad=True)
    try:
        return NetworkGraph(
            layers=layers,
            weights=weights,
            input_channels=input_channels,
            skip_edges=skip_edges,
            name=name,
        )
    except CondenseError as exc:
        raise CheckpointCorruptError(
            f"checkpoint {reader.path}: stored graph '{name}' is invalid: {exc.message}",
            {"path": reader.path},
        ) from exc


def _write_state(writer: _Writer, name: str, state: AdamState) -> None:
    writer.string(name)
    writer.pack("Q", state.step_count)
    writer.pack("4d", state.beta1, state.beta2, state.epsilon, state.learning_rate)
    writer.pack("I", len(state.first_moment))
    for m, v in zip(state.first_moment, state.second_moment):
        writer.pack("I", m.size)
        writer.floats(m)
        writer.floats(v)


def _read_state(reader: _Reader, graphs: Mapping[str, NetworkGraph]) -> tuple[str, AdamState]:
    name = reader.string()
    step = reader.unpack("Q")
    beta1, beta2, epsilon, learning_rate = reader.unpack("4d")
    first: list[np.ndarray] = []
    second: list[np.ndarray] = []
    for _ in range(reader.unpack("I")):
        length = reader.unpack("I")
        first.append(reader.floats(length))
        second.append(reader.floats(length))
    graph = graphs.get(name)
    if graph is not None:
        shapes = [p.shape for p in graph.parameters()]
        if len(shapes) == len(first) and all(int(np.prod(s)) == m.size for s, m in zip(shapes, first)):
            first = [m.reshape(s) for m, s in zip(first, shapes)]
            second = [v.reshape(s) for v, s in zip(second, shapes)]
    state = AdamState(
        first_moment=first,
        second_moment=second,
        step_count=step,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        learning_rate=learning_rate,
    )
    return name, state


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    writer = _Writer()
    writer.buffer.write(CHECKPOINT_MAGIC)
    writer.pack("I", CHECKPOINT_VERSION)
    writer.pack("I", len(checkpoint.metadata))
    for key in sorted(checkpoint.metadata):
        writer.string(key)
        writer.string(str(checkpoint.metadata[key]))
    writer.pack("I", len(checkpoint.graphs))
    for name in sorted(checkpoint.graphs):
        _write_graph(writer, checkpoint.graphs[name])
    writer.pack("I", len(checkpoint.optimizer_states))
    for name in sorted(checkpoint.optimizer_states):
        _write_state(writer, name, checkpoint.optimizer_states[name])
    return writer.buffer.getvalue()


def decode_checkpoint(data: bytes, path: str = "<memory>") -> Checkpoint:
    magic = data[: len(CHECKPOINT_MAGIC)]
    if magic != CHECKPOINT_MAGIC:
        if len(data) < len(CHECKPOINT_MAGIC) and CHECKPOINT_MAGIC.startswith(data):
            raise CheckpointCorruptError(f"checkpoint {path} is truncated", {"path": path})
        raise CheckpointFormatError(f"{path} is not a condensegan checkpoint", {"path": path})
    reader = _Reader(data, path)
    reader.take(len(CHECKPOINT_MAGIC))
    version = reader.unpack("I")
    if version > CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint {path} has format version {version}; this build reads up to {CHECKPOINT_VERSION}",
            {"path": path, "version": version},
        )
    if version < 1:
        raise CheckpointFormatError(f"checkpoint {path} has invalid version {version}", {"path": path})
    metadata = {}
    for _ in range(reader.unpack("I")):
        key = reader.string()
        metadata[key] = reader.string()
    graphs = {}
    for _ in range(reader.unpack("I")):
        graph = _read_graph(reader)
        graphs[graph.name] = graph
    states = {}
    for _ in range(reader.unpack("I")):
        name, state = _read_state(reader, graphs)
        states[name] = state
    if reader.offset != len(data):
        raise CheckpointCorruptError(
            f"checkpoint {path} has {len(data) - reader.offset} trailing bytes", {"path": path}
        )
    return Checkpoint(graphs=graphs, optimizer_states=states, metadata=metadata)


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    """Write atomically: temp file next to ``path`` then ``os.replace``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(checkpoint)
    handle, temp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(payload)
        os.replace(temp_name, target)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    logger.debug("saved checkpoint %s (%d bytes)", target, len(payload))


def load_checkpoint(path: PathLike) -> Checkpoint:
    with open(path, "rb") as stream:
        data = stream.read()
    return decode_checkpoint(data, str(path))


# ------------------------------------------------------------------ reports
def _format_cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_report(path: PathLike, kind: str, rows: Sequence[Mapping[str, object]]) -> None:
    """CSV with the fixed header of ``kind``; LF newlines, rows in the given order."""
    header = REPORT_HEADERS.get(kind)
    if header is None:
        raise ConfigurationError(f"unknown report kind '{kind}'", {"kind": kind})
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(row.get(column)) for column in header])


def read_report(path: PathLike) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as stream:
        reader = csv.reader(stream)
        header = next(reader, [])
        return header, [dict(zip(header, row)) for row in reader]
