"""The two fixed network architectures, their weights, and the weights file format.

PedestrianNet classifies 64x128 grayscale windows (person present or not);
EyeNet classifies 24x24 grayscale eye crops (open or closed).  Class 1 is
always the positive class (person present / eyes open).

Weights files are little-endian binary:

    magic          8 bytes, b"PECAS001"
    name length    u16, then that many UTF-8 bytes ("pedestrian" or "eye")
    record count   u16
    per record     kind u8 (1 conv kernel, 2 conv bias, 3 dense weight,
                   4 dense bias), rank u8, dims rank x u32, values
                   prod(dims) x f64 row-major

No padding anywhere; a round trip through save/load is byte identical.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError, ModelFormatError, SpecMismatchError
from .rng import SplitMix64

MAGIC = b"PECAS001"

_KIND_CODES = {"conv_kernel": 1, "conv_bias": 2, "dense_weight": 3, "dense_bias": 4}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class LayerDesc:
    """One layer in a network: kind plus the sizes that kind needs."""

    kind: str  # conv | relu | maxpool2 | flatten | dense | softmax
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    units: int = 0


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]  # (channels, height, width)
    layers: tuple[LayerDesc, ...]


@dataclass
class ModelWeights:
    spec: ModelSpec
    parameters: list[np.ndarray]

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.spec, [p.copy() for p in self.parameters])


def build_pedestrian_net() -> ModelSpec:
    """Two 3x3 conv blocks over a 1x128x64 window, then a 2-way classifier."""
    return ModelSpec(
        name="pedestrian",
        input_shape=(1, 128, 64),
        layers=(
            LayerDesc("conv", filters=8, kernel=3, stride=1, padding=1),
            LayerDesc("relu"),
            LayerDesc("maxpool2"),
            LayerDesc("conv", filters=16, kernel=3, stride=1, padding=1),
            LayerDesc("relu"),
            LayerDesc("maxpool2"),
            LayerDesc("flatten"),
            LayerDesc("dense", units=2),
            LayerDesc("softmax"),
        ),
    )


def build_eye_net() -> ModelSpec:
    """One 3x3 conv block over a 1x24x24 crop, then a 2-way classifier."""
    return ModelSpec(
        name="eye",
        input_shape=(1, 24, 24),
        layers=(
            LayerDesc("conv", filters=8, kernel=3, stride=1, padding=1),
            LayerDesc("relu"),
            LayerDesc("maxpool2"),
            LayerDesc("flatten"),
            LayerDesc("dense", units=2),
            LayerDesc("softmax"),
        ),
    )


def spec_by_name(name: str) -> ModelSpec:
    if name == "pedestrian":
        return build_pedestrian_net()
    if name == "eye":
        return build_eye_net()
    raise SpecMismatchError(f"unknown model name {name!r}")


def output_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Shape after each layer, starting from spec.input_shape; sanity-checks chaining."""
    shape: tuple[int, ...] = spec.input_shape
    shapes = []
    for layer in spec.layers:
        if layer.kind == "conv":
            c, h, w = shape
            oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
            ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
            shape = (layer.filters, oh, ow)
        elif layer.kind in ("relu", "softmax"):
            pass
        elif layer.kind == "maxpool2":
            c, h, w = shape
            if h % 2 or w % 2:
                raise DimensionError(f"maxpool2 over odd dimensions {h}x{w}")
            shape = (c, h // 2, w // 2)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            shape = (layer.units,)
        else:
            raise DimensionError(f"unknown layer kind {layer.kind!r}")
        shapes.append(shape)
    if shapes[-1] != (2,):
        raise DimensionError(f"spec {spec.name!r} does not chain to 2 logits: {shapes[-1]}")
    return shapes


def parameter_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """(kind, shape) for every parameter tensor, in forward order."""
    result = []
    shape: tuple[int, ...] = spec.input_shape
    for layer, out_shape in zip(spec.layers, output_shapes(spec)):
        if layer.kind == "conv":
            result.append(("conv_kernel", (layer.filters, shape[0], layer.kernel, layer.kernel)))
            result.append(("conv_bias", (layer.filters,)))
        elif layer.kind == "dense":
            result.append(("dense_weight", (layer.units, shape[0])))
            result.append(("dense_bias", (layer.units,)))
        shape = out_shape
    return result


def init_weights(spec: ModelSpec, seed: int) -> ModelWeights:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, reproducible from seed."""
    rng = SplitMix64(seed)
    params = []
    for kind, shape in parameter_shapes(spec):
        if kind.endswith("_bias"):
            params.append(np.zeros(shape, dtype=np.float64))
            continue
        if kind == "conv_kernel":
            fan_in = shape[1] * shape[2] * shape[3]
        else:
            fan_in = shape[1]
        bound = math.sqrt(6.0 / fan_in)
        flat = np.array([rng.uniform(-bound, bound) for _ in range(int(np.prod(shape)))])
        params.append(flat.reshape(shape))
    return ModelWeights(spec, params)


def _forward(weights: ModelWeights, x: np.ndarray, keep: bool):
    """Run the layer chain; optionally keep per-layer inputs for backward."""
    cache = [] if keep else None
    a = x
    pi = 0
    for layer in weights.spec.layers:
        if layer.kind == "conv":
            w, b = weights.parameters[pi], weights.parameters[pi + 1]
            pi += 2
            if keep:
                cache.append(a)
            a = nn.conv2d_forward(a, w, b, layer.stride, layer.padding)
        elif layer.kind == "relu":
            if keep:
                cache.append(a)
            a, _ = nn.relu_forward_backward(a)
        elif layer.kind == "maxpool2":
            if keep:
                cache.append(a)
            a, _ = nn.maxpool2_forward_backward(a)
        elif layer.kind == "flatten":
            if keep:
                cache.append(a.shape)
            a = a.reshape(-1)
        elif layer.kind == "dense":
            w, b = weights.parameters[pi], weights.parameters[pi + 1]
            pi += 2
            if keep:
                cache.append(a)
            a, _ = nn.dense_forward_backward(a, w, b)
        elif layer.kind == "softmax":
            if keep:
                cache.append(None)
            a = nn.softmax(a)
    return a, cache


def predict(weights: ModelWeights, image) -> np.ndarray:
    """Softmax scores [negative, positive] for one image of the spec's input shape."""
    x = np.asarray(image, dtype=np.float64)
    if x.shape != weights.spec.input_shape:
        raise DimensionError(
            f"image shape {x.shape} != {weights.spec.name} input {weights.spec.input_shape}"
        )
    scores, _ = _forward(weights, x, keep=False)
    return scores


def loss_and_grads(weights: ModelWeights, image, label: int):
    """Cross-entropy loss plus gradients for one labeled image.

    Returns (loss, scores, input_grad, param_grads) with param_grads in the
    same order as weights.parameters.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.shape != weights.spec.input_shape:
        raise DimensionError(
            f"image shape {x.shape} != {weights.spec.name} input {weights.spec.input_shape}"
        )
    scores, cache = _forward(weights, x, keep=True)
    loss, upstream = nn.cross_entropy_loss(scores, label)

    param_grads: list[np.ndarray] = [None] * len(weights.parameters)
    pi = len(weights.parameters)
    for layer, cached in zip(reversed(weights.spec.layers), reversed(cache)):
        if layer.kind == "softmax":
            continue  # cross_entropy_loss already differentiated through it
        if layer.kind == "dense":
            pi -= 2
            w, b = weights.parameters[pi], weights.parameters[pi + 1]
            _, grad = nn.dense_forward_backward(cached, w, b, upstream)
            param_grads[pi], param_grads[pi + 1] = grad.param_grads
            upstream = grad.input_grad
        elif layer.kind == "flatten":
            upstream = upstream.reshape(cached)
        elif layer.kind == "maxpool2":
            _, grad = nn.maxpool2_forward_backward(cached, upstream)
            upstream = grad.input_grad
        elif layer.kind == "relu":
            _, grad = nn.relu_forward_backward(cached, upstream)
            upstream = grad.input_grad
        elif layer.kind == "conv":
            pi -= 2
            w = weights.parameters[pi]
            grad = nn.conv2d_backward(cached, w, layer.stride, layer.padding, upstream)
            param_grads[pi], param_grads[pi + 1] = grad.param_grads
            upstream = grad.input_grad
    return loss, scores, upstream, param_grads


def activation_margins(weights: ModelWeights, x) -> tuple[float, float]:
    """Distance of the forward pass from its non-smooth points.

    Returns (min |pre-ReLU activation|, min gap between a pool window's top
    two values).  Finite differences are only trustworthy when both margins
    comfortably exceed the probe epsilon, so gradient checks use this to vet
    an operating point before probing.
    """
    a = np.asarray(x, dtype=np.float64)
    pi = 0
    min_pre = np.inf
    min_gap = np.inf
    for layer in weights.spec.layers:
        if layer.kind == "conv":
            w, b = weights.parameters[pi], weights.parameters[pi + 1]
            pi += 2
            a = nn.conv2d_forward(a, w, b, layer.stride, layer.padding)
        elif layer.kind == "relu":
            min_pre = min(min_pre, float(np.abs(a).min()))
            a, _ = nn.relu_forward_backward(a)
        elif layer.kind == "maxpool2":
            c, h, w = a.shape
            windows = a.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
            ordered = np.sort(windows.reshape(c, h // 2, w // 2, 4), axis=3)
            min_gap = min(min_gap, float((ordered[..., 3] - ordered[..., 2]).min()))
            a, _ = nn.maxpool2_forward_backward(a)
        elif layer.kind == "flatten":
            a = a.reshape(-1)
        elif layer.kind == "dense":
            w, b = weights.parameters[pi], weights.parameters[pi + 1]
            pi += 2
            a, _ = nn.dense_forward_backward(a, w, b)
    return min_pre, min_gap


class LossFragment:
    """Adapter exposing a model + label through the gradcheck protocol."""

    def __init__(self, weights: ModelWeights, label: int):
        self.weights = weights
        self.label = label

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights.parameters

    def loss(self, x) -> float:
        scores, _ = _forward(self.weights, np.asarray(x, dtype=np.float64), keep=False)
        loss, _ = nn.cross_entropy_loss(scores, self.label)
        return loss

    def grads(self, x):
        _, _, input_grad, param_grads = loss_and_grads(self.weights, x, self.label)
        return input_grad, param_grads


def save_model(weights: ModelWeights, path) -> None:
    expected = parameter_shapes(weights.spec)
    if len(expected) != len(weights.parameters):
        raise ModelFormatError(
            f"parameter count {len(weights.parameters)} != spec's {len(expected)}"
        )
    blob = bytearray()
    blob += MAGIC
    name = weights.spec.name.encode("utf-8")
    blob += struct.pack("<H", len(name))
    blob += name
    blob += struct.pack("<H", len(weights.parameters))
    for (kind, shape), tensor in zip(expected, weights.parameters):
        if tuple(tensor.shape) != shape:
            raise ModelFormatError(f"{kind} tensor shape {tensor.shape} != expected {shape}")
        blob += struct.pack("<BB", _KIND_CODES[kind], tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise ModelFormatError(f"truncated file while reading {what}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_model(path, expect: str | None = None) -> ModelWeights:
    """Read a weights file back; optionally insist on a specific model name."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"magic mismatch: {magic!r} != {MAGIC!r}")
    (name_len,) = struct.unpack("<H", r.take(2, "name length"))
    try:
        name = r.take(name_len, "model name").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model name is not valid UTF-8: {exc}") from exc
    spec = spec_by_name(name)
    if expect is not None and name != expect:
        raise SpecMismatchError(f"expected a {expect!r} model, file holds {name!r}")
    expected = parameter_shapes(spec)
    (count,) = struct.unpack("<H", r.take(2, "record count"))
    if count != len(expected):
        raise ModelFormatError(
            f"record count {count} != {len(expected)} expected for {name!r}"
        )
    params = []
    for i, (kind, shape) in enumerate(expected):
        code, rank = struct.unpack("<BB", r.take(2, f"record {i} header"))
        if code != _KIND_CODES[kind]:
            raise ModelFormatError(
                f"record {i} kind code {code} != {_KIND_CODES[kind]} ({kind})"
            )
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"record {i} dims"))
        if dims != shape:
            raise ModelFormatError(f"record {i} dims {dims} != expected {shape}")
        n_values = int(np.prod(shape))
        raw = r.take(8 * n_values, f"record {i} values")
        tensor = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(tensor)):
            raise ModelFormatError(f"record {i} values contain NaN or Inf")
        params.append(tensor)
    if r.pos != len(blob):
        raise ModelFormatError(f"{len(blob) - r.pos} trailing bytes after last record")
    return ModelWeights(spec, params)
