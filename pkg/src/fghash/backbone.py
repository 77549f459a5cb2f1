"""Small convolutional feature extractor.

A stack of strided conv stages with relu between them. Inputs are centered
(images arrive in [0, 1]) and the final stage stays pre-activation, so the
feature map carries signed values and its global average pool (the embedding
fed to the hash layer) is roughly zero-centered; an all-positive embedding
would bury image-to-image variation under a large common component.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .serialize import read_checkpoint, write_checkpoint
from .tensor import Tensor


@dataclass(frozen=True)
class ArchDescriptor:
    input_height: int = 32
    input_width: int = 32
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    stride: int = 2
    pad: int = 1

    def validate(self) -> None:
        if self.input_height < 1 or self.input_width < 1 or self.in_channels < 1:
            raise ConfigError("input dims and channels must be >= 1")
        if not self.stage_channels or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"invalid stage_channels {self.stage_channels}")
        if self.kernel_size < 1 or self.stride < 1 or self.pad < 0:
            raise ConfigError("kernel_size/stride must be >= 1 and pad >= 0")
        self.feature_shape()  # raises if any stage collapses

    def feature_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the final stage's output."""
        h, w = self.input_height, self.input_width
        for _ in self.stage_channels:
            h = (h + 2 * self.pad - self.kernel_size) // self.stride + 1
            w = (w + 2 * self.pad - self.kernel_size) // self.stride + 1
            if h < 1 or w < 1:
                raise ConfigError("architecture collapses the spatial dims to zero")
        return self.stage_channels[-1], h, w

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ArchDescriptor":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        raw = dict(raw)
        if "stage_channels" in raw:
            raw["stage_channels"] = tuple(raw["stage_channels"])
        return cls(**raw)


@dataclass
class BackboneParams:
    arch: ArchDescriptor
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, arch: ArchDescriptor, seed) -> "BackboneParams":
        """Kaiming fan-in normal weights, zero biases, deterministic by seed."""
        arch.validate()
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        c_in = arch.in_channels
        k = arch.kernel_size
        for c_out in arch.stage_channels:
            std = np.sqrt(2.0 / (c_in * k * k))
            weights.append(Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True))
            biases.append(Tensor(np.zeros(c_out), requires_grad=True))
            c_in = c_out
        return cls(arch, weights, biases)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"conv{i}_w"] = w.data
            out[f"conv{i}_b"] = b.data
        return out


@dataclass
class FeatureMap:
    """Last-stage activation for one image, optionally tagged with its id."""

    a: Tensor
    image_id: int | None = None


INPUT_CENTER = 0.5


def stage_activations(x: Tensor, params: BackboneParams) -> list[Tensor]:
    """Per-stage activations; the last entry is the pre-activation feature map."""
    arch = params.arch
    h = ops.shift(x, -INPUT_CENTER)
    acts = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ops.conv2d(h, w, b, stride=arch.stride, pad=arch.pad)
        if i != last:
            h = ops.relu_act(h)
        acts.append(h)
    return acts


def extract_batch(x: Tensor, params: BackboneParams) -> tuple[Tensor, Tensor]:
    """Feature maps (N,C',H',W') and pooled embeddings (N,C') for a batch."""
    if x.ndim != 4:
        raise ShapeError(f"extract_batch expects (N,C,H,W), got {x.shape}")
    a = stage_activations(x, params)[-1]
    return a, ops.global_avg_pool(a)


def extract(x: Tensor | np.ndarray, params: BackboneParams, image_id: int | None = None) -> tuple[FeatureMap, Tensor]:
    """Feature map and embedding for a single (C,H,W) image."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim != 3:
        raise ShapeError(f"extract expects a (C,H,W) image, got {t.shape}")
    arch = params.arch
    if t.shape != (arch.in_channels, arch.input_height, arch.input_width):
        raise ShapeError(f"image shape {t.shape} does not match the descriptor")
    a = stage_activations(t, params)[-1]
    return FeatureMap(a, image_id), ops.global_avg_pool(a)


def save_backbone(path, params: BackboneParams) -> None:
    write_checkpoint(path, {"arch": params.arch.to_dict()}, params.named_arrays())


def load_backbone(path) -> BackboneParams:
    meta, tensors = read_checkpoint(path)
    arch = ArchDescriptor.from_dict(meta["arch"])
    params = BackboneParams.init(arch, seed=0)
    for i in range(len(arch.stage_channels)):
        params.weights[i] = Tensor(tensors[f"conv{i}_w"], requires_grad=True)
        params.biases[i] = Tensor(tensors[f"conv{i}_b"], requires_grad=True)
    return params
