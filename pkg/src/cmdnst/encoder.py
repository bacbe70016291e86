"""Convolutional feature encoders with raw (pre-activation) readouts.

Two architectures:

* ``VGG19``: the standard 19-layer network, loaded from a checksummed weight
  archive (see ``cmdnst.weights``). Inputs are standardized with the usual
  ImageNet channel statistics.
* ``TINY``: a 3-block toy encoder (8, 12, 16 channels, 3x3 kernels, stride-2
  average pooling between blocks) whose weights are drawn from a seeded
  uniform distribution, so it is bit-reproducible and needs no weight file.

Feature maps are the outputs of the convolution layers themselves, before
the ReLU that feeds the next layer; they may be negative. Extraction keeps
the autograd graph alive, so losses over the returned maps backpropagate to
the input pixels.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InvalidInputError, NumericError, WeightLoadError
from .measures import FeatureMap
from .weights import read_weight_archive

WEIGHTS_ENV_VAR = "CMDNST_WEIGHTS"

MIN_IMAGE_SIDE = 32


class Architecture(str, enum.Enum):
    VGG19 = "vgg19"
    TINY = "tiny"


# (name, in_channels, out_channels, pooled_before)
_VGG19_CONVS = (
    ("conv1_1", 3, 64, False), ("conv1_2", 64, 64, False),
    ("conv2_1", 64, 128, True), ("conv2_2", 128, 128, False),
    ("conv3_1", 128, 256, True), ("conv3_2", 256, 256, False),
    ("conv3_3", 256, 256, False), ("conv3_4", 256, 256, False),
    ("conv4_1", 256, 512, True), ("conv4_2", 512, 512, False),
    ("conv4_3", 512, 512, False), ("conv4_4", 512, 512, False),
    ("conv5_1", 512, 512, True), ("conv5_2", 512, 512, False),
    ("conv5_3", 512, 512, False), ("conv5_4", 512, 512, False),
)

_TINY_CONVS = (
    ("conv1_1", 3, 8, False),
    ("conv2_1", 8, 12, True),
    ("conv3_1", 12, 16, True),
)

_ARCH_CONVS = {Architecture.VGG19: _VGG19_CONVS, Architecture.TINY: _TINY_CONVS}

_DEFAULT_STYLE_LAYERS = {
    Architecture.VGG19: ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"),
    Architecture.TINY: ("conv1_1", "conv2_1", "conv3_1"),
}
_DEFAULT_CONTENT_LAYER = {Architecture.VGG19: "conv4_1", Architecture.TINY: "conv3_1"}


@dataclass(frozen=True)
class Preprocessing:
    """Channel-wise standardization applied to [0,1] images before encoding."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]


_IMAGENET_PREPROCESSING = Preprocessing(
    mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)
)
_IDENTITY_PREPROCESSING = Preprocessing(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
_DEFAULT_PREPROCESSING = {
    Architecture.VGG19: _IMAGENET_PREPROCESSING,
    Architecture.TINY: _IDENTITY_PREPROCESSING,
}


def layer_channels(architecture: Architecture) -> dict[str, int]:
    """Map layer id to channel count for the given architecture."""
    return {name: out for name, _, out, _ in _ARCH_CONVS[architecture]}


@dataclass
class EncoderSpec:
    """Which encoder to build, where its weights come from, and which layers to read.

    ``weight_source`` is an archive path for VGG19 and an integer seed for
    TINY. Unset layer fields fall back to the architecture defaults
    (conv1_1..conv5_1 style layers and conv4_1 content for VGG19; all three
    convolutions and conv3_1 content for TINY).
    """

    architecture: Architecture = Architecture.VGG19
    weight_source: str | os.PathLike | int | None = None
    style_layers: tuple[str, ...] | None = None
    content_layer: str | None = None
    preprocessing: Preprocessing | None = None

    def __post_init__(self):
        self.architecture = Architecture(self.architecture)
        if self.style_layers is None:
            self.style_layers = _DEFAULT_STYLE_LAYERS[self.architecture]
        else:
            self.style_layers = tuple(str(l) for l in self.style_layers)
        if self.content_layer is None:
            self.content_layer = _DEFAULT_CONTENT_LAYER[self.architecture]
        if self.preprocessing is None:
            self.preprocessing = _DEFAULT_PREPROCESSING[self.architecture]
        table = layer_channels(self.architecture)
        for layer in (*self.style_layers, self.content_layer):
            if layer not in table:
                raise ConfigError(
                    f"layer {layer!r} does not exist in {self.architecture.value}; "
                    f"known layers: {sorted(table)}"
                )


class _ConvStack(nn.Module):
    """Convolution chain that returns pre-activation outputs of named layers."""

    def __init__(self, convs, pool: nn.Module):
        super().__init__()
        self.layer_order = [name for name, _, _, _ in convs]
        self.pooled_before = {name: pooled for name, _, _, pooled in convs}
        self.convs = nn.ModuleDict(
            {name: nn.Conv2d(c_in, c_out, kernel_size=3, padding=1) for name, c_in, c_out, _ in convs}
        )
        self.pool = pool

    def forward(self, x: torch.Tensor, wanted: Sequence[str]) -> dict[str, torch.Tensor]:
        remaining = set(wanted)
        captured: dict[str, torch.Tensor] = {}
        for name in self.layer_order:
            if self.pooled_before[name]:
                x = self.pool(x)
            y = self.convs[name](x)
            if name in remaining:
                captured[name] = y
                remaining.discard(name)
                if not remaining:
                    break
            x = torch.relu(y)
        return captured


class Encoder:
    """A frozen feature encoder bound to an ``EncoderSpec``."""

    def __init__(self, spec: EncoderSpec, module: _ConvStack, dtype: torch.dtype):
        self.spec = spec
        self.module = module
        self.dtype = dtype

    @property
    def layer_table(self) -> dict[str, int]:
        return layer_channels(self.spec.architecture)

    def default_layers(self) -> tuple[str, ...]:
        """Style layers followed by the content layer (deduplicated)."""
        layers = list(self.spec.style_layers)
        if self.spec.content_layer not in layers:
            layers.append(self.spec.content_layer)
        return tuple(layers)


def load_encoder(spec: EncoderSpec, dtype: torch.dtype = torch.float32) -> Encoder:
    """Build the encoder described by ``spec`` with frozen weights.

    VGG19 reads its tensors from the archive at ``spec.weight_source`` (or
    the ``CMDNST_WEIGHTS`` environment variable), verifying the payload
    checksum and every tensor shape. TINY is initialized from the integer
    seed in ``spec.weight_source`` and is identical across runs.
    """
    if spec.architecture is Architecture.TINY:
        module = _build_tiny(spec)
    else:
        module = _build_vgg19(spec)
    module = module.to(dtype)
    module.eval()
    for param in module.parameters():
        param.requires_grad_(False)
    return Encoder(spec=spec, module=module, dtype=dtype)


def _build_tiny(spec: EncoderSpec) -> _ConvStack:
    seed = spec.weight_source if spec.weight_source is not None else 0
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"TINY weight_source must be an integer seed, got {seed!r}")
    module = _ConvStack(_TINY_CONVS, pool=nn.AvgPool2d(kernel_size=2, stride=2))
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name in module.layer_order:
            conv = module.convs[name]
            bound = 1.0 / math.sqrt(conv.in_channels * 9)
            conv.weight.uniform_(-bound, bound, generator=generator)
            conv.bias.uniform_(-bound, bound, generator=generator)
    return module


def _build_vgg19(spec: EncoderSpec) -> _ConvStack:
    source = spec.weight_source or os.environ.get(WEIGHTS_ENV_VAR)
    if not source:
        raise WeightLoadError(
            "no VGG19 weight archive given; pass EncoderSpec.weight_source or set "
            f"${WEIGHTS_ENV_VAR} (create one with 'cmdnst convert-weights')"
        )
    _, tensors = read_weight_archive(source)
    expected_shapes: dict[str, tuple[int, ...]] = {}
    for name, c_in, c_out, _ in _VGG19_CONVS:
        expected_shapes[f"{name}.weight"] = (c_out, c_in, 3, 3)
        expected_shapes[f"{name}.bias"] = (c_out,)
    missing = sorted(set(expected_shapes) - set(tensors))
    if missing:
        raise WeightLoadError(f"weight archive {source} is missing tensors: {missing}")
    for tname, shape in expected_shapes.items():
        got = tuple(tensors[tname].shape)
        if got != shape:
            raise WeightLoadError(
                f"tensor '{tname}' has shape {got}, expected {shape}"
            )
    module = _ConvStack(_VGG19_CONVS, pool=nn.MaxPool2d(kernel_size=2, stride=2))
    with torch.no_grad():
        for name in module.layer_order:
            conv = module.convs[name]
            conv.weight.copy_(torch.from_numpy(np.array(tensors[f"{name}.weight"])))
            conv.bias.copy_(torch.from_numpy(np.array(tensors[f"{name}.bias"])))
    return module


def extract_features(
    encoder: Encoder,
    image,
    layers: Sequence[str] | None = None,
) -> dict[str, FeatureMap]:
    """Run the encoder and return reshaped (C, H*W) maps for ``layers``.

    ``image`` is an H x W x 3 array or tensor with values in [0, 1] and both
    sides at least 32 pixels. Channel standardization happens here. When
    ``image`` is a tensor that requires grad, gradients flow back to it.
    """
    if layers is None:
        layers = encoder.default_layers()
    table = encoder.layer_table
    for layer in layers:
        if layer not in table:
            raise ConfigError(
                f"layer {layer!r} does not exist in {encoder.spec.architecture.value}"
            )

    x = torch.as_tensor(image)
    if x.ndim != 3 or x.shape[2] != 3:
        raise InvalidInputError(f"expected an HxWx3 image, got shape {tuple(x.shape)}")
    if x.shape[0] < MIN_IMAGE_SIDE or x.shape[1] < MIN_IMAGE_SIDE:
        raise InvalidInputError(
            f"image sides must be >= {MIN_IMAGE_SIDE}, got {x.shape[0]}x{x.shape[1]}"
        )
    if not bool(torch.isfinite(x.detach()).all()):
        raise NumericError("image contains non-finite pixel values")
    x = x.to(encoder.dtype)

    pre = encoder.spec.preprocessing
    mean = torch.tensor(pre.mean, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(pre.std, dtype=x.dtype).view(3, 1, 1)
    batch = ((x.permute(2, 0, 1) - mean) / std).unsqueeze(0)

    raw = encoder.module(batch, layers)
    features: dict[str, FeatureMap] = {}
    for layer in layers:
        out = raw[layer][0]
        features[layer] = FeatureMap(layer_id=layer, values=out.reshape(out.shape[0], -1))
    return features
