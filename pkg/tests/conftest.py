"""Shared fixtures: deterministic encoders and structured calibration images.

Random noise makes a poor content/style pair (two uniform clouds already have
nearly identical channel distributions), so the image fixtures are structured:
smooth ramps for content, hard-edged stripes for style.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from cmdnst.encoder import Architecture, EncoderSpec, load_encoder
from cmdnst.weights import write_weight_archive

# (name, in_channels, out_channels) of the 19-layer encoder, stated
# independently of the implementation's own table
VGG19_CONV_PLAN = (
    ("conv1_1", 3, 64), ("conv1_2", 64, 64),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256),
    ("conv3_3", 256, 256), ("conv3_4", 256, 256),
    ("conv4_1", 256, 512), ("conv4_2", 512, 512),
    ("conv4_3", 512, 512), ("conv4_4", 512, 512),
    ("conv5_1", 512, 512), ("conv5_2", 512, 512),
    ("conv5_3", 512, 512), ("conv5_4", 512, 512),
)


def gradient_image(size: int) -> torch.Tensor:
    """Smooth ramps: x, y, and their mean, one per channel."""
    xs = torch.linspace(0.0, 1.0, size)
    x = xs[None, :].expand(size, size)
    y = xs[:, None].expand(size, size)
    return torch.stack([x, y, 0.5 * (x + y)], dim=-1)


def stripe_image(size: int, period: int = 8) -> torch.Tensor:
    """Diagonal bands with complementary red/green plus blue column bands."""
    idx = torch.arange(size)
    diag = ((idx[:, None] + idx[None, :]) // period) % 2
    col = (idx[None, :].expand(size, size) // period) % 2
    r = diag.to(torch.float32)
    return torch.stack([r, 1.0 - r, col.to(torch.float32)], dim=-1)


@pytest.fixture(scope="session")
def tiny_encoder():
    return load_encoder(EncoderSpec(architecture=Architecture.TINY, weight_source=0))


@pytest.fixture(scope="session")
def vgg_archive(tmp_path_factory):
    """Archive with correctly shaped synthetic tensors (not pretrained).

    He-scaled normal weights and zero biases keep activations from exploding
    through 16 layers; benchmarks and shape tests do not care about image
    quality.
    """
    rng = np.random.default_rng(0)
    tensors = {}
    for name, c_in, c_out in VGG19_CONV_PLAN:
        scale = np.sqrt(2.0 / (c_in * 9))
        tensors[f"{name}.weight"] = rng.normal(0.0, scale, (c_out, c_in, 3, 3)).astype(
            np.float32
        )
        tensors[f"{name}.bias"] = np.zeros(c_out, dtype=np.float32)
    path = tmp_path_factory.mktemp("weights") / "vgg19_synthetic.zip"
    write_weight_archive(path, tensors, "VGG19")
    return path
