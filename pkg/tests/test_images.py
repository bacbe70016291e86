"""Image file round-trips and pixel-range handling."""

import numpy as np
import pytest
import torch
from PIL import Image

from cmdnst.errors import InvalidInputError
from cmdnst.images import load_image, save_image
from tests.conftest import stripe_image


def test_png_round_trip_within_quantization(tmp_path):
    path = tmp_path / "img.png"
    pixels = torch.rand(20, 30, 3)
    save_image(path, pixels)
    back = load_image(path)
    assert back.shape == (20, 30, 3)
    assert back.dtype == np.float32
    assert float(np.abs(back - pixels.numpy()).max()) <= 0.5 / 255 + 1e-6


def test_exact_values_survive(tmp_path):
    # stripes only contain 0.0 and 1.0, which quantize losslessly
    path = tmp_path / "stripes.png"
    image = stripe_image(16)
    save_image(path, image)
    assert np.array_equal(load_image(path), image.numpy())


def test_save_clips_out_of_range(tmp_path):
    path = tmp_path / "clip.png"
    save_image(path, torch.tensor([[[2.0, -1.0, 0.5]] * 4] * 4))
    back = load_image(path)
    assert float(back[0, 0, 0]) == 1.0
    assert float(back[0, 0, 1]) == 0.0


def test_load_resize_takes_height_width(tmp_path):
    path = tmp_path / "img.png"
    save_image(path, torch.rand(40, 60, 3))
    resized = load_image(path, size=(20, 30))
    assert resized.shape == (20, 30, 3)


def test_grayscale_promoted_to_rgb(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.full((8, 8), 128, dtype=np.uint8), mode="L").save(path)
    loaded = load_image(path)
    assert loaded.shape == (8, 8, 3)
    assert np.array_equal(loaded[..., 0], loaded[..., 1])


def test_numpy_input_accepted(tmp_path):
    path = tmp_path / "np.png"
    save_image(path, np.random.default_rng(0).random((8, 8, 3)))
    assert load_image(path).shape == (8, 8, 3)


def test_bad_shapes_rejected(tmp_path):
    with pytest.raises(InvalidInputError):
        save_image(tmp_path / "bad.png", torch.rand(8, 8))
    with pytest.raises(InvalidInputError):
        save_image(tmp_path / "bad.png", torch.rand(8, 8, 4))


def test_bad_resize_rejected(tmp_path):
    path = tmp_path / "img.png"
    save_image(path, torch.rand(8, 8, 3))
    with pytest.raises(InvalidInputError):
        load_image(path, size=0)
    with pytest.raises(InvalidInputError):
        load_image(path, size=(5, -1))
    with pytest.raises(InvalidInputError):
        load_image(path, size=(5, 5, 5))


def test_missing_file_raises_oserror():
    with pytest.raises(OSError):
        load_image("/nonexistent/image.png")
