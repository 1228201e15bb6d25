"""Decode images and produce normalized 3x224x224 network inputs."""
from __future__ import annotations

import logging
from pathlib import Path

import torch
from PIL import Image, UnidentifiedImageError
from torchvision import transforms
from torchvision.transforms import InterpolationMode

log = logging.getLogger(__name__)

RESIZE_SHORTER_SIDE = 256
CROP_SIZE = 224
# Channel statistics the pretrained network was trained with.
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)

# Modes PIL reports for single-channel images of various bit depths.
_GRAYSCALE_MODES = frozenset({"1", "L", "LA", "I", "I;16", "F"})

_pipeline = transforms.Compose([
    transforms.Resize(RESIZE_SHORTER_SIDE, interpolation=InterpolationMode.BILINEAR,
                      antialias=True),
    transforms.CenterCrop(CROP_SIZE),
    transforms.ToTensor(),
    transforms.Normalize(CHANNEL_MEAN, CHANNEL_STD),
])


class DecodeError(ValueError):
    """An image file could not be decoded; the message names the path."""

    def __init__(self, path: str | Path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


def load_rgb(path: str | Path) -> Image.Image:
    """Decode an image file to RGB; grayscale is promoted with a warning."""
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        # Pillow signals broken files inconsistently across plugins
        # (UnidentifiedImageError, OSError, SyntaxError, ValueError).
        raise DecodeError(path, f"cannot decode image ({exc})") from exc
    if img.mode in _GRAYSCALE_MODES:
        log.warning("%s: grayscale image promoted to 3 channels", path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return img


def preprocess_image(path: str | Path) -> torch.Tensor:
    """File path to a float32 (3, 224, 224) tensor ready for the network."""
    return _pipeline(load_rgb(path))
