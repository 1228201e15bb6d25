"""Shared fixtures: a seeded weights file and a small image set.

Real pretrained weights are hundreds of megabytes and not vendored;
every behaviour under test (preprocessing, surgery, batching, file
formats, determinism) is weight-value independent, so the fixtures
build a VGG-19 state dict from a fixed torch seed and save it through
the same loading path the real weights would use.
"""
from __future__ import annotations

import numpy as np
import pytest
import torch
from PIL import Image
from torchvision.models import vgg19

from vggfeat.model import load_feature_extractor

# (name, size, mode); a mix of aspect ratios, one needing upscaling,
# one grayscale, one with an alpha channel.
FIXTURE_IMAGES = [
    ("img00.png", (300, 200), "RGB"),
    ("img01.png", (256, 256), "RGB"),
    ("img02.png", (224, 224), "RGB"),
    ("img03.png", (640, 480), "RGB"),
    ("img04.png", (200, 300), "RGB"),
    ("img05.png", (500, 260), "RGB"),
    ("img06.png", (287, 233), "RGB"),
    ("img07.png", (256, 320), "RGB"),
    ("img08.png", (310, 270), "L"),
    ("img09.png", (260, 260), "RGBA"),
]


def make_image(path, size, mode, seed):
    rng = np.random.default_rng(seed)
    w, h = size
    shape = (h, w) if mode == "L" else (h, w, len(mode))
    data = rng.integers(0, 256, size=shape, dtype=np.uint8)
    # uint8 array shapes map unambiguously onto L/RGB/RGBA.
    Image.fromarray(data).save(path)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("images")
    for seed, (name, size, mode) in enumerate(FIXTURE_IMAGES):
        make_image(out / name, size, mode, seed)
    (out / "corrupt.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
    return out


@pytest.fixture(scope="session")
def weights_file(tmp_path_factory):
    torch.manual_seed(1234)
    model = vgg19(weights=None)
    path = tmp_path_factory.mktemp("weights") / "vgg19.pt"
    torch.save(model.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def extractor_model(weights_file):
    return load_feature_extractor(weights_file)
