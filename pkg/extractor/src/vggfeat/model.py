"""Build the embedding network: VGG-19 minus its final classifier layer."""
from __future__ import annotations

import pickle
import zipfile
from pathlib import Path

import torch
from torchvision.models import vgg19

EMBEDDING_DIM = 4096
# The model output is the activation feeding the removed 1000-way layer:
# the ReLU after the second 4096-wide fully-connected layer. classifier.5
# (dropout) sits between them but is the identity in eval mode.
EMBEDDING_LAYER = "classifier.4"


class WeightsError(RuntimeError):
    """Pretrained weights missing, unreadable, or shaped wrong."""


def resolve_device(name: str) -> torch.device:
    if name == "cpu":
        return torch.device("cpu")
    if name == "accelerator":
        if torch.cuda.is_available():
            return torch.device("cuda")
        mps = getattr(torch.backends, "mps", None)
        if mps is not None and mps.is_available():
            return torch.device("mps")
        raise WeightsError("device 'accelerator' requested but no GPU backend is available")
    raise ValueError(f"unknown device {name!r}; expected 'cpu' or 'accelerator'")


def load_feature_extractor(weights_path: str | Path,
                           device: str = "cpu") -> torch.nn.Module:
    """Load a full VGG-19 state dict, drop the last classifier layer.

    The returned module is in eval mode with gradients disabled; calling
    it on a (batch, 3, 224, 224) input yields (batch, 4096) activations.
    """
    model = vgg19(weights=None)
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except (OSError, RuntimeError, ValueError, EOFError,
            pickle.UnpicklingError, zipfile.BadZipFile) as exc:
        raise WeightsError(f"cannot load weights from {weights_path}: {exc}") from exc
    model.classifier = model.classifier[:-1]
    model.eval()
    model.to(resolve_device(device))
    for param in model.parameters():
        param.requires_grad_(False)
    return model
