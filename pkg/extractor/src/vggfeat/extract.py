"""Batch feature extraction jobs."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from vggfeat.model import EMBEDDING_DIM, load_feature_extractor, resolve_device
from vggfeat.preprocess import DecodeError, preprocess_image
from vggfeat.store import write_store

log = logging.getLogger(__name__)

VALID_DEVICES = ("cpu", "accelerator")


@dataclass(frozen=True)
class ExtractJob:
    """A batch of image files to embed into one output store.

    Vectors are keyed by basename, so basenames must be unique across the
    job. Unreadable paths are a configuration error caught here; files
    that exist but fail to decode are skipped during extraction instead.
    """

    image_paths: tuple[Path, ...]
    output_path: Path
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        object.__setattr__(self, "image_paths",
                           tuple(Path(p) for p in self.image_paths))
        object.__setattr__(self, "output_path", Path(self.output_path))
        if not self.image_paths:
            raise ValueError("job needs at least one image path")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.device not in VALID_DEVICES:
            raise ValueError(f"unknown device {self.device!r}; expected one of {VALID_DEVICES}")
        unreadable = [str(p) for p in self.image_paths
                      if not (p.is_file() and os.access(p, os.R_OK))]
        if unreadable:
            raise ValueError(f"unreadable image paths: {', '.join(unreadable)}")
        seen: dict[str, Path] = {}
        for p in self.image_paths:
            other = seen.get(p.name)
            if other is not None:
                raise ValueError(
                    f"duplicate output key {p.name!r} from {other} and {p}")
            seen[p.name] = p


@dataclass
class ExtractResult:
    n_written: int = 0
    keys: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)


def run_extraction(job: ExtractJob, model: torch.nn.Module, *,
                   text: bool = False) -> ExtractResult:
    """Embed every decodable image in the job and write the store.

    Per-image failures (undecodable files, degenerate all-zero activation
    vectors) are logged and skipped; the store is still written with the
    successes, in input order.
    """
    device = resolve_device(job.device)
    result = ExtractResult()
    items: list[tuple[str, np.ndarray]] = []
    for start in range(0, len(job.image_paths), job.batch_size):
        batch_paths = job.image_paths[start:start + job.batch_size]
        tensors, kept = [], []
        for path in batch_paths:
            try:
                tensors.append(preprocess_image(path))
            except DecodeError as exc:
                log.error("skipping %s: %s", path, exc.reason)
                result.failures.append((str(path), exc.reason))
                continue
            kept.append(path)
        if not tensors:
            continue
        with torch.inference_mode():
            activations = model(torch.stack(tensors).to(device)).cpu().numpy()
        for path, vec in zip(kept, activations):
            if not vec.any():
                log.error("skipping %s: all-zero activation vector", path)
                result.failures.append((str(path), "all-zero activation vector"))
                continue
            items.append((path.name, vec.astype("<f4")))
    write_store(job.output_path, EMBEDDING_DIM, items, text=text)
    result.n_written = len(items)
    result.keys = [key for key, _ in items]
    return result


def extract(job: ExtractJob, weights_path: str | Path, *,
            text: bool = False) -> ExtractResult:
    """Load weights, run the job, write the embedding file."""
    model = load_feature_extractor(weights_path, job.device)
    return run_extraction(job, model, text=text)
