"""Fixed-feature image embeddings from a 19-layer VGG network.

Images are resized so the shorter side is 256, center-cropped to 224,
normalized with the network's training statistics, and pushed through
VGG-19 with the final classifier layer removed. The 4096-dimensional
post-ReLU activations are written raw (unnormalized) to an embedding
store file keyed by image basename; downstream consumers own the L2
normalization step.
"""
from vggfeat.extract import ExtractJob, ExtractResult, extract, run_extraction
from vggfeat.model import (
    EMBEDDING_DIM,
    EMBEDDING_LAYER,
    WeightsError,
    load_feature_extractor,
    resolve_device,
)
from vggfeat.preprocess import DecodeError, load_rgb, preprocess_image
from vggfeat.store import write_store

__all__ = [
    "DecodeError",
    "EMBEDDING_DIM",
    "EMBEDDING_LAYER",
    "ExtractJob",
    "ExtractResult",
    "WeightsError",
    "extract",
    "load_feature_extractor",
    "load_rgb",
    "preprocess_image",
    "resolve_device",
    "run_extraction",
    "write_store",
]
