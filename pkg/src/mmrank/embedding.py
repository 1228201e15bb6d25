"""Modality representations of listings: sparse text, dense image, and both.

The text block is a binary bag-of-words over title/tag unigrams and
bigrams plus one column per listing id and one per shop id; the three
index ranges are disjoint and contiguous. The image block is an
L2-normalized dense vector looked up from an embedding store. The
multimodal representation concatenates the two blocks.
"""
from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Catalog, Listing

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

EMBED_MAGIC = b"MMEB"


class EmbeddingError(ValueError):
    """Base class for embedding failures."""


class ZeroVectorError(EmbeddingError):
    pass


class MissingEmbeddingError(EmbeddingError):
    def __init__(self, image_ref: str | None, listing_id: str | None = None):
        where = f" (listing {listing_id!r})" if listing_id else ""
        super().__init__(f"no stored embedding for image_ref {image_ref!r}{where}")
        self.image_ref = image_ref


class DimensionMismatchError(EmbeddingError):
    def __init__(self, key: str, expected: int, got: int):
        super().__init__(f"embedding {key!r} has dimension {got}, expected {expected}")
        self.key = key


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    MULTIMODAL = "multimodal"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs (underscore included)."""
    return _TOKEN_RE.findall(text.lower())


def field_terms(text: str) -> list[str]:
    """Unigrams plus adjacent bigrams within one field."""
    toks = tokenize(text)
    return toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]


def listing_terms(listing: Listing) -> set[str]:
    """Term set of a listing; bigrams never span the title/tag boundaries."""
    terms: set[str] = set()
    for fld in (listing.title, *listing.tags):
        terms.update(field_terms(fld))
    return terms


@dataclass(frozen=True)
class SparseVector:
    """Sorted sparse vector with strictly increasing indices and nonzero values."""

    dim: int
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise EmbeddingError("indices/values length mismatch")
        prev = -1
        for idx, val in zip(self.indices, self.values):
            if idx <= prev or idx >= self.dim:
                raise EmbeddingError(f"index {idx} out of order or out of range [0,{self.dim})")
            if val == 0.0:
                raise EmbeddingError(f"explicit zero at index {idx}")
            prev = idx

    @classmethod
    def from_pairs(cls, dim: int, pairs: dict[int, float] | list[tuple[int, float]]) -> "SparseVector":
        items = sorted(pairs.items() if isinstance(pairs, dict) else pairs)
        items = [(i, v) for i, v in items if v != 0.0]
        return cls(dim=dim,
                   indices=tuple(i for i, _ in items),
                   values=tuple(float(v) for _, v in items))

    @classmethod
    def empty(cls, dim: int = 0) -> "SparseVector":
        return cls(dim=dim, indices=(), values=())

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self.indices, self.values))

    def dot(self, weights: dict[int, float]) -> float:
        total = 0.0
        for idx, val in zip(self.indices, self.values):
            w = weights.get(idx)
            if w is not None:
                total += w * val
        return total


@dataclass(frozen=True)
class Vocabulary:
    """Disjoint, contiguous column blocks: terms, then listing ids, then shop ids."""

    terms: tuple[str, ...]
    listing_ids: tuple[str, ...]
    shop_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "term_index",
                           {t: i for i, t in enumerate(self.terms)})
        base = len(self.terms)
        object.__setattr__(self, "listing_index",
                           {lid: base + i for i, lid in enumerate(self.listing_ids)})
        base += len(self.listing_ids)
        object.__setattr__(self, "shop_index",
                           {sid: base + i for i, sid in enumerate(self.shop_ids)})

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def total_dim(self) -> int:
        return len(self.terms) + len(self.listing_ids) + len(self.shop_ids)

    def save(self, path: str | Path) -> None:
        import json
        obj = {"terms": list(self.terms),
               "listing_ids": list(self.listing_ids),
               "shop_ids": list(self.shop_ids)}
        Path(path).write_text(json.dumps(obj), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        import json
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(terms=tuple(obj["terms"]),
                   listing_ids=tuple(obj["listing_ids"]),
                   shop_ids=tuple(obj["shop_ids"]))


@dataclass(frozen=True)
class MultimodalVector:
    """A listing embedded in one of the three modality spaces.

    ``text`` is empty (dim 0) for the image modality; ``image`` is None
    for the text modality and already L2-normalized when present.
    """

    modality: Modality
    text: SparseVector
    image: np.ndarray | None

    @property
    def logical_dim(self) -> int:
        return self.text.dim + (len(self.image) if self.image is not None else 0)


@dataclass
class EmbeddingStore:
    """Raw (pre-normalization) dense vectors keyed by image_ref."""

    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vectors)

    def add(self, key: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(key, self.dim, int(vector.size))
        if not np.all(np.isfinite(vector)):
            raise EmbeddingError(f"non-finite embedding for {key!r}")
        self.vectors[key] = vector


def build_vocabulary(catalog: Catalog, min_term_count: int = 1) -> Vocabulary:
    """Index terms occurring in at least min_term_count listings, plus all ids.

    Ordering is lexicographic within each block so the layout is
    reproducible across runs.
    """
    if not catalog.listings:
        raise EmbeddingError("cannot build a vocabulary from an empty catalog")
    doc_freq: dict[str, int] = {}
    shop_ids: set[str] = set()
    for listing in catalog.listings.values():
        shop_ids.add(listing.shop_id)
        for term in listing_terms(listing):
            doc_freq[term] = doc_freq.get(term, 0) + 1
    terms = tuple(sorted(t for t, c in doc_freq.items() if c >= min_term_count))
    return Vocabulary(
        terms=terms,
        listing_ids=tuple(sorted(catalog.listings)),
        shop_ids=tuple(sorted(shop_ids)),
    )


def embed_text(listing: Listing, vocab: Vocabulary) -> SparseVector:
    """Binary BoW over in-vocabulary terms plus the listing and shop id columns.

    Out-of-vocabulary terms are dropped silently; unknown listing/shop ids
    are skipped with a warning so holdout documents still embed.
    """
    active: list[int] = []
    term_index = vocab.term_index
    for term in listing_terms(listing):
        col = term_index.get(term)
        if col is not None:
            active.append(col)
    lid_col = vocab.listing_index.get(listing.listing_id)
    if lid_col is None:
        logger.warning("listing id %r not in vocabulary; id feature skipped",
                       listing.listing_id)
    else:
        active.append(lid_col)
    sid_col = vocab.shop_index.get(listing.shop_id)
    if sid_col is None:
        logger.warning("shop id %r not in vocabulary; id feature skipped",
                       listing.shop_id)
    else:
        active.append(sid_col)
    active.sort()
    return SparseVector(dim=vocab.total_dim,
                        indices=tuple(active),
                        values=(1.0,) * len(active))


def normalize_l2(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    # Rescale by the largest magnitude first so the squared sum cannot
    # underflow (subnormal inputs) or overflow (huge activations).
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if scale == 0.0:
        raise ZeroVectorError("cannot L2-normalize an all-zero vector")
    u = v / scale
    return u / float(np.linalg.norm(u))


def embed_multimodal(listing: Listing, vocab: Vocabulary,
                     store: EmbeddingStore | None,
                     modality: Modality) -> MultimodalVector:
    """Embed one listing in the requested modality space."""
    if modality is Modality.TEXT:
        return MultimodalVector(modality=modality,
                                text=embed_text(listing, vocab),
                                image=None)
    if store is None:
        raise MissingEmbeddingError(listing.image_ref, listing.listing_id)
    ref = listing.image_ref
    if ref is None or ref not in store.vectors:
        raise MissingEmbeddingError(ref, listing.listing_id)
    image = normalize_l2(store.vectors[ref])
    if modality is Modality.IMAGE:
        return MultimodalVector(modality=modality,
                                text=SparseVector.empty(),
                                image=image)
    return MultimodalVector(modality=modality,
                            text=embed_text(listing, vocab),
                            image=image)


@dataclass(frozen=True)
class Embedder:
    """Bundles the context needed to embed catalog listings by id."""

    catalog: Catalog
    vocab: Vocabulary
    store: EmbeddingStore | None
    modality: Modality

    def embed(self, listing_id: str) -> MultimodalVector:
        listing = self.catalog.listings.get(listing_id)
        if listing is None:
            raise KeyError(f"listing {listing_id!r} not in catalog")
        return embed_multimodal(listing, self.vocab, self.store, self.modality)

    def try_embed(self, listing_id: str) -> MultimodalVector | None:
        try:
            return self.embed(listing_id)
        except (KeyError, MissingEmbeddingError):
            return None


# --- embedding store file formats -------------------------------------------
#
# Text:   header line "dim=<N>", then "<image_ref> <f1> ... <fN>" per line.
# Binary: magic "MMEB", little-endian u32 dim, then per record a u32 key
#         byte length, the UTF-8 key, and N little-endian float32 values.
# Loaders auto-detect by the magic bytes.

def load_embedding_store(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
    if magic == EMBED_MAGIC:
        return _load_store_binary(path)
    return _load_store_text(path)


def _load_store_text(path: Path) -> EmbeddingStore:
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        m = re.fullmatch(r"dim=(\d+)", header)
        if not m:
            raise EmbeddingError(f"{path}:1: expected 'dim=<N>' header, got {header!r}")
        store = EmbeddingStore(dim=int(m.group(1)))
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ")
            key, raw_values = parts[0], parts[1:]
            if len(raw_values) != store.dim:
                raise DimensionMismatchError(key, store.dim, len(raw_values))
            try:
                vec = np.array([float(x) for x in raw_values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{line_no}: bad float ({exc})") from None
            store.add(key, vec)
    return store


def _load_store_binary(path: Path) -> EmbeddingStore:
    data = path.read_bytes()
    if data[:4] != EMBED_MAGIC:
        raise EmbeddingError(f"{path}: missing {EMBED_MAGIC!r} magic")
    (dim,) = struct.unpack_from("<I", data, 4)
    store = EmbeddingStore(dim=dim)
    offset = 8
    rec_bytes = 4 * dim
    while offset < len(data):
        if offset + 4 > len(data):
            raise EmbeddingError(f"{path}: truncated record header at byte {offset}")
        (key_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + key_len + rec_bytes > len(data):
            raise EmbeddingError(f"{path}: truncated record at byte {offset}")
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += rec_bytes
        store.add(key, vec)
    return store


def save_embedding_store(store: EmbeddingStore, path: str | Path,
                         binary: bool = False) -> None:
    path = Path(path)
    if binary:
        with path.open("wb") as fh:
            fh.write(EMBED_MAGIC)
            fh.write(struct.pack("<I", store.dim))
            for key, vec in store.vectors.items():
                encoded = key.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
        return
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"dim={store.dim}\n")
        for key, vec in store.vectors.items():
            if " " in key or "\n" in key:
                raise EmbeddingError(f"key {key!r} not representable in the text format")
            fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")
