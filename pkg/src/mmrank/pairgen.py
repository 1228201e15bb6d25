"""Mining implicit preference pairs and the pairwise classification transform.

A relevant listing paired with an immediately adjacent ignored listing is
an implicit preference in the context of the session's query. Each
preference becomes one signed-difference training instance: a fair coin
decides whether it is emitted as (preferred - ignored, +1) or
(ignored - preferred, -1), yielding a balanced two-class dataset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import derive_rng
from .corpus import Session, relevance_of, DEFAULT_DWELL_THRESHOLD
from .embedding import Embedder, MultimodalVector, SparseVector

__all__ = [
    "PreferencePair",
    "PairwiseInstance",
    "mine_preference_pairs",
    "make_instances",
    "instance_from_pair",
    "sparse_dense_diff",
    "save_pairs",
    "load_pairs",
]


@dataclass(frozen=True)
class PreferencePair:
    query: str
    preferred: str
    ignored: str
    session_ts: int

    def __post_init__(self):
        if self.preferred == self.ignored:
            raise ValueError("a preference pair needs two distinct listings")


@dataclass(frozen=True)
class PairwiseInstance:
    """Signed difference vector with a +/-1 label.

    Layout mirrors MultimodalVector: a sparse block over the text columns
    and an optional dense block. For label +1 the vector is preferred
    minus ignored; for -1 it is the negation.
    """

    query: str
    y: int
    sparse: SparseVector
    dense: np.ndarray | None

    def __post_init__(self):
        if self.y not in (-1, 1):
            raise ValueError(f"label must be +1 or -1, got {self.y}")


def mine_preference_pairs(sessions: list[Session],
                          dwell_threshold: float = DEFAULT_DWELL_THRESHOLD
                          ) -> list[PreferencePair]:
    """Emit one pair per (relevant listing, adjacent ignored listing) event.

    Adjacent means presented positions differing by exactly one. A
    relevant listing flanked by two non-relevant neighbours yields two
    pairs; sessions with no relevant or no adjacent non-relevant listing
    contribute nothing.
    """
    pairs: list[PreferencePair] = []
    for session in sessions:
        rels = [relevance_of(inter, dwell_threshold) for _, inter in session.presented]
        ids = [lid for lid, _ in session.presented]
        for i, rel in enumerate(rels):
            if rel != 1.0:
                continue
            for j in (i - 1, i + 1):
                if 0 <= j < len(ids) and rels[j] == 0.0:
                    pairs.append(PreferencePair(
                        query=session.query,
                        preferred=ids[i],
                        ignored=ids[j],
                        session_ts=session.timestamp,
                    ))
    return pairs


def sparse_dense_diff(a: MultimodalVector, b: MultimodalVector
                      ) -> tuple[SparseVector, np.ndarray | None]:
    """Blockwise a - b: merged sparse difference (exact zeros elided) and
    elementwise dense difference."""
    if a.modality is not b.modality:
        raise ValueError(f"modality mismatch: {a.modality} vs {b.modality}")
    if a.text.dim != b.text.dim:
        raise ValueError(f"sparse dimension mismatch: {a.text.dim} vs {b.text.dim}")
    ai, av = a.text.indices, a.text.values
    bi, bv = b.text.indices, b.text.values
    out: list[tuple[int, float]] = []
    p, q = 0, 0
    while p < len(ai) and q < len(bi):
        if ai[p] < bi[q]:
            out.append((ai[p], av[p]))
            p += 1
        elif ai[p] > bi[q]:
            out.append((bi[q], -bv[q]))
            q += 1
        else:
            d = av[p] - bv[q]
            if d != 0.0:
                out.append((ai[p], d))
            p += 1
            q += 1
    out.extend((ai[k], av[k]) for k in range(p, len(ai)))
    out.extend((bi[k], -bv[k]) for k in range(q, len(bi)))
    sparse = SparseVector(dim=a.text.dim,
                          indices=tuple(i for i, _ in out),
                          values=tuple(v for _, v in out))
    if (a.image is None) != (b.image is None):
        raise ValueError("dense block present on only one side")
    if a.image is None:
        return sparse, None
    if len(a.image) != len(b.image):
        raise ValueError(f"dense dimension mismatch: {len(a.image)} vs {len(b.image)}")
    return sparse, a.image - b.image


def instance_from_pair(pair: PreferencePair, preferred: MultimodalVector,
                       ignored: MultimodalVector, y: int) -> PairwiseInstance:
    """Deterministic instance for a given label; the coin flip lives in
    make_instances."""
    if y == 1:
        sparse, dense = sparse_dense_diff(preferred, ignored)
    else:
        sparse, dense = sparse_dense_diff(ignored, preferred)
    return PairwiseInstance(query=pair.query, y=y, sparse=sparse, dense=dense)


def make_instances(pairs: list[PreferencePair], embedder: Embedder,
                   rng_seed: int) -> tuple[list[PairwiseInstance], int]:
    """Transform pairs into labelled instances; returns (instances, n_dropped).

    Pairs whose listings cannot be embedded in the embedder's modality are
    dropped and counted. Each query group draws its coin flips from its
    own generator seeded by (rng_seed, query), so output is identical
    regardless of how query groups are scheduled.
    """
    rngs: dict[str, np.random.Generator] = {}
    instances: list[PairwiseInstance] = []
    dropped = 0
    for pair in pairs:
        rng = rngs.get(pair.query)
        if rng is None:
            rng = rngs[pair.query] = derive_rng(rng_seed, "pairs", pair.query)
        preferred = embedder.try_embed(pair.preferred)
        ignored = embedder.try_embed(pair.ignored)
        r = rng.random()
        if preferred is None or ignored is None:
            dropped += 1
            continue
        y = 1 if r > 0.5 else -1
        instances.append(instance_from_pair(pair, preferred, ignored, y))
    return instances, dropped


def save_pairs(pairs: list[PreferencePair], path: str | Path) -> None:
    """One JSON object per line, in mining order."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({"query": pair.query, "preferred": pair.preferred,
                                 "ignored": pair.ignored, "ts": pair.session_ts},
                                sort_keys=True))
            fh.write("\n")


def load_pairs(path: str | Path) -> list[PreferencePair]:
    pairs: list[PreferencePair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(PreferencePair(query=obj["query"],
                                            preferred=obj["preferred"],
                                            ignored=obj["ignored"],
                                            session_ts=int(obj["ts"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad pair record: {exc}") from exc
    return pairs
