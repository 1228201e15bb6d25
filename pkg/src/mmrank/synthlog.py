"""Synthetic catalog and search-log generator.

Builds a controllable world where each query has a set of truly relevant
listings and two kinds of irrelevant ones: "ambiguous" listings whose
titles copy the query's high-signal phrase (so text features cannot tell
them apart from relevant ones) and "clean" listings with a distinct
phrase. Dense image vectors are drawn from two class-conditional
Gaussians whose means sit `image_signal` apart along a random unit
direction per query, so images carry exactly the class information the
ambiguous titles hide.

Logged sessions follow a position-biased examination model with
adjacent-pair randomization: each page is split into adjacent pairs
(random odd/even phase), each pair independently swapped with
probability 0.5, and each pair is examined together with the probability
attached to its upper position. Because the within-pair order is an
independent fair coin, preferences mined from those pairs carry no
presentation bias; `presentation_bias_check` measures this on generated
logs.

Evaluation sessions are generated separately: pages drawn from a held
out listing pool, fully examined and never shuffled, so their implicit
labels coincide with ground truth and scored rankings are comparable
across models. Held-out pages keep models from coasting on memorized
listing-id weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._rng import derive_rng
from .corpus import (
    Catalog,
    Interaction,
    InteractionKind,
    Listing,
    Session,
)
from .embedding import EmbeddingStore

__all__ = [
    "WorldSpec",
    "GroundTruth",
    "World",
    "PageTrace",
    "BiasCheck",
    "generate_world",
    "split_listings",
    "fairpairs_shuffle",
    "fairpairs_trace",
    "FairPairsTrace",
    "generate_sessions",
    "generate_session_traces",
    "generate_eval_sessions",
    "presentation_bias_check",
    "save_ground_truth",
    "load_ground_truth",
]

_TAG_BANK = ("handmade", "vintage", "custom", "gift", "classic", "modern")
_CLICK_DWELL_SECONDS = 45.0
_TIMESTAMP_BASE = 1_700_000_000
_TIMESTAMP_STEP = 60
_MAX_PAGE_REDRAWS = 1000


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of the generated world; everything is derived from `seed`."""

    n_queries: int
    n_listings_per_query: int
    n_sessions_per_query: int
    text_ambiguity: float
    image_signal: float
    seed: int
    position_bias: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)
    image_dim: int = 16
    rel_fraction: float = 0.25
    holdout_fraction: float = 0.25

    def __post_init__(self):
        for name in ("n_queries", "n_listings_per_query", "n_sessions_per_query"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_sessions_per_query < 2:
            raise ValueError("n_sessions_per_query must be >= 2 so evaluation "
                             "splits are non-empty")
        if not 0.0 <= self.text_ambiguity <= 1.0:
            raise ValueError("text_ambiguity must lie in [0, 1]")
        if self.image_signal < 0.0:
            raise ValueError("image_signal must be >= 0")
        if self.image_dim < 1:
            raise ValueError("image_dim must be >= 1")
        if not 0.0 < self.rel_fraction < 1.0:
            raise ValueError("rel_fraction must lie strictly between 0 and 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie strictly between 0 and 1")
        bias = tuple(float(b) for b in self.position_bias)
        object.__setattr__(self, "position_bias", bias)
        if len(bias) < 2:
            raise ValueError("position_bias needs at least two positions")
        if any(not 0.0 <= b <= 1.0 for b in bias):
            raise ValueError("examination probabilities must lie in [0, 1]")
        if any(b2 > b1 for b1, b2 in zip(bias, bias[1:])):
            raise ValueError("position_bias must be non-increasing")

    @property
    def page_size(self) -> int:
        return len(self.position_bias)

    @property
    def n_eval_sessions_per_query(self) -> int:
        return self.n_sessions_per_query // 2


@dataclass(frozen=True)
class GroundTruth:
    """Audit-only truth labels; never written into session logs."""

    true_relevance: dict[tuple[str, str], int]

    def queries(self) -> list[str]:
        return sorted({q for q, _ in self.true_relevance})

    def listings_for(self, query: str) -> list[str]:
        return sorted(lid for q, lid in self.true_relevance if q == query)

    def is_relevant(self, query: str, listing_id: str) -> bool:
        return self.true_relevance[(query, listing_id)] == 1


class World(NamedTuple):
    catalog: Catalog
    store: EmbeddingStore
    truth: GroundTruth


def _query_phrases(query_index: int, n_queries: int) -> tuple[str, str]:
    """Signal and noise two-word phrases, disjoint across roles and queries."""
    a = 2 * query_index
    b = 2 * (n_queries + query_index)
    return f"kw{a} kw{a + 1}", f"kw{b} kw{b + 1}"


def query_string(query_index: int, n_queries: int) -> str:
    """The user's query is the phrase that relevant listings are about."""
    return _query_phrases(query_index, n_queries)[0]


def generate_world(spec: WorldSpec) -> World:
    """Create the catalog, raw dense vectors, and truth labels.

    Per query: a rel_fraction of listings are relevant and titled with the
    query's signal phrase; of the irrelevant rest, a text_ambiguity
    fraction copies that same phrase and the remainder uses the noise
    phrase. Listing-id digits are permuted within the query so the
    lexicographic id order carries no class information. Dense vectors
    are stored raw; normalization happens at embedding time.
    """
    catalog = Catalog(source_meta={"generator": "synthetic", "seed": str(spec.seed)})
    store = EmbeddingStore(dim=spec.image_dim)
    truth: dict[tuple[str, str], int] = {}
    n = spec.n_listings_per_query
    n_rel = max(1, round(spec.rel_fraction * n))
    n_irrel = n - n_rel
    if n_irrel < 1:
        raise ValueError("rel_fraction leaves no irrelevant listings")
    n_ambiguous = round(spec.text_ambiguity * n_irrel)
    n_shops = max(4, n // 10)

    for qi in range(spec.n_queries):
        rng = derive_rng(spec.seed, "world", qi)
        query = query_string(qi, spec.n_queries)
        signal, noise = _query_phrases(qi, spec.n_queries)

        direction = rng.normal(size=spec.image_dim)
        while not np.linalg.norm(direction) > 0:
            direction = rng.normal(size=spec.image_dim)
        direction /= np.linalg.norm(direction)
        offset = (spec.image_signal / 2.0) * direction

        id_numbers = rng.permutation(n)
        for j in range(n):
            relevant = j < n_rel
            ambiguous = (not relevant) and (j < n_rel + n_ambiguous)
            listing_id = f"q{qi:02d}-l{id_numbers[j]:03d}"
            shop_id = f"s{int(rng.integers(n_shops)):03d}"
            title = signal if (relevant or ambiguous) else noise
            n_tags = 1 + int(rng.integers(2))
            tag_picks = sorted(rng.permutation(len(_TAG_BANK))[:n_tags])
            tags = tuple(_TAG_BANK[t] for t in tag_picks)
            image_ref = f"{listing_id}.jpg"
            mean = offset if relevant else -offset
            store.add(image_ref, mean + rng.normal(size=spec.image_dim))
            catalog.add(Listing(listing_id=listing_id, shop_id=shop_id,
                                title=title, tags=tags, image_ref=image_ref))
            truth[(query, listing_id)] = 1 if relevant else 0

    return World(catalog=catalog, store=store, truth=GroundTruth(truth))


def split_listings(spec: WorldSpec, truth: GroundTruth, query: str
                   ) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Deterministic (train_pool, holdout_pool) for one query.

    Stratified by truth label so both pools contain both classes;
    recomputable anywhere from (spec, truth) without extra state.
    """
    rng = derive_rng(spec.seed, "split", query)
    ids = truth.listings_for(query)
    if not ids:
        raise ValueError(f"unknown query {query!r}")
    train: list[str] = []
    holdout: list[str] = []
    for label in (1, 0):
        group = [lid for lid in ids if truth.true_relevance[(query, lid)] == label]
        if len(group) < 2:
            raise ValueError(f"query {query!r} needs at least two listings with "
                             f"label {label} to split")
        n_hold = min(len(group) - 1, max(1, round(spec.holdout_fraction * len(group))))
        order = rng.permutation(len(group))
        holdout.extend(group[i] for i in order[:n_hold])
        train.extend(group[i] for i in order[n_hold:])
    return tuple(sorted(train)), tuple(sorted(holdout))


@dataclass(frozen=True)
class FairPairsTrace:
    order: tuple[str, ...]
    phase: int
    blocks: tuple[tuple[int, int], ...]
    swapped: tuple[bool, ...]


def fairpairs_trace(results: list[str], rng: np.random.Generator) -> FairPairsTrace:
    """Adjacent-pair randomization with full bookkeeping.

    A coin chooses the pairing phase (pairs start at index 0 or 1), then
    each adjacent pair is independently swapped with probability 1/2.
    Items at unpaired edge positions never move.
    """
    items = list(results)
    n = len(items)
    if n < 2:
        return FairPairsTrace(order=tuple(items), phase=0, blocks=(), swapped=())
    phase = int(rng.integers(2))
    blocks: list[tuple[int, int]] = []
    swapped: list[bool] = []
    for i in range(phase, n - 1, 2):
        do_swap = bool(rng.random() < 0.5)
        if do_swap:
            items[i], items[i + 1] = items[i + 1], items[i]
        blocks.append((i, i + 1))
        swapped.append(do_swap)
    return FairPairsTrace(order=tuple(items), phase=phase,
                          blocks=tuple(blocks), swapped=tuple(swapped))


def fairpairs_shuffle(results: list[str], rng: np.random.Generator) -> list[str]:
    return list(fairpairs_trace(results, rng).order)


@dataclass(frozen=True)
class PageTrace:
    """One simulated session plus the randomization facts a bias audit
    needs (which adjacent pairs were the randomized ones)."""

    session: Session
    phase: int
    blocks: tuple[tuple[int, int], ...]


def _interact(rng: np.random.Generator) -> Interaction:
    kind = (InteractionKind.PURCHASED, InteractionKind.CARTED,
            InteractionKind.CLICKED)[int(rng.integers(3))]
    dwell = _CLICK_DWELL_SECONDS if kind is InteractionKind.CLICKED else 0.0
    return Interaction(kind=kind, dwell_seconds=dwell)


_IGNORED = Interaction(kind=InteractionKind.IGNORED, dwell_seconds=0.0)


def _simulate_logged_page(rng: np.random.Generator, query: str,
                          pool: tuple[str, ...], truth: GroundTruth,
                          spec: WorldSpec, timestamp: int) -> PageTrace:
    picks = rng.choice(len(pool), size=spec.page_size, replace=False)
    page = [pool[i] for i in picks]
    trace = fairpairs_trace(page, rng)
    order = trace.order
    n = len(order)

    # One examination draw per randomized pair, at the upper position's
    # probability; edge positions outside any pair draw on their own.
    examined = [False] * n
    in_block: dict[int, int] = {}
    for top, bottom in trace.blocks:
        in_block[top] = top
        in_block[bottom] = top
    for p in range(n):
        top = in_block.get(p)
        if top is None:
            examined[p] = bool(rng.random() < spec.position_bias[p])
        elif top == p:
            shared = bool(rng.random() < spec.position_bias[p])
            examined[p] = shared
            examined[p + 1] = shared

    presented = []
    for p, lid in enumerate(order):
        if examined[p] and truth.is_relevant(query, lid):
            presented.append((lid, _interact(rng)))
        else:
            presented.append((lid, _IGNORED))
    session = Session(query=query, presented=tuple(presented),
                      timestamp=timestamp, fairpairs_flag=True)
    return PageTrace(session=session, phase=trace.phase, blocks=trace.blocks)


def generate_session_traces(world: World, spec: WorldSpec) -> list[PageTrace]:
    """The logged training sessions, with randomization bookkeeping."""
    truth = world.truth
    traces: list[PageTrace] = []
    timestamp = _TIMESTAMP_BASE
    for query in truth.queries():
        train_pool, _ = split_listings(spec, truth, query)
        if len(train_pool) < spec.page_size:
            raise ValueError(f"query {query!r}: training pool smaller than a page")
        rng = derive_rng(spec.seed, "sessions", "train", query)
        for _ in range(spec.n_sessions_per_query):
            traces.append(_simulate_logged_page(rng, query, train_pool, truth,
                                                spec, timestamp))
            timestamp += _TIMESTAMP_STEP
    return traces


def generate_sessions(world: World, spec: WorldSpec) -> list[Session]:
    return [t.session for t in generate_session_traces(world, spec)]


def generate_eval_sessions(world: World, spec: WorldSpec, purpose: str
                           ) -> list[Session]:
    """Held-out pages with truth-faithful labels for validation or test.

    Pages come from the holdout pool, are redrawn until they contain at
    least one relevant listing (otherwise NDCG is undefined), and every
    relevant listing is interacted with: evaluation measures ranking
    quality, not examination luck.
    """
    if purpose not in ("validation", "test"):
        raise ValueError(f"purpose must be 'validation' or 'test', got {purpose!r}")
    truth = world.truth
    sessions: list[Session] = []
    timestamp = _TIMESTAMP_BASE + 10_000_000 * (1 if purpose == "validation" else 2)
    for query in truth.queries():
        _, holdout_pool = split_listings(spec, truth, query)
        if len(holdout_pool) < spec.page_size:
            raise ValueError(f"query {query!r}: holdout pool smaller than a page")
        relevant_pool = [lid for lid in holdout_pool if truth.is_relevant(query, lid)]
        if not relevant_pool:
            raise ValueError(f"query {query!r}: holdout pool has no relevant listing")
        rng = derive_rng(spec.seed, "sessions", purpose, query)
        for _ in range(spec.n_eval_sessions_per_query):
            for _attempt in range(_MAX_PAGE_REDRAWS):
                picks = rng.choice(len(holdout_pool), size=spec.page_size,
                                   replace=False)
                page = [holdout_pool[i] for i in picks]
                if any(truth.is_relevant(query, lid) for lid in page):
                    break
            else:
                raise RuntimeError(f"query {query!r}: could not draw a page with "
                                   f"a relevant listing")
            presented = tuple(
                (lid, _interact(rng) if truth.is_relevant(query, lid) else _IGNORED)
                for lid in page)
            sessions.append(Session(query=query, presented=presented,
                                    timestamp=timestamp, fairpairs_flag=False))
            timestamp += _TIMESTAMP_STEP
    return sessions


@dataclass(frozen=True)
class BiasCheck:
    """Interaction rates of the relevant item in mixed randomized pairs,
    split by whether it was shown in the pair's upper or lower slot."""

    n_upper: int
    n_lower: int
    rate_upper: float
    rate_lower: float
    z: float

    @property
    def difference(self) -> float:
        return self.rate_upper - self.rate_lower


def presentation_bias_check(traces: list[PageTrace], truth: GroundTruth) -> BiasCheck:
    """Measure residual presentation bias over randomized adjacent pairs.

    Looks at every randomized pair holding one relevant and one
    irrelevant listing and compares how often the relevant one was
    interacted with when placed upper vs lower. Under unbiased
    randomization the two rates agree up to sampling noise; z is the
    two-proportion z-score of their difference.
    """
    counts = {True: [0, 0], False: [0, 0]}
    for trace in traces:
        presented = trace.session.presented
        query = trace.session.query
        for top, bottom in trace.blocks:
            lid_top, act_top = presented[top]
            lid_bottom, act_bottom = presented[bottom]
            rel_top = truth.is_relevant(query, lid_top)
            rel_bottom = truth.is_relevant(query, lid_bottom)
            if rel_top == rel_bottom:
                continue
            upper = rel_top
            act = act_top if rel_top else act_bottom
            counts[upper][0] += 1
            counts[upper][1] += int(act.kind is not InteractionKind.IGNORED)
    n_upper, hits_upper = counts[True]
    n_lower, hits_lower = counts[False]
    if n_upper == 0 or n_lower == 0:
        raise ValueError("no mixed randomized pairs found in the traces")
    rate_upper = hits_upper / n_upper
    rate_lower = hits_lower / n_lower
    pooled = (hits_upper + hits_lower) / (n_upper + n_lower)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_upper + 1.0 / n_lower))
    z = 0.0 if se == 0.0 else (rate_upper - rate_lower) / se
    return BiasCheck(n_upper=n_upper, n_lower=n_lower, rate_upper=rate_upper,
                     rate_lower=rate_lower, z=z)


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    nested: dict[str, dict[str, int]] = {}
    for (query, lid), label in truth.true_relevance.items():
        nested.setdefault(query, {})[lid] = label
    Path(path).write_text(json.dumps(nested, sort_keys=True, indent=0) + "\n",
                          encoding="utf-8")


def load_ground_truth(path: str | Path) -> GroundTruth:
    nested = json.loads(Path(path).read_text(encoding="utf-8"))
    flat = {(query, lid): int(label)
            for query, labels in nested.items()
            for lid, label in labels.items()}
    return GroundTruth(true_relevance=flat)
