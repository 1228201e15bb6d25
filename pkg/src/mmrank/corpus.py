"""Canonical data model and ingestion for listings, queries, and search sessions.

File formats:
  * Catalog: UTF-8 TSV with a required header line
    ``listing_id<TAB>shop_id<TAB>title<TAB>tags<TAB>image_ref``; tags are
    comma-joined; image_ref may be empty.
  * Sessions: UTF-8 JSON lines, one object per session:
    ``{"query": str, "ts": int, "fairpairs": bool,
       "results": [{"listing": str, "kind": str, "dwell": number}]}``
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

CATALOG_HEADER = ("listing_id", "shop_id", "title", "tags", "image_ref")

DEFAULT_DWELL_THRESHOLD = 30.0

_WS_RE = re.compile(r"\s+")


class CorpusError(ValueError):
    """Base class for catalog/session ingestion failures."""


class ParseError(CorpusError):
    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DuplicateIdError(CorpusError):
    def __init__(self, offender: str, context: str):
        super().__init__(f"duplicate id {offender!r} in {context}")
        self.offender = offender


def normalize_query(query: str) -> str:
    """Lowercase and collapse whitespace; queries are exact-match model keys."""
    return _WS_RE.sub(" ", query.strip().lower())


class InteractionKind(str, Enum):
    IGNORED = "ignored"
    CLICKED = "clicked"
    CARTED = "carted"
    PURCHASED = "purchased"


@dataclass(frozen=True)
class Interaction:
    """A user's response to one presented listing."""

    kind: InteractionKind
    dwell_seconds: float = 0.0

    def __post_init__(self):
        if self.dwell_seconds < 0:
            raise CorpusError(f"negative dwell {self.dwell_seconds}")
        if self.kind is InteractionKind.IGNORED and self.dwell_seconds != 0:
            raise CorpusError("ignored interaction must have zero dwell")


@dataclass(frozen=True)
class Listing:
    """One catalog document: text fields plus an optional image key."""

    listing_id: str
    shop_id: str
    title: str
    tags: tuple[str, ...]
    image_ref: str | None = None


@dataclass(frozen=True)
class Session:
    """One presented result page with per-position implicit feedback.

    ``presented`` preserves the order shown to the user (position 1 first)
    and never repeats a listing id.
    """

    query: str
    presented: tuple[tuple[str, Interaction], ...]
    timestamp: int
    fairpairs_flag: bool = False

    def __post_init__(self):
        seen: set[str] = set()
        for listing_id, _ in self.presented:
            if listing_id in seen:
                raise DuplicateIdError(listing_id, "session")
            seen.add(listing_id)


@dataclass
class Catalog:
    listings: dict[str, Listing] = field(default_factory=dict)
    source_meta: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.listings)

    def add(self, listing: Listing) -> None:
        if listing.listing_id in self.listings:
            raise DuplicateIdError(listing.listing_id, "catalog")
        self.listings[listing.listing_id] = listing


def relevance_of(interaction: Interaction,
                 dwell_threshold: float = DEFAULT_DWELL_THRESHOLD) -> float:
    """Binary implicit relevance: purchase, cart, or click with a long dwell.

    The dwell comparison is strict: a click dwelling exactly at the
    threshold is not relevant.
    """
    if dwell_threshold <= 0:
        raise ValueError("dwell_threshold must be positive")
    if interaction.kind in (InteractionKind.PURCHASED, InteractionKind.CARTED):
        return 1.0
    if interaction.kind is InteractionKind.CLICKED:
        return 1.0 if interaction.dwell_seconds > dwell_threshold else 0.0
    return 0.0


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    catalog = Catalog(source_meta={"path": str(path)})
    # Rows are delimited by plain newlines only; splitlines() would also
    # split on exotic boundary characters that are legal inside fields.
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        logger.warning("catalog file %s is empty", path)
        return catalog
    header = tuple(lines[0].split("\t"))
    if header != CATALOG_HEADER:
        raise ParseError(path, 1, f"bad header {header!r}, expected {CATALOG_HEADER!r}")
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ParseError(path, line_no, f"expected 5 tab-separated fields, got {len(fields)}")
        listing_id, shop_id, title, tags_joined, image_ref = fields
        if not listing_id:
            raise ParseError(path, line_no, "empty listing_id")
        tags = tuple(t for t in tags_joined.split(",") if t)
        listing = Listing(
            listing_id=listing_id,
            shop_id=shop_id,
            title=title,
            tags=tags,
            image_ref=image_ref or None,
        )
        try:
            catalog.add(listing)
        except DuplicateIdError:
            raise DuplicateIdError(listing_id, f"catalog ({path}:{line_no})") from None
    if not catalog.listings:
        logger.warning("catalog file %s has a header but no rows", path)
    return catalog


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    """Inverse of load_catalog; loading the output reproduces the catalog."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(CATALOG_HEADER) + "\n")
        for listing in catalog.listings.values():
            for value in (listing.listing_id, listing.shop_id, listing.title,
                          listing.image_ref or ""):
                if "\t" in value or "\n" in value or "\r" in value:
                    raise CorpusError(f"field {value!r} contains a separator character")
            for tag in listing.tags:
                if not tag:
                    raise CorpusError(
                        f"listing {listing.listing_id!r} has an empty tag")
                if any(c in tag for c in ",\t\n\r"):
                    raise CorpusError(f"tag {tag!r} contains a separator character")
            fh.write("\t".join((
                listing.listing_id,
                listing.shop_id,
                listing.title,
                ",".join(listing.tags),
                listing.image_ref or "",
            )) + "\n")


def _parse_session(obj: dict, path: Path, line_no: int) -> Session:
    try:
        query = normalize_query(obj["query"])
        ts = int(obj["ts"])
        fairpairs = bool(obj.get("fairpairs", False))
        raw_results = obj["results"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, line_no, f"malformed session object: {exc}") from None
    presented: list[tuple[str, Interaction]] = []
    for entry in raw_results:
        kind_raw = entry.get("kind")
        try:
            kind = InteractionKind(kind_raw)
        except ValueError:
            raise ParseError(path, line_no, f"unknown interaction kind {kind_raw!r}") from None
        try:
            interaction = Interaction(kind=kind, dwell_seconds=float(entry.get("dwell", 0.0)))
        except CorpusError as exc:
            raise ParseError(path, line_no, str(exc)) from None
        presented.append((str(entry["listing"]), interaction))
    try:
        return Session(query=query, presented=tuple(presented),
                       timestamp=ts, fairpairs_flag=fairpairs)
    except DuplicateIdError as exc:
        raise ParseError(path, line_no, f"duplicate listing {exc.offender!r} in session") from None


def load_sessions(path: str | Path) -> list[Session]:
    path = Path(path)
    sessions: list[Session] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc}") from None
            sessions.append(_parse_session(obj, path, line_no))
    return sessions


def save_sessions(sessions: list[Session], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for session in sessions:
            obj = {
                "query": session.query,
                "ts": session.timestamp,
                "fairpairs": session.fairpairs_flag,
                "results": [
                    {"listing": lid, "kind": inter.kind.value, "dwell": inter.dwell_seconds}
                    for lid, inter in session.presented
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
