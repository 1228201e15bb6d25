"""End-to-end experiment orchestration.

Given a catalog, optional image embeddings, and train/validation/test
session logs, this module mines preference pairs, trains one model per
(query, modality, grid point), tunes hyperparameters on validation NDCG,
picks a modality per query, evaluates on test sessions, and reduces
everything into a single JSON-serializable report.

Training jobs are independent work items keyed by (query, modality,
grid index); results are reduced by key in sorted order, so the report
is deterministic no matter how jobs would be scheduled. The default
executor runs them serially.

Reports are canonicalized (sorted keys, no timestamps), so a rerun with
the same config and inputs produces a byte-identical file.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from ._rng import derive_seed
from .corpus import (
    Catalog,
    Session,
    load_catalog,
    load_sessions,
    relevance_of,
    DEFAULT_DWELL_THRESHOLD,
)
from .embedding import (
    Embedder,
    EmbeddingStore,
    Modality,
    MultimodalVector,
    Vocabulary,
    build_vocabulary,
    field_terms,
    load_embedding_store,
)
from .metrics import ZeroIdealError, macro_average, ndcg, paired_comparison
from .pairgen import PreferencePair, make_instances, mine_preference_pairs
from .ranksvm import QueryModel, TrainConfig, rank, train_sgd

__all__ = [
    "ExperimentConfig",
    "QueryDecision",
    "run_experiment",
    "select_from_tuning",
    "evaluate_assignments",
    "continuum_report",
    "disentangle_report",
    "save_report",
    "canonical_json",
    "config_hash",
    "file_digest",
    "write_manifest",
    "MODALITY_ORDER",
]

# Tie-break preference, simplest representation first.
MODALITY_ORDER = ("text", "image", "multimodal")

DEFAULT_PERCENTILES = (90, 80, 70, 60, 50)


@dataclass(frozen=True)
class ExperimentConfig:
    catalog_path: str
    train_sessions_path: str
    validation_sessions_path: str
    test_sessions_path: str
    embeddings_path: str | None = None
    modalities: tuple[str, ...] = MODALITY_ORDER
    learning_rates: tuple[float, ...] = (0.1, 0.01)
    lr_decays: tuple[float, ...] = (1e-4,)
    lambda1s: tuple[float, ...] = (0.0, 1e-6, 1e-5)
    lambda2s: tuple[float, ...] = (1e-6, 1e-4)
    epochs: int = 5
    min_pairs_per_query: int = 50
    dwell_threshold: float = DEFAULT_DWELL_THRESHOLD
    min_term_count: int = 1
    seed: int = 0

    def __post_init__(self):
        unknown = [m for m in self.modalities if m not in MODALITY_ORDER]
        if unknown:
            raise ValueError(f"unknown modalities: {unknown}")
        if not self.modalities:
            raise ValueError("at least one modality is required")
        ordered = tuple(m for m in MODALITY_ORDER if m in set(self.modalities))
        object.__setattr__(self, "modalities", ordered)
        for name in ("learning_rates", "lr_decays", "lambda1s", "lambda2s"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.min_pairs_per_query < 1:
            raise ValueError("min_pairs_per_query must be >= 1")
        needs_store = any(m != "text" for m in self.modalities)
        if needs_store and self.embeddings_path is None:
            raise ValueError("image/multimodal modalities need embeddings_path")

    def grid_points(self) -> list[tuple[float, float, float, float]]:
        """Tuning order; validation ties keep the earliest point."""
        return list(itertools.product(self.learning_rates, self.lr_decays,
                                      self.lambda1s, self.lambda2s))

    def to_dict(self) -> dict:
        return {
            "catalog_path": self.catalog_path,
            "train_sessions_path": self.train_sessions_path,
            "validation_sessions_path": self.validation_sessions_path,
            "test_sessions_path": self.test_sessions_path,
            "embeddings_path": self.embeddings_path,
            "modalities": list(self.modalities),
            "learning_rates": list(self.learning_rates),
            "lr_decays": list(self.lr_decays),
            "lambda1s": list(self.lambda1s),
            "lambda2s": list(self.lambda2s),
            "epochs": self.epochs,
            "min_pairs_per_query": self.min_pairs_per_query,
            "dwell_threshold": self.dwell_threshold,
            "min_term_count": self.min_term_count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        for name in ("modalities", "learning_rates", "lr_decays",
                     "lambda1s", "lambda2s"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


@dataclass(frozen=True)
class QueryDecision:
    query: str
    chosen_modality: Modality
    validation_ndcg: dict[str, float | None]
    chosen_config: TrainConfig
    test_ndcg: float | None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    digest = hashlib.sha256(canonical_json(config.to_dict()).encode("utf-8"))
    return f"sha256:{digest.hexdigest()}"


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes())
    return f"sha256:{digest.hexdigest()}"


def write_manifest(path: str | Path, command: str, config: dict,
                   inputs: list[str | Path], outputs: list[str | Path]) -> None:
    """Provenance record for one CLI run: what ran, on which bytes."""
    manifest = {
        "command": command,
        "config": config,
        "config_hash": "sha256:" + hashlib.sha256(
            canonical_json(config).encode("utf-8")).hexdigest(),
        "seed": config.get("seed"),
        "inputs": {str(p): file_digest(p) for p in sorted(map(str, inputs))},
        "outputs": {str(p): file_digest(p) for p in sorted(map(str, outputs))},
    }
    Path(path).write_text(canonical_json(manifest), encoding="utf-8")


# --- evaluation plumbing -----------------------------------------------------


class _DocCache:
    """Embeds each listing at most once per modality."""

    def __init__(self, embedder: Embedder):
        self._embedder = embedder
        self._cache: dict[str, MultimodalVector | None] = {}

    def get(self, listing_id: str) -> MultimodalVector | None:
        if listing_id not in self._cache:
            self._cache[listing_id] = self._embedder.try_embed(listing_id)
        return self._cache[listing_id]


@dataclass
class _EvalPage:
    docs: list[tuple[str, MultimodalVector]]
    relevance: dict[str, float]


@dataclass
class _EvalSet:
    """One query's scorable pages for one split and modality."""

    pages: list[_EvalPage] = field(default_factory=list)
    n_skipped: int = 0


def _prepare_eval_set(sessions: list[Session], cache: _DocCache,
                      dwell_threshold: float) -> _EvalSet:
    """Embed pages up front; drop pages that cannot be scored.

    A page is dropped when a listing cannot be embedded in this modality
    or when no presented listing is relevant (NDCG undefined); drops are
    counted, never silent.
    """
    out = _EvalSet()
    for session in sessions:
        docs: list[tuple[str, MultimodalVector]] = []
        relevance: dict[str, float] = {}
        ok = bool(session.presented)
        for lid, interaction in session.presented:
            vec = cache.get(lid)
            if vec is None:
                ok = False
                break
            docs.append((lid, vec))
            relevance[lid] = relevance_of(interaction, dwell_threshold)
        if not ok or not any(relevance.values()):
            out.n_skipped += 1
            continue
        out.pages.append(_EvalPage(docs=docs, relevance=relevance))
    return out


def _mean_ndcg(model: QueryModel, eval_set: _EvalSet) -> float | None:
    if not eval_set.pages:
        return None
    total = 0.0
    for page in eval_set.pages:
        ranked = rank(model, page.docs)
        rels = [page.relevance[lid] for lid, _ in ranked]
        try:
            total += ndcg(rels)
        except ZeroIdealError:  # pages were pre-filtered; defensive only
            raise RuntimeError("unscorable page slipped through preparation")
    return total / len(eval_set.pages)


# --- the experiment ----------------------------------------------------------


def _group_by_query(sessions: list[Session]) -> dict[str, list[Session]]:
    groups: dict[str, list[Session]] = {}
    for s in sessions:
        groups.setdefault(s.query, []).append(s)
    return groups


def run_experiment(config: ExperimentConfig
                   ) -> tuple[dict, list[QueryDecision]]:
    """Train, tune, select, and evaluate; returns (report, decisions).

    The report is a plain JSON-ready dict. Reruns with identical config
    and input bytes produce an identical report.
    """
    catalog = load_catalog(config.catalog_path)
    if not catalog.listings:
        raise ValueError(f"catalog {config.catalog_path} is empty")
    store: EmbeddingStore | None = None
    if config.embeddings_path is not None:
        store = load_embedding_store(config.embeddings_path)
    vocab = build_vocabulary(catalog, config.min_term_count)

    train_sessions = load_sessions(config.train_sessions_path)
    val_by_query = _group_by_query(load_sessions(config.validation_sessions_path))
    test_by_query = _group_by_query(load_sessions(config.test_sessions_path))

    pairs = mine_preference_pairs(train_sessions, config.dwell_threshold)
    pairs_by_query: dict[str, list[PreferencePair]] = {}
    for pair in pairs:
        pairs_by_query.setdefault(pair.query, []).append(pair)

    queries = sorted({s.query for s in train_sessions})
    eligible: list[str] = []
    skipped: list[dict] = []
    for query in queries:
        n_pairs = len(pairs_by_query.get(query, []))
        if n_pairs < config.min_pairs_per_query:
            skipped.append({"query": query, "n_pairs": n_pairs,
                            "reason": f"fewer than {config.min_pairs_per_query} "
                                      f"preference pairs"})
        elif not val_by_query.get(query):
            skipped.append({"query": query, "n_pairs": n_pairs,
                            "reason": "no validation sessions"})
        elif not test_by_query.get(query):
            skipped.append({"query": query, "n_pairs": n_pairs,
                            "reason": "no test sessions"})
        else:
            eligible.append(query)
    if not eligible:
        raise ValueError("no query meets the eligibility requirements "
                         f"({len(queries)} seen, all skipped)")

    grid = config.grid_points()
    # Best models per (query, modality): (validation ndcg, model).
    best: dict[tuple[str, str], tuple[float, QueryModel]] = {}
    val_sets: dict[tuple[str, str], _EvalSet] = {}
    test_sets: dict[tuple[str, str], _EvalSet] = {}
    dropped_instances: dict[str, int] = {}
    untrainable: dict[str, list[str]] = {}

    for modality_name in config.modalities:
        modality = Modality(modality_name)
        embedder = Embedder(catalog=catalog, vocab=vocab, store=store,
                            modality=modality)
        cache = _DocCache(embedder)
        n_dropped = 0
        for query in eligible:
            val_sets[(query, modality_name)] = _prepare_eval_set(
                val_by_query[query], cache, config.dwell_threshold)
            test_sets[(query, modality_name)] = _prepare_eval_set(
                test_by_query[query], cache, config.dwell_threshold)
            instances, dropped = make_instances(pairs_by_query[query], embedder,
                                                config.seed)
            n_dropped += dropped
            if not instances or not val_sets[(query, modality_name)].pages:
                untrainable.setdefault(query, []).append(modality_name)
                continue
            train_seed = derive_seed(config.seed, "train", query)
            for eta0, lr_decay, lam1, lam2 in grid:
                train_config = TrainConfig(learning_rate=eta0, lr_decay=lr_decay,
                                           lambda1=lam1, lambda2=lam2,
                                           epochs=config.epochs, seed=train_seed)
                model = train_sgd(instances, train_config)
                score = _mean_ndcg(model, val_sets[(query, modality_name)])
                key = (query, modality_name)
                if key not in best or score > best[key][0]:
                    best[key] = (score, model)
        dropped_instances[modality_name] = n_dropped

    decisions: list[QueryDecision] = []
    undecidable: list[dict] = []
    for query in eligible:
        val_ndcg: dict[str, float | None] = {}
        for modality_name in config.modalities:
            entry = best.get((query, modality_name))
            val_ndcg[modality_name] = entry[0] if entry else None
        candidates = [m for m in config.modalities if val_ndcg[m] is not None]
        if not candidates:
            undecidable.append({"query": query,
                                "reason": "no modality could be trained",
                                "n_pairs": len(pairs_by_query[query])})
            continue
        chosen = max(candidates, key=lambda m: val_ndcg[m])  # order breaks ties
        chosen_model = best[(query, chosen)][1]
        test_ndcg = _mean_ndcg(chosen_model, test_sets[(query, chosen)])
        decisions.append(QueryDecision(
            query=query,
            chosen_modality=Modality(chosen),
            validation_ndcg=val_ndcg,
            chosen_config=chosen_model.train_config,
            test_ndcg=test_ndcg,
        ))
    if not decisions:
        raise ValueError("no query produced a trainable model in any modality")
    skipped.extend(undecidable)

    # Forced-modality and selected per-query score tables.
    forced_val: dict[str, dict[str, float]] = {m: {} for m in config.modalities}
    forced_test: dict[str, dict[str, float]] = {m: {} for m in config.modalities}
    for (query, modality_name), (val_score, model) in best.items():
        forced_val[modality_name][query] = val_score
        test_score = _mean_ndcg(model, test_sets[(query, modality_name)])
        if test_score is not None:
            forced_test[modality_name][query] = test_score
    selected_val = {d.query: d.validation_ndcg[d.chosen_modality.value]
                    for d in decisions}
    selected_test = {d.query: d.test_ndcg for d in decisions
                     if d.test_ndcg is not None}

    def summarize(per_query: dict[str, float]) -> float | None:
        if not per_query:
            return None
        _, overall = macro_average({q: [v] for q, v in per_query.items()})
        return overall

    modality_means = {
        m: {"validation": summarize(forced_val[m]), "test": summarize(forced_test[m])}
        for m in config.modalities
    }
    selected_means = {"validation": summarize(selected_val),
                      "test": summarize(selected_test)}

    comparisons: dict[str, dict] = {}
    if "text" in config.modalities:
        baselines = forced_test["text"]
        rivals = {f"{m}_vs_text": forced_test[m]
                  for m in config.modalities if m != "text"}
        rivals["selected_vs_text"] = selected_test
        for name, scores in rivals.items():
            shared = sorted(set(scores) & set(baselines))
            if len(shared) < 2:
                continue
            result = paired_comparison({q: scores[q] for q in shared},
                                       {q: baselines[q] for q in shared})
            comparisons[name] = {
                "n_queries": result.n_queries,
                "mean": result.mean_a,
                "baseline_mean": result.mean_b,
                "relative_lift": result.lift,
                "wilcoxon_statistic": result.statistic,
                "p_value": result.p_value,
                "method": result.method,
                "note": result.note,
            }

    preference_fraction = None
    if "multimodal" in config.modalities:
        preferring = sum(1 for d in decisions
                         if d.chosen_modality is Modality.MULTIMODAL)
        preference_fraction = preferring / len(decisions)

    tuning: dict[str, dict] = {}
    for (query, modality_name), (val_score, model) in best.items():
        cfg = model.train_config
        tuning.setdefault(query, {})[modality_name] = {
            "validation_ndcg": val_score,
            "hyperparameters": {
                "learning_rate": cfg.learning_rate,
                "lr_decay": cfg.lr_decay,
                "lambda1": cfg.lambda1,
                "lambda2": cfg.lambda2,
                "epochs": cfg.epochs,
            },
        }

    report = {
        "report_version": 1,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "n_queries_seen": len(queries),
        "n_queries_eligible": len(eligible),
        "n_preference_pairs": len(pairs),
        "dropped_instances": dropped_instances,
        "skipped_queries": sorted(skipped, key=lambda r: r["query"]),
        "decisions": [
            {
                "query": d.query,
                "chosen_modality": d.chosen_modality.value,
                "validation_ndcg": d.validation_ndcg,
                "chosen_hyperparameters": {
                    "learning_rate": d.chosen_config.learning_rate,
                    "lr_decay": d.chosen_config.lr_decay,
                    "lambda1": d.chosen_config.lambda1,
                    "lambda2": d.chosen_config.lambda2,
                    "epochs": d.chosen_config.epochs,
                },
                "test_ndcg": d.test_ndcg,
            }
            for d in decisions
        ],
        "modality_means": modality_means,
        "selected_means": selected_means,
        "tuning": tuning,
        "per_query_test_ndcg": {m: dict(sorted(forced_test[m].items()))
                                for m in config.modalities},
        "comparisons": comparisons,
        "multimodal_preference_fraction": preference_fraction,
        "evaluation_skips": {
            "validation": {m: sum(val_sets[(q, m)].n_skipped for q in eligible
                                  if (q, m) in val_sets)
                           for m in config.modalities},
            "test": {m: sum(test_sets[(q, m)].n_skipped for q in eligible
                            if (q, m) in test_sets)
                     for m in config.modalities},
        },
    }
    return report, decisions


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(canonical_json(report), encoding="utf-8")


def select_from_tuning(tuning: dict) -> list[dict]:
    """Pick the best modality per query from a tuning table.

    Input shape: {query: {modality: {"validation_ndcg", "hyperparameters"}}}
    (the report's "tuning" section). Ties keep the earlier modality in
    MODALITY_ORDER, so text wins any draw.
    """
    rows: list[dict] = []
    for query in sorted(tuning):
        entries = tuning[query]
        ordered = [m for m in MODALITY_ORDER if m in entries]
        if not ordered:
            continue
        chosen = max(ordered, key=lambda m: entries[m]["validation_ndcg"])
        rows.append({
            "query": query,
            "chosen_modality": chosen,
            "validation_ndcg": entries[chosen]["validation_ndcg"],
            "hyperparameters": dict(entries[chosen]["hyperparameters"]),
        })
    if not rows:
        raise ValueError("tuning table is empty")
    return rows


def evaluate_assignments(config: ExperimentConfig, assignments: list[dict]) -> dict:
    """Retrain each query's chosen model and score it on test sessions.

    Training is deterministic given (config, assignment), so this
    reproduces exactly the models a full run would have selected; no
    model files need to be shipped between stages.
    """
    catalog = load_catalog(config.catalog_path)
    store = (load_embedding_store(config.embeddings_path)
             if config.embeddings_path is not None else None)
    vocab = build_vocabulary(catalog, config.min_term_count)
    train_sessions = load_sessions(config.train_sessions_path)
    test_by_query = _group_by_query(load_sessions(config.test_sessions_path))
    pairs_by_query: dict[str, list[PreferencePair]] = {}
    for pair in mine_preference_pairs(train_sessions, config.dwell_threshold):
        pairs_by_query.setdefault(pair.query, []).append(pair)

    caches: dict[str, _DocCache] = {}
    per_query: dict[str, dict] = {}
    n_skipped = 0
    for row in assignments:
        query = row["query"]
        modality_name = row["chosen_modality"]
        if modality_name not in MODALITY_ORDER:
            raise ValueError(f"unknown modality {modality_name!r} for {query!r}")
        pairs = pairs_by_query.get(query)
        if not pairs:
            raise ValueError(f"no preference pairs for query {query!r}")
        if not test_by_query.get(query):
            raise ValueError(f"no test sessions for query {query!r}")
        if modality_name not in caches:
            embedder = Embedder(catalog=catalog, vocab=vocab, store=store,
                                modality=Modality(modality_name))
            caches[modality_name] = _DocCache(embedder)
        cache = caches[modality_name]
        instances, _ = make_instances(pairs, cache._embedder, config.seed)
        if not instances:
            raise ValueError(f"no trainable instances for query {query!r} "
                             f"in modality {modality_name}")
        hp = row["hyperparameters"]
        train_config = TrainConfig(
            learning_rate=hp["learning_rate"], lr_decay=hp["lr_decay"],
            lambda1=hp["lambda1"], lambda2=hp["lambda2"],
            epochs=int(hp.get("epochs", config.epochs)),
            seed=derive_seed(config.seed, "train", query))
        model = train_sgd(instances, train_config)
        eval_set = _prepare_eval_set(test_by_query[query], cache,
                                     config.dwell_threshold)
        n_skipped += eval_set.n_skipped
        per_query[query] = {"modality": modality_name,
                            "test_ndcg": _mean_ndcg(model, eval_set)}

    scored = {q: r["test_ndcg"] for q, r in per_query.items()
              if r["test_ndcg"] is not None}
    mean = (sum(scored.values()) / len(scored)) if scored else None
    return {"per_query": dict(sorted(per_query.items())),
            "mean_test_ndcg": mean,
            "skipped_sessions": n_skipped}


# --- inspection reports ------------------------------------------------------


def continuum_report(model: QueryModel, sessions: list[Session],
                     embedder: Embedder,
                     percentiles: tuple[int, ...] = DEFAULT_PERCENTILES) -> dict:
    """Percentile-banded view of the model's ranking of a query's listings.

    The ranked pool is the union of listings presented in the given
    sessions for the model's query. A percentile p marks the 1-based rank
    ceil(n * (100 - p) / 100); each band runs from its boundary to just
    before the next one, the last band to the end of the list.
    """
    wanted = sorted({float(p) for p in percentiles}, reverse=True)
    if not wanted:
        raise ValueError("at least one percentile is required")
    if any(not 0.0 < p <= 100.0 for p in wanted):
        raise ValueError("percentiles must lie in (0, 100]")
    relevant_sessions = [s for s in sessions if s.query == model.query]
    if not relevant_sessions:
        raise ValueError(f"no sessions for query {model.query!r}")
    pool = sorted({lid for s in relevant_sessions for lid, _ in s.presented})
    if not pool:
        raise ValueError("sessions contain no listings to rank")

    docs: list[tuple[str, MultimodalVector]] = []
    n_unembeddable = 0
    for lid in pool:
        vec = embedder.try_embed(lid)
        if vec is None:
            n_unembeddable += 1
        else:
            docs.append((lid, vec))
    if not docs:
        raise ValueError("no listing in the sessions could be embedded")
    ranked = rank(model, docs)
    n = len(ranked)

    # The tiny offset keeps float noise from pushing an exact boundary up a rank.
    starts = [max(1, math.ceil(n * (100.0 - p) / 100.0 - 1e-9)) for p in wanted]
    bands = []
    collapsed = False
    for i, (p, start) in enumerate(zip(wanted, starts)):
        end = (starts[i + 1] - 1) if i + 1 < len(starts) else n
        listings = []
        if start > end:
            collapsed = True
        else:
            for lid, score in ranked[start - 1:end]:
                listing = embedder.catalog.listings[lid]
                listings.append({"listing_id": lid, "score": score,
                                 "image_ref": listing.image_ref})
        bands.append({"percentile": p, "start_rank": start, "listings": listings})
    if collapsed:
        warnings.warn("fewer listings than percentile bands; some bands are empty",
                      stacklevel=2)
    return {"query": model.query, "n_listings": n,
            "n_unembeddable": n_unembeddable, "bands": bands}


def disentangle_report(model_a: QueryModel, model_b: QueryModel,
                       embedder_a: Embedder, embedder_b: Embedder,
                       doc_ids: list[str], k: int = 3,
                       max_rows: int = 50) -> dict:
    """Find listings one model conflates and the other separates.

    For every doc pair sharing at least k title terms, reports the
    absolute rank difference under each model, sorted so pairs ranked
    close together by model A but far apart by model B come first.
    Quadratic in the doc count; keep the doc set page-scale.
    """
    if model_a.query != model_b.query:
        raise ValueError("models rank different queries: "
                         f"{model_a.query!r} vs {model_b.query!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = sorted(set(doc_ids))
    docs_a = []
    docs_b = []
    skipped = 0
    for lid in ids:
        va = embedder_a.try_embed(lid)
        vb = embedder_b.try_embed(lid)
        if va is None or vb is None:
            skipped += 1
            continue
        docs_a.append((lid, va))
        docs_b.append((lid, vb))
    if len(docs_a) < 2:
        raise ValueError("need at least two embeddable docs to compare")
    pos_a = {lid: i + 1 for i, (lid, _) in enumerate(rank(model_a, docs_a))}
    pos_b = {lid: i + 1 for i, (lid, _) in enumerate(rank(model_b, docs_b))}

    catalog = embedder_a.catalog
    terms = {lid: set(field_terms(catalog.listings[lid].title))
             for lid, _ in docs_a}
    rows = []
    kept = [lid for lid, _ in docs_a]
    for i, lid_a in enumerate(kept):
        for lid_b in kept[i + 1:]:
            shared = len(terms[lid_a] & terms[lid_b])
            if shared < k:
                continue
            rows.append({
                "listing_a": lid_a,
                "listing_b": lid_b,
                "shared_title_terms": shared,
                "rank_delta_a": abs(pos_a[lid_a] - pos_a[lid_b]),
                "rank_delta_b": abs(pos_b[lid_a] - pos_b[lid_b]),
            })
    rows.sort(key=lambda r: (r["rank_delta_a"], -r["rank_delta_b"],
                             r["listing_a"], r["listing_b"]))
    return {"query": model_a.query, "k": k, "n_docs": len(kept),
            "n_unembeddable": skipped, "n_pairs_considered": len(rows),
            "rows": rows[:max_rows]}
