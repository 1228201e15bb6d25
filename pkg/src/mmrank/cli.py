"""Command-line entry points.

Every subcommand writes its outputs plus a manifest recording the
command, its configuration hash, the seed, and SHA-256 digests of all
input and output files, so any artifact can be traced back to the exact
bytes that produced it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ._rng import derive_seed
from .corpus import (
    CorpusError,
    load_catalog,
    load_sessions,
    save_catalog,
    save_sessions,
)
from .embedding import (
    Embedder,
    EmbeddingError,
    Modality,
    Vocabulary,
    build_vocabulary,
    load_embedding_store,
    save_embedding_store,
)
from .pairgen import load_pairs, make_instances, mine_preference_pairs, save_pairs
from .pipeline import (
    DEFAULT_PERCENTILES,
    ExperimentConfig,
    continuum_report,
    disentangle_report,
    evaluate_assignments,
    run_experiment,
    save_report,
    canonical_json,
    select_from_tuning,
    write_manifest,
)
from .ranksvm import TrainConfig, load_model, train_sgd, save_model
from .synthlog import (
    WorldSpec,
    generate_eval_sessions,
    generate_sessions,
    generate_world,
    save_ground_truth,
)

log = logging.getLogger("mmrank")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}")


def _write_json(obj: dict, path: Path) -> None:
    path.write_text(canonical_json(obj), encoding="utf-8")


# --- experiment config loading ----------------------------------------------

_CONFIG_FLAGS = {
    "catalog": "catalog_path",
    "train_sessions": "train_sessions_path",
    "validation_sessions": "validation_sessions_path",
    "test_sessions": "test_sessions_path",
    "embeddings": "embeddings_path",
    "epochs": "epochs",
    "min_pairs_per_query": "min_pairs_per_query",
    "dwell_threshold": "dwell_threshold",
    "min_term_count": "min_term_count",
    "seed": "seed",
}


def _add_experiment_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config; flags override")
    parser.add_argument("--catalog")
    parser.add_argument("--train-sessions")
    parser.add_argument("--validation-sessions")
    parser.add_argument("--test-sessions")
    parser.add_argument("--embeddings")
    parser.add_argument("--modalities",
                        help="comma-separated subset of text,image,multimodal")
    parser.add_argument("--learning-rates", type=_floats)
    parser.add_argument("--lr-decays", type=_floats)
    parser.add_argument("--lambda1s", type=_floats)
    parser.add_argument("--lambda2s", type=_floats)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--min-pairs-per-query", type=int)
    parser.add_argument("--dwell-threshold", type=float)
    parser.add_argument("--min-term-count", type=int)
    parser.add_argument("--seed", type=int)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for flag, key in _CONFIG_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    if args.modalities is not None:
        base["modalities"] = [m.strip() for m in args.modalities.split(",")
                              if m.strip()]
    for flag in ("learning_rates", "lr_decays", "lambda1s", "lambda2s"):
        value = getattr(args, flag)
        if value is not None:
            base[flag] = list(value)
    missing = [k for k in ("catalog_path", "train_sessions_path",
                           "validation_sessions_path", "test_sessions_path")
               if k not in base]
    if missing:
        raise SystemExit(f"missing required config fields: {', '.join(missing)} "
                         f"(set them in --config or via flags)")
    return ExperimentConfig.from_dict(base)


def _experiment_inputs(config: ExperimentConfig) -> list[str]:
    inputs = [config.catalog_path, config.train_sessions_path,
              config.validation_sessions_path, config.test_sessions_path]
    if config.embeddings_path is not None:
        inputs.append(config.embeddings_path)
    return inputs


# --- subcommand handlers -----------------------------------------------------


def _cmd_gen_world(args: argparse.Namespace) -> int:
    spec = WorldSpec(
        n_queries=args.queries,
        n_listings_per_query=args.listings_per_query,
        n_sessions_per_query=args.sessions_per_query,
        text_ambiguity=args.text_ambiguity,
        image_signal=args.image_signal,
        seed=args.seed,
        position_bias=args.position_bias,
        image_dim=args.image_dim,
        rel_fraction=args.rel_fraction,
        holdout_fraction=args.holdout_fraction,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(spec)
    paths = {
        "catalog": out / "catalog.tsv",
        "embeddings": out / "embeddings.mmeb",
        "truth": out / "truth.json",
        "train": out / "sessions_train.jsonl",
        "validation": out / "sessions_validation.jsonl",
        "test": out / "sessions_test.jsonl",
    }
    save_catalog(world.catalog, paths["catalog"])
    save_embedding_store(world.store, paths["embeddings"], binary=True)
    save_ground_truth(world.truth, paths["truth"])
    save_sessions(generate_sessions(world, spec), paths["train"])
    save_sessions(generate_eval_sessions(world, spec, "validation"),
                  paths["validation"])
    save_sessions(generate_eval_sessions(world, spec, "test"), paths["test"])
    spec_dict = {
        "n_queries": spec.n_queries,
        "n_listings_per_query": spec.n_listings_per_query,
        "n_sessions_per_query": spec.n_sessions_per_query,
        "text_ambiguity": spec.text_ambiguity,
        "image_signal": spec.image_signal,
        "seed": spec.seed,
        "position_bias": list(spec.position_bias),
        "image_dim": spec.image_dim,
        "rel_fraction": spec.rel_fraction,
        "holdout_fraction": spec.holdout_fraction,
    }
    write_manifest(out / "manifest.json", "gen-world", spec_dict,
                   inputs=[], outputs=list(paths.values()))
    log.info("world written to %s (%d listings, %d sessions)", out,
             len(world.catalog), spec.n_queries * spec.n_sessions_per_query * 2)
    return 0


def _cmd_build_vocab(args: argparse.Namespace) -> int:
    catalog = load_catalog(args.catalog)
    vocab = build_vocabulary(catalog, args.min_term_count)
    vocab.save(args.out)
    write_manifest(f"{args.out}.manifest.json", "build-vocab",
                   {"min_term_count": args.min_term_count, "seed": None},
                   inputs=[args.catalog], outputs=[args.out])
    log.info("vocabulary: %d terms, %d total columns", vocab.n_terms,
             vocab.total_dim)
    return 0


def _cmd_gen_pairs(args: argparse.Namespace) -> int:
    sessions = load_sessions(args.sessions)
    pairs = mine_preference_pairs(sessions, args.dwell_threshold)
    save_pairs(pairs, args.out)
    write_manifest(f"{args.out}.manifest.json", "gen-pairs",
                   {"dwell_threshold": args.dwell_threshold, "seed": None},
                   inputs=[args.sessions], outputs=[args.out])
    log.info("mined %d pairs from %d sessions", len(pairs), len(sessions))
    return 0


def _make_embedder(catalog_path: str, vocab_path: str,
                   embeddings_path: str | None, modality: Modality) -> Embedder:
    catalog = load_catalog(catalog_path)
    vocab = Vocabulary.load(vocab_path)
    store = (load_embedding_store(embeddings_path)
             if embeddings_path is not None else None)
    return Embedder(catalog=catalog, vocab=vocab, store=store, modality=modality)


def _cmd_train(args: argparse.Namespace) -> int:
    modality = Modality(args.modality)
    embedder = _make_embedder(args.catalog, args.vocab, args.embeddings, modality)
    pairs = [p for p in load_pairs(args.pairs) if p.query == args.query]
    if not pairs:
        raise SystemExit(f"no pairs for query {args.query!r} in {args.pairs}")
    instances, dropped = make_instances(pairs, embedder, args.seed)
    if dropped:
        log.warning("dropped %d unembeddable pairs", dropped)
    if not instances:
        raise SystemExit(f"no trainable instances for query {args.query!r}")
    config = TrainConfig(learning_rate=args.learning_rate, lr_decay=args.lr_decay,
                         lambda1=args.lambda1, lambda2=args.lambda2,
                         epochs=args.epochs,
                         seed=derive_seed(args.seed, "train", args.query))
    model = train_sgd(instances, config)
    save_model(model, args.out)
    inputs = [args.catalog, args.vocab, args.pairs]
    if args.embeddings:
        inputs.append(args.embeddings)
    write_manifest(f"{args.out}.manifest.json", "train",
                   {"query": args.query, "modality": args.modality,
                    "learning_rate": args.learning_rate, "lr_decay": args.lr_decay,
                    "lambda1": args.lambda1, "lambda2": args.lambda2,
                    "epochs": args.epochs, "seed": args.seed},
                   inputs=inputs, outputs=[args.out])
    log.info("trained on %d instances; final objective %.6g",
             model.train_stats.n_instances, model.train_stats.final_objective)
    return 0


def _cmd_tune(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    report, _ = run_experiment(config)
    _write_json({"config": config.to_dict(), "tuning": report["tuning"]},
                Path(args.out))
    write_manifest(f"{args.out}.manifest.json", "tune", config.to_dict(),
                   inputs=_experiment_inputs(config), outputs=[args.out])
    log.info("tuned %d queries", len(report["tuning"]))
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    tuned = json.loads(Path(args.tuned).read_text(encoding="utf-8"))
    rows = select_from_tuning(tuned["tuning"])
    _write_json({"decisions": rows}, Path(args.out))
    write_manifest(f"{args.out}.manifest.json", "select", {"seed": None},
                   inputs=[args.tuned], outputs=[args.out])
    log.info("selected modalities for %d queries", len(rows))
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    decisions = json.loads(Path(args.decisions).read_text(encoding="utf-8"))
    result = evaluate_assignments(config, decisions["decisions"])
    _write_json(result, Path(args.out))
    write_manifest(f"{args.out}.manifest.json", "evaluate", config.to_dict(),
                   inputs=_experiment_inputs(config) + [args.decisions],
                   outputs=[args.out])
    log.info("mean test NDCG %.4f over %d queries",
             result["mean_test_ndcg"] or float("nan"), len(result["per_query"]))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    report, decisions = run_experiment(config)
    save_report(report, args.out)
    write_manifest(f"{args.out}.manifest.json", "report", config.to_dict(),
                   inputs=_experiment_inputs(config), outputs=[args.out])
    means = report["modality_means"]
    for modality in config.modalities:
        log.info("%-10s test NDCG %s", modality, means[modality]["test"])
    log.info("selected   test NDCG %s over %d queries",
             report["selected_means"]["test"], len(decisions))
    return 0


def _cmd_continuum(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    embedder = _make_embedder(args.catalog, args.vocab, args.embeddings,
                              model.modality)
    sessions = load_sessions(args.sessions)
    percentiles = tuple(args.percentiles) if args.percentiles else DEFAULT_PERCENTILES
    report = continuum_report(model, sessions, embedder, percentiles)
    _write_json(report, Path(args.out))
    inputs = [args.catalog, args.vocab, args.model, args.sessions]
    if args.embeddings:
        inputs.append(args.embeddings)
    write_manifest(f"{args.out}.manifest.json", "continuum",
                   {"percentiles": list(percentiles), "seed": None},
                   inputs=inputs, outputs=[args.out])
    return 0


def _cmd_disentangle(args: argparse.Namespace) -> int:
    model_a = load_model(args.model_a)
    model_b = load_model(args.model_b)
    embedder_a = _make_embedder(args.catalog, args.vocab, args.embeddings,
                                model_a.modality)
    embedder_b = Embedder(catalog=embedder_a.catalog, vocab=embedder_a.vocab,
                          store=embedder_a.store, modality=model_b.modality)
    sessions = load_sessions(args.sessions)
    doc_ids = sorted({lid for s in sessions if s.query == model_a.query
                      for lid, _ in s.presented})
    report = disentangle_report(model_a, model_b, embedder_a, embedder_b,
                                doc_ids, k=args.k, max_rows=args.max_rows)
    _write_json(report, Path(args.out))
    inputs = [args.catalog, args.vocab, args.model_a, args.model_b, args.sessions]
    if args.embeddings:
        inputs.append(args.embeddings)
    write_manifest(f"{args.out}.manifest.json", "disentangle",
                   {"k": args.k, "max_rows": args.max_rows, "seed": None},
                   inputs=inputs, outputs=[args.out])
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmrank",
        description="Pairwise multimodal ranking: synthetic worlds, training, "
                    "tuning, and evaluation reports.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic catalog and logs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--queries", type=int, required=True)
    p.add_argument("--listings-per-query", type=int, required=True)
    p.add_argument("--sessions-per-query", type=int, required=True)
    p.add_argument("--text-ambiguity", type=float, required=True)
    p.add_argument("--image-signal", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--position-bias", type=_floats, default=(1.0, 0.8, 0.6, 0.4))
    p.add_argument("--image-dim", type=int, default=16)
    p.add_argument("--rel-fraction", type=float, default=0.25)
    p.add_argument("--holdout-fraction", type=float, default=0.25)
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("build-vocab", help="build the text feature vocabulary")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-term-count", type=int, default=1)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("gen-pairs", help="mine preference pairs from sessions")
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dwell-threshold", type=float, default=30.0)
    p.set_defaults(func=_cmd_gen_pairs)

    p = sub.add_parser("train", help="train one query model")
    p.add_argument("--catalog", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--pairs", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--modality", choices=[m.value for m in Modality],
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--lr-decay", type=float, default=1e-4)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tune", help="grid-search hyperparameters per query")
    _add_experiment_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("select", help="pick the best modality per query")
    p.add_argument("--tuned", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("evaluate", help="score selected models on test sessions")
    _add_experiment_args(p)
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="full experiment: tune, select, evaluate")
    _add_experiment_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("continuum", help="percentile bands of a model's ranking")
    p.add_argument("--catalog", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--percentiles", type=_floats)
    p.set_defaults(func=_cmd_continuum)

    p = sub.add_parser("disentangle",
                       help="pairs one model separates and the other conflates")
    p.add_argument("--catalog", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-rows", type=int, default=50)
    p.set_defaults(func=_cmd_disentangle)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CorpusError, EmbeddingError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
