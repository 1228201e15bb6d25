"""Shared fixtures: a small generated world written to disk once per run."""
from __future__ import annotations

import pytest

from mmrank.corpus import save_catalog, save_sessions
from mmrank.embedding import save_embedding_store
from mmrank.pipeline import ExperimentConfig
from mmrank.synthlog import (
    WorldSpec,
    generate_eval_sessions,
    generate_sessions,
    generate_world,
)

SMALL_SPEC = WorldSpec(
    n_queries=3,
    n_listings_per_query=60,
    n_sessions_per_query=120,
    text_ambiguity=0.6,
    image_signal=2.0,
    seed=11,
)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_world_dir(tmp_path_factory, small_world):
    """The small world's artifacts on disk, as the CLI would lay them out."""
    out = tmp_path_factory.mktemp("small_world")
    save_catalog(small_world.catalog, out / "catalog.tsv")
    save_embedding_store(small_world.store, out / "embeddings.mmeb", binary=True)
    save_sessions(generate_sessions(small_world, SMALL_SPEC),
                  out / "sessions_train.jsonl")
    save_sessions(generate_eval_sessions(small_world, SMALL_SPEC, "validation"),
                  out / "sessions_validation.jsonl")
    save_sessions(generate_eval_sessions(small_world, SMALL_SPEC, "test"),
                  out / "sessions_test.jsonl")
    return out


@pytest.fixture(scope="session")
def small_config(small_world_dir):
    return ExperimentConfig(
        catalog_path=str(small_world_dir / "catalog.tsv"),
        train_sessions_path=str(small_world_dir / "sessions_train.jsonl"),
        validation_sessions_path=str(small_world_dir / "sessions_validation.jsonl"),
        test_sessions_path=str(small_world_dir / "sessions_test.jsonl"),
        embeddings_path=str(small_world_dir / "embeddings.mmeb"),
        min_pairs_per_query=20,
        seed=11,
    )
