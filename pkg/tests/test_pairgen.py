"""Pair mining, signed-difference instances, and the balancing coin."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrank.corpus import Catalog, Interaction, InteractionKind, Listing, Session
from mmrank.embedding import (
    Embedder,
    EmbeddingStore,
    Modality,
    MultimodalVector,
    SparseVector,
    build_vocabulary,
)
from mmrank.pairgen import (
    PairwiseInstance,
    PreferencePair,
    instance_from_pair,
    load_pairs,
    make_instances,
    mine_preference_pairs,
    save_pairs,
    sparse_dense_diff,
)

IGNORED = Interaction(kind=InteractionKind.IGNORED)
PURCHASED = Interaction(kind=InteractionKind.PURCHASED)


def clicked(dwell):
    return Interaction(kind=InteractionKind.CLICKED, dwell_seconds=dwell)


def sess(entries, query="desk", ts=100):
    return Session(query=query, presented=tuple(entries), timestamp=ts)


def tiny_embedder(modality=Modality.TEXT, missing=()):
    catalog = Catalog()
    titles = {"a": "red desk", "b": "blue lamp", "c": "oak chair", "d": "tin box"}
    for lid, title in titles.items():
        catalog.add(Listing(listing_id=lid, shop_id="s" + lid, title=title,
                            tags=(), image_ref=lid + ".jpg"))
    store = EmbeddingStore(dim=3)
    rng = np.random.default_rng(0)
    for lid in titles:
        if lid not in missing:
            store.add(lid + ".jpg", rng.normal(size=3))
    return Embedder(catalog=catalog, vocab=build_vocabulary(catalog),
                    store=store, modality=modality)


class TestMining:
    def test_relevant_between_two_ignored_yields_both_neighbours(self):
        pairs = mine_preference_pairs([sess([("a", IGNORED), ("b", PURCHASED),
                                             ("c", IGNORED)])])
        assert [(p.preferred, p.ignored) for p in pairs] == [("b", "a"), ("b", "c")]
        assert all(p.query == "desk" and p.session_ts == 100 for p in pairs)

    def test_non_adjacent_positions_are_not_paired(self):
        pairs = mine_preference_pairs([sess([("a", IGNORED), ("b", IGNORED),
                                             ("c", PURCHASED)])])
        assert [(p.preferred, p.ignored) for p in pairs] == [("c", "b")]

    def test_adjacent_relevant_listings_yield_nothing(self):
        assert mine_preference_pairs([sess([("a", PURCHASED),
                                            ("b", PURCHASED)])]) == []

    def test_short_dwell_click_counts_as_non_relevant_partner(self):
        pairs = mine_preference_pairs([sess([("a", clicked(10.0)),
                                             ("b", PURCHASED)])])
        assert [(p.preferred, p.ignored) for p in pairs] == [("b", "a")]

    def test_long_dwell_click_counts_as_relevant(self):
        pairs = mine_preference_pairs([sess([("a", clicked(45.0)),
                                             ("b", IGNORED)])])
        assert [(p.preferred, p.ignored) for p in pairs] == [("a", "b")]

    def test_dwell_threshold_is_configurable(self):
        session = sess([("a", clicked(45.0)), ("b", IGNORED)])
        assert mine_preference_pairs([session], dwell_threshold=60.0) == []

    def test_pair_requires_distinct_listings(self):
        with pytest.raises(ValueError):
            PreferencePair(query="q", preferred="a", ignored="a", session_ts=0)

    def test_instance_label_must_be_signed_unit(self):
        with pytest.raises(ValueError):
            PairwiseInstance(query="q", y=0,
                             sparse=SparseVector(dim=1, indices=(), values=()),
                             dense=None)


def mmv(indices, values, dim=6, image=None, modality=Modality.TEXT):
    return MultimodalVector(modality=modality,
                            text=SparseVector(dim=dim, indices=tuple(indices),
                                              values=tuple(values)),
                            image=None if image is None else np.asarray(
                                image, dtype=np.float64))


class TestSparseDenseDiff:
    def test_merge_and_exact_cancellation(self):
        a = mmv((0, 2, 4), (1.0, 1.0, 2.0))
        b = mmv((1, 2), (1.0, 1.0))
        sparse, dense = sparse_dense_diff(a, b)
        # Column 2 cancels exactly and is elided from the output.
        assert sparse.indices == (0, 1, 4)
        assert sparse.values == (1.0, -1.0, 2.0)
        assert dense is None

    def test_dense_blocks_subtract_elementwise(self):
        a = mmv((0,), (1.0,), image=[1.0, 2.0], modality=Modality.MULTIMODAL)
        b = mmv((0,), (1.0,), image=[0.5, 5.0], modality=Modality.MULTIMODAL)
        sparse, dense = sparse_dense_diff(a, b)
        assert sparse.indices == ()
        assert dense.tolist() == [0.5, -3.0]

    def test_modality_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sparse_dense_diff(mmv((0,), (1.0,)),
                              mmv((0,), (1.0,), image=[1.0],
                                  modality=Modality.MULTIMODAL))

    def test_sparse_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sparse_dense_diff(mmv((0,), (1.0,), dim=6),
                              mmv((0,), (1.0,), dim=7))

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_matches_dense_subtraction(self, data):
        dim = data.draw(st.integers(1, 12))
        def side():
            idx = data.draw(st.lists(st.integers(0, dim - 1), unique=True,
                                     max_size=dim).map(sorted))
            vals = [data.draw(st.sampled_from([-2.0, -1.0, 1.0, 3.0]))
                    for _ in idx]
            return mmv(idx, vals, dim=dim)
        a, b = side(), side()
        sparse, _ = sparse_dense_diff(a, b)
        dense_a, dense_b = np.zeros(dim), np.zeros(dim)
        dense_a[list(a.text.indices)] = a.text.values
        dense_b[list(b.text.indices)] = b.text.values
        expected = dense_a - dense_b
        got = np.zeros(dim)
        got[list(sparse.indices)] = sparse.values
        assert got.tolist() == expected.tolist()
        assert all(v != 0.0 for v in sparse.values)


class TestInstances:
    def pair(self):
        return PreferencePair(query="desk", preferred="a", ignored="b",
                              session_ts=5)

    def test_negative_label_negates_the_difference(self):
        embedder = tiny_embedder(Modality.MULTIMODAL)
        a, b = embedder.embed("a"), embedder.embed("b")
        plus = instance_from_pair(self.pair(), a, b, y=1)
        minus = instance_from_pair(self.pair(), a, b, y=-1)
        assert minus.sparse.indices == plus.sparse.indices
        assert minus.sparse.values == tuple(-v for v in plus.sparse.values)
        assert minus.dense.tolist() == (-plus.dense).tolist()

    def test_labels_are_deterministic_per_seed(self):
        embedder = tiny_embedder()
        pairs = [PreferencePair("desk", p, i, 0)
                 for p, i in (("a", "b"), ("c", "d"), ("a", "d"), ("b", "c"))]
        first, _ = make_instances(pairs, embedder, rng_seed=9)
        second, _ = make_instances(pairs, embedder, rng_seed=9)
        assert [inst.y for inst in first] == [inst.y for inst in second]

    def test_labels_do_not_depend_on_modality(self):
        pairs = [PreferencePair("desk", p, i, 0)
                 for p, i in (("a", "b"), ("c", "d"), ("a", "d"), ("b", "c"))]
        text, _ = make_instances(pairs, tiny_embedder(Modality.TEXT), 9)
        multi, _ = make_instances(pairs, tiny_embedder(Modality.MULTIMODAL), 9)
        assert [inst.y for inst in text] == [inst.y for inst in multi]

    def test_labels_do_not_depend_on_query_interleaving(self):
        embedder = tiny_embedder()
        desk = [PreferencePair("desk", p, i, 0)
                for p, i in (("a", "b"), ("c", "d"))]
        lamp = [PreferencePair("lamp", p, i, 0)
                for p, i in (("b", "a"), ("d", "c"))]
        grouped, _ = make_instances(desk + lamp, embedder, 9)
        mixed, _ = make_instances([desk[0], lamp[0], desk[1], lamp[1]],
                                  embedder, 9)
        by_key = {(inst.query, inst.sparse.indices): inst.y for inst in grouped}
        for inst in mixed:
            assert by_key[(inst.query, inst.sparse.indices)] == inst.y

    def test_unembeddable_pairs_dropped_without_shifting_labels(self):
        pairs = [PreferencePair("desk", p, i, 0)
                 for p, i in (("a", "b"), ("c", "d"), ("a", "d"))]
        full, dropped_full = make_instances(pairs, tiny_embedder(Modality.IMAGE), 9)
        partial, dropped = make_instances(
            pairs, tiny_embedder(Modality.IMAGE, missing=("c",)), 9)
        assert dropped_full == 0
        assert dropped == 1
        assert len(partial) == 2
        # The coin is flipped before the embedding check, so surviving
        # pairs keep the labels they had with full coverage.
        assert [inst.y for inst in partial] == [full[0].y, full[2].y]

    def test_instance_orientation_matches_label(self):
        embedder = tiny_embedder(Modality.MULTIMODAL)
        instances, _ = make_instances(
            [PreferencePair("desk", "a", "b", 0) for _ in range(8)]
            + [PreferencePair("desk", "b", "a", 0) for _ in range(8)],
            embedder, rng_seed=1)
        a, b = embedder.embed("a"), embedder.embed("b")
        forward, _ = sparse_dense_diff(a, b)
        for inst in instances[:8]:
            expect = forward.values if inst.y == 1 else tuple(
                -v for v in forward.values)
            assert inst.sparse.values == expect


class TestPairFiles:
    def test_round_trip_preserves_order(self, tmp_path):
        pairs = [PreferencePair("desk", "a", "b", 7),
                 PreferencePair("lamp", "d", "c", 8)]
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, path)
        assert load_pairs(path) == pairs

    def test_bad_record_names_file_and_line(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        save_pairs([PreferencePair("desk", "a", "b", 7)], path)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"query": "x", "preferred": "a"}\n')
        with pytest.raises(ValueError, match="line 2|:2:"):
            load_pairs(path)
