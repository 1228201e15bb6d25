"""Text features, vocabulary layout, dense normalization, and store files."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrank.corpus import Catalog, Listing
from mmrank.embedding import (
    DimensionMismatchError,
    Embedder,
    EmbeddingStore,
    MissingEmbeddingError,
    Modality,
    SparseVector,
    Vocabulary,
    ZeroVectorError,
    build_vocabulary,
    embed_multimodal,
    embed_text,
    field_terms,
    listing_terms,
    load_embedding_store,
    normalize_l2,
    save_embedding_store,
    tokenize,
)


def listing(lid="l1", shop="s1", title="red desk", tags=(), ref=None):
    return Listing(listing_id=lid, shop_id=shop, title=title, tags=tuple(tags),
                   image_ref=ref)


class TestTokens:
    def test_tokenize_lowercases_and_splits_punctuation(self):
        assert tokenize("Mid-century DESK lamp!") == ["mid", "century", "desk",
                                                      "lamp"]

    def test_underscore_is_a_separator(self):
        assert tokenize("a_b") == ["a", "b"]

    def test_field_terms_adds_adjacent_bigrams(self):
        assert field_terms("red desk") == ["red", "desk", "red desk"]

    def test_bigrams_do_not_cross_fields(self):
        terms = listing_terms(listing(title="red desk", tags=("oak",)))
        assert "desk oak" not in terms
        assert terms == {"red", "desk", "red desk", "oak"}


class TestVocabulary:
    def test_single_listing_layout(self):
        catalog = Catalog()
        catalog.add(listing())
        vocab = build_vocabulary(catalog)
        assert vocab.terms == ("desk", "red", "red desk")
        assert vocab.n_terms == 3
        assert vocab.total_dim == 5

    def test_blocks_are_contiguous_and_sorted(self):
        catalog = Catalog()
        catalog.add(listing("b", "s2", "desk"))
        catalog.add(listing("a", "s1", "red"))
        vocab = build_vocabulary(catalog)
        assert vocab.terms == ("desk", "red")
        assert vocab.listing_ids == ("a", "b")
        assert vocab.shop_ids == ("s1", "s2")
        # Term columns first, then listing ids, then shop ids.
        assert vocab.term_index["desk"] == 0
        assert vocab.listing_index["a"] == 2
        assert vocab.shop_index["s1"] == 4

    def test_min_term_count_filters_by_document_frequency(self):
        catalog = Catalog()
        catalog.add(listing("a", "s1", "red desk"))
        catalog.add(listing("b", "s1", "red lamp"))
        vocab = build_vocabulary(catalog, min_term_count=2)
        assert vocab.terms == ("red",)

    def test_empty_catalog_rejected(self):
        with pytest.raises(ValueError):
            build_vocabulary(Catalog())

    def test_save_load_round_trip(self, tmp_path):
        catalog = Catalog()
        catalog.add(listing())
        vocab = build_vocabulary(catalog)
        vocab.save(tmp_path / "vocab.json")
        assert Vocabulary.load(tmp_path / "vocab.json") == vocab


class TestSparseVector:
    def test_indices_must_increase(self):
        with pytest.raises(ValueError):
            SparseVector(dim=4, indices=(2, 1), values=(1.0, 1.0))

    def test_indices_must_fit_dimension(self):
        with pytest.raises(ValueError):
            SparseVector(dim=2, indices=(2,), values=(1.0,))

    def test_zero_values_rejected(self):
        with pytest.raises(ValueError):
            SparseVector(dim=4, indices=(1,), values=(0.0,))

    def test_dot_with_weight_dict(self):
        v = SparseVector(dim=5, indices=(1, 3), values=(2.0, -1.0))
        assert v.dot({1: 0.5, 3: 2.0, 4: 100.0}) == 2.0 * 0.5 - 1.0 * 2.0


class TestEmbedText:
    def make(self):
        catalog = Catalog()
        catalog.add(listing("a", "s1", "red desk", tags=("oak",)))
        catalog.add(listing("b", "s2", "blue lamp"))
        vocab = build_vocabulary(catalog)
        return catalog, vocab

    def test_binary_columns(self):
        catalog, vocab = self.make()
        vec = embed_text(catalog.listings["a"], vocab)
        assert set(vec.values) == {1.0}
        expected = {vocab.term_index[t] for t in ("red", "desk", "red desk", "oak")}
        expected.add(vocab.listing_index["a"])
        expected.add(vocab.shop_index["s1"])
        assert set(vec.indices) == expected

    def test_unknown_ids_skipped_with_warning(self, caplog):
        _, vocab = self.make()
        stranger = listing("zz", "s9", "red desk")
        with caplog.at_level("WARNING"):
            vec = embed_text(stranger, vocab)
        assert "zz" in caplog.text
        # Only term and known-column features remain.
        assert all(i < vocab.n_terms for i in vec.indices)


class TestNormalize:
    def test_three_four_five_triangle(self):
        out = normalize_l2(np.array([3.0, 4.0]))
        assert out.tolist() == [0.6, 0.8]

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            normalize_l2(np.zeros(3))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=32)
           .filter(lambda xs: any(x != 0 for x in xs)))
    def test_unit_norm(self, xs):
        out = normalize_l2(np.array(xs, dtype=np.float64))
        assert math.isclose(float(np.linalg.norm(out)), 1.0, rel_tol=1e-12)


class TestEmbedMultimodal:
    def make(self):
        catalog = Catalog()
        catalog.add(listing("a", "s1", "red desk", ref="a.jpg"))
        catalog.add(listing("b", "s1", "red desk"))
        vocab = build_vocabulary(catalog)
        store = EmbeddingStore(dim=3)
        store.add("a.jpg", np.array([3.0, 0.0, 4.0]))
        return catalog, vocab, store

    def test_text_modality_has_no_dense_block(self):
        catalog, vocab, store = self.make()
        vec = embed_multimodal(catalog.listings["a"], vocab, store, Modality.TEXT)
        assert vec.image is None
        assert vec.text.nnz > 0

    def test_image_modality_is_normalized_dense_only(self):
        catalog, vocab, store = self.make()
        vec = embed_multimodal(catalog.listings["a"], vocab, store, Modality.IMAGE)
        assert vec.text.nnz == 0
        assert vec.image.tolist() == [0.6, 0.0, 0.8]

    def test_multimodal_has_both_blocks(self):
        catalog, vocab, store = self.make()
        vec = embed_multimodal(catalog.listings["a"], vocab, store,
                               Modality.MULTIMODAL)
        assert vec.text.nnz > 0
        assert math.isclose(float(np.linalg.norm(vec.image)), 1.0)

    def test_missing_image_raises(self):
        catalog, vocab, store = self.make()
        with pytest.raises(MissingEmbeddingError):
            embed_multimodal(catalog.listings["b"], vocab, store, Modality.IMAGE)

    def test_embedder_try_embed_returns_none_for_missing(self):
        catalog, vocab, store = self.make()
        embedder = Embedder(catalog=catalog, vocab=vocab, store=store,
                            modality=Modality.IMAGE)
        assert embedder.try_embed("b") is None
        assert embedder.try_embed("nope") is None
        assert embedder.embed("a").image is not None


class TestStoreFiles:
    def make_store(self):
        store = EmbeddingStore(dim=4)
        rng = np.random.default_rng(3)
        for key in ("a.jpg", "b.jpg", "weird key? no", "c.jpg"):
            if " " in key:
                continue
            store.add(key, rng.normal(size=4))
        return store

    def test_text_round_trip_is_exact(self, tmp_path):
        store = self.make_store()
        path = tmp_path / "store.txt"
        save_embedding_store(store, path)
        loaded = load_embedding_store(path)
        assert loaded.dim == 4
        for key, vec in store.vectors.items():
            assert loaded.vectors[key].tolist() == vec.tolist()

    def test_binary_round_trip_is_float32_exact(self, tmp_path):
        store = self.make_store()
        path = tmp_path / "store.mmeb"
        save_embedding_store(store, path, binary=True)
        loaded = load_embedding_store(path)
        for key, vec in store.vectors.items():
            assert loaded.vectors[key].tolist() == vec.astype(np.float32).astype(
                np.float64).tolist()

    def test_formats_auto_detected(self, tmp_path):
        store = self.make_store()
        save_embedding_store(store, tmp_path / "t.dat")
        save_embedding_store(store, tmp_path / "b.dat", binary=True)
        assert set(load_embedding_store(tmp_path / "t.dat").vectors) == set(
            load_embedding_store(tmp_path / "b.dat").vectors)

    def test_text_keys_with_spaces_rejected(self, tmp_path):
        store = EmbeddingStore(dim=1)
        store.add("has space", np.array([1.0]))
        with pytest.raises(ValueError):
            save_embedding_store(store, tmp_path / "s.txt")

    def test_wrong_width_row_rejected(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text("dim=3\nkey 1.0 2.0\n")
        with pytest.raises(DimensionMismatchError):
            load_embedding_store(path)

    def test_truncated_binary_rejected(self, tmp_path):
        store = self.make_store()
        path = tmp_path / "s.mmeb"
        save_embedding_store(store, path, binary=True)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(ValueError):
            load_embedding_store(path)

    def test_store_rejects_non_finite(self):
        store = EmbeddingStore(dim=2)
        with pytest.raises(ValueError):
            store.add("k", np.array([1.0, np.nan]))

    def test_store_rejects_wrong_shape(self):
        store = EmbeddingStore(dim=2)
        with pytest.raises(ValueError):
            store.add("k", np.array([1.0, 2.0, 3.0]))


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(
    st.text(alphabet=st.characters(codec="utf-8",
                                   exclude_characters=" \t\n\r"),
            min_size=1, max_size=10),
    st.lists(st.floats(allow_nan=False, allow_infinity=False),
             min_size=3, max_size=3),
    min_size=1, max_size=6))
def test_text_store_round_trip_property(tmp_path_factory, entries):
    store = EmbeddingStore(dim=3)
    for key, values in entries.items():
        store.add(key, np.array(values, dtype=np.float64))
    path = tmp_path_factory.mktemp("store") / "s.txt"
    save_embedding_store(store, path)
    loaded = load_embedding_store(path)
    assert set(loaded.vectors) == set(store.vectors)
    for key in store.vectors:
        assert loaded.vectors[key].tolist() == store.vectors[key].tolist()
