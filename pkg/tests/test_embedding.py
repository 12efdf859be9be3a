import numpy as np
import pytest
from hypothesis import given, strategies as st

from woundrag.corpus import ImageRef
from woundrag.embedding import (
    EmbeddingError,
    FileEmbeddingProvider,
    MockEmbeddingProvider,
    VectorStore,
    embed_image,
    embed_text,
    l2_normalize,
    load_vector_store,
    mock_vector,
    save_vector_store,
)


def test_l2_normalize_hand_case():
    assert np.allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-7)


def test_l2_normalize_already_unit():
    assert np.allclose(l2_normalize(np.array([1.0, 0.0, 0.0])), [1, 0, 0])


def test_l2_normalize_zero_vector_errors():
    with pytest.raises(EmbeddingError, match="degenerate"):
        l2_normalize(np.zeros(2))


@given(st.binary(min_size=1, max_size=64))
def test_mock_vector_unit_norm_and_deterministic(data):
    v1 = mock_vector(data, 16)
    v2 = mock_vector(data, 16)
    assert np.array_equal(v1, v2)
    assert abs(float(np.linalg.norm(v1.astype(np.float64))) - 1.0) < 1e-6


def test_mock_text_provider_determinism():
    p = MockEmbeddingProvider(dim=32, modality="text")
    a = embed_text(p, "e1", "hello wound")
    b = embed_text(p, "e1", "hello wound")
    assert np.array_equal(a, b)


def test_mock_different_texts_not_parallel():
    p = MockEmbeddingProvider(dim=32, modality="text")
    a = embed_text(p, "e1", "first text")
    b = embed_text(p, "e2", "a different text")
    assert float(np.dot(a, b)) < 1.0 - 1e-6


def test_mock_image_provider_bytes_identity(tmp_path):
    p1 = tmp_path / "a.jpg"
    p2 = tmp_path / "b.jpg"
    p1.write_bytes(b"same bytes")
    p2.write_bytes(b"same bytes")
    p = MockEmbeddingProvider(dim=32, modality="image")
    v1 = embed_image(p, "e1", 0, ImageRef(str(p1)))
    v2 = embed_image(p, "e2", 1, ImageRef(str(p2)))
    assert np.array_equal(v1, v2)


def test_file_provider_lookup_and_missing():
    store = VectorStore("text", 4)
    vec = l2_normalize(np.array([1.0, 2.0, 3.0, 4.0]))
    store.add("e1", 0, vec)
    p = FileEmbeddingProvider(store)
    assert np.array_equal(embed_text(p, "e1", "ignored"), vec)
    with pytest.raises(EmbeddingError, match="no vector"):
        embed_text(p, "e2", "ignored")


def test_file_image_provider_lookup():
    store = VectorStore("image", 4)
    vec = l2_normalize(np.array([0.0, 1.0, 0.0, 0.0]))
    store.add("e1", 0, vec)
    p = FileEmbeddingProvider(store)
    assert np.array_equal(embed_image(p, "e1", 0, ImageRef("x")), vec)
    with pytest.raises(EmbeddingError):
        embed_image(p, "e1", 1, ImageRef("x"))


def test_modality_mismatch_rejected():
    p = MockEmbeddingProvider(dim=8, modality="image")
    with pytest.raises(EmbeddingError, match="modality"):
        embed_text(p, "e1", "text")


def test_store_round_trip_bit_exact(tmp_path):
    store = VectorStore("text", 3, encoder_name="mock")
    for i in range(3):
        store.add(f"e{i}", 0, mock_vector(f"seed{i}".encode(), 3))
    path = tmp_path / "store.json"
    save_vector_store(store, path)
    loaded = load_vector_store(path)
    assert loaded.modality == store.modality
    assert loaded.dim == store.dim
    assert loaded.encoder_name == store.encoder_name
    assert len(loaded.entries) == 3
    for (o1, i1, v1), (o2, i2, v2) in zip(store.entries, loaded.entries):
        assert (o1, i1) == (o2, i2)
        assert v1.tobytes() == v2.tobytes()


def test_store_empty_round_trip(tmp_path):
    store = VectorStore("text", 384)
    path = tmp_path / "s.json"
    save_vector_store(store, path)
    loaded = load_vector_store(path)
    assert loaded.entries == []
    assert loaded.dim == 384


def test_store_dim_mismatch_fatal(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(
        '{"modality":"text","dim":384,"encoder_name":"x",'
        '"entries":[{"owner_id":"e1","item_index":0,"vector":' + str([0.1] * 383) + "}]}"
    )
    with pytest.raises(EmbeddingError, match="dim"):
        load_vector_store(path)


def test_store_duplicate_key_fatal():
    store = VectorStore("text", 2)
    store.add("e1", 0, np.array([1.0, 0.0], dtype=np.float32))
    with pytest.raises(EmbeddingError, match="duplicate"):
        store.add("e1", 0, np.array([0.0, 1.0], dtype=np.float32))
