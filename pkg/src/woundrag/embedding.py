"""Embedding providers (file / http / mock) and the vector-store file format."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import ImageRef


class EmbeddingError(Exception):
    pass


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm == 0.0:
        raise EmbeddingError("degenerate vector: all-zero input")
    return (v.astype(np.float64) / norm).astype(np.float32)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _splitmix64(seed: int):
    state = seed & 0xFFFFFFFFFFFFFFFF
    while True:
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        yield z ^ (z >> 31)


def mock_vector(seed_bytes: bytes, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector from input bytes."""
    gen = _splitmix64(fnv1a64(seed_bytes))
    # map each 64-bit draw to [-1, 1)
    values = [2.0 * ((next(gen) >> 11) * 2.0 ** -53) - 1.0 for _ in range(dim)]
    return l2_normalize(np.array(values, dtype=np.float32))


@dataclass
class VectorStore:
    modality: str  # "text" | "image"
    dim: int
    encoder_name: str = ""
    entries: list[tuple[str, int, np.ndarray]] = field(default_factory=list)
    _by_key: dict = field(default_factory=dict, repr=False)

    def add(self, owner_id: str, item_index: int, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise EmbeddingError(
                f"vector dim {vector.shape} does not match store dim {self.dim}"
            )
        key = (owner_id, item_index)
        if key in self._by_key:
            raise EmbeddingError(f"duplicate entry ({owner_id!r}, {item_index})")
        self._by_key[key] = vector
        self.entries.append((owner_id, item_index, vector))

    def get(self, owner_id: str, item_index: int = 0) -> np.ndarray:
        try:
            return self._by_key[(owner_id, item_index)]
        except KeyError:
            raise EmbeddingError(f"no vector for ({owner_id!r}, {item_index})") from None

    def owner_ids(self) -> list[str]:
        seen: list[str] = []
        for o, _, _ in self.entries:
            if o not in seen:
                seen.append(o)
        return seen


def save_vector_store(store: VectorStore, path: str | Path) -> None:
    doc = {
        "modality": store.modality,
        "dim": store.dim,
        "encoder_name": store.encoder_name,
        "entries": [
            {"owner_id": o, "item_index": i, "vector": [float(x) for x in v]}
            for o, i, v in store.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_vector_store(path: str | Path) -> VectorStore:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    store = VectorStore(
        modality=doc["modality"], dim=int(doc["dim"]), encoder_name=doc.get("encoder_name", "")
    )
    for row in doc["entries"]:
        vec = np.array(row["vector"], dtype=np.float32)
        if vec.shape != (store.dim,):
            raise EmbeddingError(
                f"row ({row['owner_id']!r}, {row['item_index']}) has dim "
                f"{vec.shape[0]}, header says {store.dim}"
            )
        store.add(row["owner_id"], int(row["item_index"]), vec)
    return store


class MockEmbeddingProvider:
    """Pure deterministic provider: vectors are seeded by input bytes."""

    kind = "mock"

    def __init__(self, dim: int, modality: str):
        self.dim = dim
        self.modality = modality

    def embed_text(self, owner_id: str, text: str) -> np.ndarray:
        return mock_vector(text.encode("utf-8"), self.dim)

    def embed_image(self, owner_id: str, item_index: int, image: ImageRef) -> np.ndarray:
        p = Path(image.path)
        seed = p.read_bytes() if p.exists() else image.path.encode("utf-8")
        return mock_vector(seed, self.dim)


class FileEmbeddingProvider:
    """Lookup provider over a precomputed vector store."""

    kind = "file"

    def __init__(self, store: VectorStore):
        self.store = store
        self.dim = store.dim
        self.modality = store.modality

    def embed_text(self, owner_id: str, text: str) -> np.ndarray:
        return self.store.get(owner_id, 0)

    def embed_image(self, owner_id: str, item_index: int, image: ImageRef) -> np.ndarray:
        return self.store.get(owner_id, item_index)


class HttpEmbeddingProvider:
    """POSTs {"inputs": [...]} and expects {"vectors": [[...]]}."""

    kind = "http"

    def __init__(self, endpoint: str, dim: int, modality: str,
                 max_attempts: int = 3, backoff_s: float = 0.5, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.dim = dim
        self.modality = modality
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def _post(self, inputs: Sequence[str]) -> np.ndarray:
        import requests

        last_status: Optional[int] = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(
                    self.endpoint, json={"inputs": list(inputs)}, timeout=self.timeout_s
                )
            except requests.RequestException:
                last_status = None
            else:
                if resp.status_code == 200:
                    vec = np.array(resp.json()["vectors"][0], dtype=np.float32)
                    return l2_normalize(vec)
                if resp.status_code < 500:
                    raise EmbeddingError(f"embedding endpoint error {resp.status_code}")
                last_status = resp.status_code
            if attempt < self.max_attempts - 1:
                time.sleep(self.backoff_s * 2 ** attempt)
        raise EmbeddingError(f"embedding endpoint failed after retries (status={last_status})")

    def embed_text(self, owner_id: str, text: str) -> np.ndarray:
        return self._post([text])

    def embed_image(self, owner_id: str, item_index: int, image: ImageRef) -> np.ndarray:
        import base64

        data = Path(image.path).read_bytes()
        return self._post([base64.b64encode(data).decode("ascii")])


def embed_text(provider, owner_id: str, text: str) -> np.ndarray:
    if provider.modality != "text":
        raise EmbeddingError("provider modality is not text")
    vec = provider.embed_text(owner_id, text)
    if vec.shape != (provider.dim,):
        raise EmbeddingError("provider returned wrong dimension")
    return vec


def embed_image(provider, owner_id: str, item_index: int, image: ImageRef) -> np.ndarray:
    if provider.modality != "image":
        raise EmbeddingError("provider modality is not image")
    vec = provider.embed_image(owner_id, item_index, image)
    if vec.shape != (provider.dim,):
        raise EmbeddingError("provider returned wrong dimension")
    return vec
