"""Encoder backends.

Two families are supported, selected purely by the configured encoder name:

* Neural encoders (a sentence-transformers model for text, a CLIP checkpoint
  for images), loaded lazily and run in deterministic inference mode.
* Offline encoders (names starting with ``offline/``), which derive a unit
  vector from a hash of the input. They need no model files or network and
  produce stable output everywhere, which makes them the default choice for
  tests and air-gapped runs.

Both families emit L2-normalized float32 vectors at the encoder's published
dimension.
"""
from __future__ import annotations

import hashlib
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

PUBLISHED_DIMS = {
    "sentence-transformers/all-MiniLM-L6-v2": 384,
    "openai/clip-vit-base-patch32": 512,
    "offline/text-384": 384,
    "offline/image-512": 512,
}

DEFAULT_TEXT_ENCODER = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_IMAGE_ENCODER = "openai/clip-vit-base-patch32"


class EncoderError(Exception):
    pass


def published_dim(name: str) -> int:
    if name in PUBLISHED_DIMS:
        return PUBLISHED_DIMS[name]
    # offline encoders may carry their dimension as a trailing "-<n>"
    if name.startswith("offline/"):
        tail = name.rsplit("-", 1)[-1]
        if tail.isdigit() and int(tail) > 0:
            return int(tail)
    raise EncoderError(f"unknown encoder {name!r}; no published dimension")


def _normalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise EncoderError("encoder produced a zero vector")
    return (matrix / norms).astype(np.float32)


def _hash_vector(seed: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(seed).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return rng.standard_normal(dim)


def _resize(image: Image.Image, edge: int) -> Image.Image:
    return image.convert("RGB").resize((edge, edge))


class OfflineTextEncoder:
    def __init__(self, name: str):
        self.name = name
        self.dim = published_dim(name)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = [_hash_vector(t.encode("utf-8"), self.dim) for t in texts]
        return _normalize(np.stack(rows)) if rows else np.zeros((0, self.dim), np.float32)


class OfflineImageEncoder:
    def __init__(self, name: str, resize_edge: int):
        self.name = name
        self.dim = published_dim(name)
        self.resize_edge = resize_edge

    def encode_images(self, paths: list[str]) -> np.ndarray:
        rows = []
        for path in paths:
            with Image.open(path) as img:
                resized = _resize(img, self.resize_edge)
            buf = BytesIO()
            resized.save(buf, format="PNG")
            rows.append(_hash_vector(buf.getvalue(), self.dim))
        return _normalize(np.stack(rows)) if rows else np.zeros((0, self.dim), np.float32)


class NeuralTextEncoder:
    """sentence-transformers wrapper; model load failures are fatal."""

    def __init__(self, name: str, batch_size: int = 32):
        self.name = name
        self.dim = published_dim(name)
        self.batch_size = batch_size
        try:
            from sentence_transformers import SentenceTransformer
            self._model = SentenceTransformer(name)
            self._model.eval()
        except Exception as e:
            raise EncoderError(f"failed to load text encoder {name!r}: {e}") from e

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(
            texts, batch_size=self.batch_size, normalize_embeddings=False,
            convert_to_numpy=True, show_progress_bar=False,
        )
        return _normalize(vectors)


class NeuralImageEncoder:
    """CLIP vision-tower wrapper; model load failures are fatal."""

    def __init__(self, name: str, resize_edge: int, batch_size: int = 16):
        self.name = name
        self.dim = published_dim(name)
        self.resize_edge = resize_edge
        self.batch_size = batch_size
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
            self._torch = torch
            self._model = CLIPModel.from_pretrained(name)
            self._model.eval()
            self._processor = CLIPProcessor.from_pretrained(name)
        except Exception as e:
            raise EncoderError(f"failed to load image encoder {name!r}: {e}") from e

    def encode_images(self, paths: list[str]) -> np.ndarray:
        rows = []
        for start in range(0, len(paths), self.batch_size):
            batch = paths[start : start + self.batch_size]
            images = []
            for path in batch:
                with Image.open(path) as img:
                    images.append(_resize(img, self.resize_edge))
            inputs = self._processor(images=images, return_tensors="pt")
            with self._torch.no_grad():
                features = self._model.get_image_features(**inputs)
            rows.append(features.numpy())
        if not rows:
            return np.zeros((0, self.dim), np.float32)
        return _normalize(np.concatenate(rows))


def text_encoder(name: str, batch_size: int = 32):
    if name.startswith("offline/"):
        return OfflineTextEncoder(name)
    return NeuralTextEncoder(name, batch_size)


def image_encoder(name: str, resize_edge: int, batch_size: int = 16):
    if name.startswith("offline/"):
        return OfflineImageEncoder(name, resize_edge)
    return NeuralImageEncoder(name, resize_edge, batch_size)
