"""Batch export of corpus embeddings into vector-store files."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .corpus_io import read_corpus
from .encoders import (
    DEFAULT_IMAGE_ENCODER,
    DEFAULT_TEXT_ENCODER,
    image_encoder,
    published_dim,
    text_encoder,
)
from .store_io import StoreWriter

log = logging.getLogger("embed_export")


@dataclass
class ExportConfig:
    corpus: str
    image_root: str = ""
    text_store: str = "text_store.json"
    image_store: str = "image_store.json"
    text_encoder_name: str = DEFAULT_TEXT_ENCODER
    image_encoder_name: str = DEFAULT_IMAGE_ENCODER
    batch_size: int = 32
    resize_edge: int = 224

    def __post_init__(self):
        if self.resize_edge <= 0:
            raise ValueError("resize_edge must be > 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")


@dataclass
class ExportResult:
    store_path: str
    exported: int
    failures: list[tuple[str, str]] = field(default_factory=list)  # (key, reason)


def export_text_vectors(config: ExportConfig) -> ExportResult:
    """Embed each encounter's query text and write the text store.

    One vector per encounter at item_index 0. Encoder load problems are fatal;
    the corpus must parse cleanly.
    """
    entries = read_corpus(config.corpus, config.image_root)
    encoder = text_encoder(config.text_encoder_name, config.batch_size)
    writer = StoreWriter("text", published_dim(config.text_encoder_name),
                         config.text_encoder_name)
    if entries:
        vectors = encoder.encode_texts([e.query_text for e in entries])
        for entry, vector in zip(entries, vectors):
            writer.add(entry.encounter_id, 0, vector)
    writer.write(config.text_store)
    return ExportResult(config.text_store, len(writer.entries))


def export_image_vectors(config: ExportConfig) -> ExportResult:
    """Embed every (encounter, image) pair and write the image store.

    Unreadable images are reported as failures; the store is still written
    for everything that encoded successfully.
    """
    entries = read_corpus(config.corpus, config.image_root)
    encoder = image_encoder(config.image_encoder_name, config.resize_edge,
                            config.batch_size)
    writer = StoreWriter("image", published_dim(config.image_encoder_name),
                         config.image_encoder_name)
    failures: list[tuple[str, str]] = []
    for entry in entries:
        for idx, path in enumerate(entry.image_paths):
            key = f"{entry.encounter_id}[{idx}]"
            try:
                vector = encoder.encode_images([path])[0]
            except Exception as e:
                failures.append((key, str(e)))
                log.warning("skipping %s: %s", key, e)
                continue
            writer.add(entry.encounter_id, idx, vector)
    writer.write(config.image_store)
    return ExportResult(config.image_store, len(writer.entries), failures)
