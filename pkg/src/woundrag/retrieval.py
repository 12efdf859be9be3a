"""Exact k-NN over vector stores with alpha-weighted text/image score fusion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .embedding import VectorStore, l2_normalize

log = logging.getLogger(__name__)


class RetrievalError(Exception):
    pass


@dataclass
class RetrievalConfig:
    alpha: float = 0.5  # weight on text similarity
    k: int = 2
    mode: str = "multimodal"  # "text_only" | "multimodal"
    image_aggregation: str = "mean"  # over query images: "mean" | "max"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise RetrievalError(f"alpha must be in [0,1], got {self.alpha}")
        if self.k < 1:
            raise RetrievalError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ExemplarHit:
    owner_id: str
    text_score: float
    image_score: Optional[float]
    fused_score: float


@dataclass
class Index:
    modality: str
    dim: int
    ids: list[str]
    matrix: np.ndarray  # len(ids) x dim, unit rows

    _row_of: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._row_of = {owner: i for i, owner in enumerate(self.ids)}


def build_index(store: VectorStore, aggregation: str = "mean") -> Index:
    """One unit row per owner; multi-image owners are mean-aggregated."""
    if not store.entries:
        raise RetrievalError("cannot build an index from an empty store")
    if aggregation == "max":
        raise RetrievalError(
            "max aggregation applies at query scoring, not index build; use mean"
        )
    if aggregation != "mean":
        raise RetrievalError(f"unknown aggregation {aggregation!r}")
    grouped: dict[str, list[np.ndarray]] = {}
    order: list[str] = []
    for owner_id, _, vec in store.entries:
        if owner_id not in grouped:
            grouped[owner_id] = []
            order.append(owner_id)
        grouped[owner_id].append(vec)
    rows = []
    for owner_id in order:
        vecs = grouped[owner_id]
        row = vecs[0] if len(vecs) == 1 else l2_normalize(np.mean(vecs, axis=0))
        rows.append(row)
    return Index(modality=store.modality, dim=store.dim, ids=order,
                 matrix=np.stack(rows).astype(np.float32))


def knn(index: Index, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product; ties broken by ascending owner_id."""
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (index.dim,):
        raise RetrievalError(f"query dim {query.shape} != index dim {index.dim}")
    scores = index.matrix @ query
    ranked = sorted(zip(index.ids, scores.tolist()), key=lambda p: (-p[1], p[0]))
    return ranked[: min(k, len(index.ids))]


def _image_owner_score(
    image_index: Index, owner_id: str, q_image_vectors: Sequence[np.ndarray], aggregation: str
) -> float:
    row = image_index.matrix[image_index._row_of[owner_id]]
    dots = [float(np.dot(q, row)) for q in q_image_vectors]
    return max(dots) if aggregation == "max" else sum(dots) / len(dots)


def fused_retrieve(
    text_index: Index,
    image_index: Optional[Index],
    q_text: np.ndarray,
    q_image_vectors: Sequence[np.ndarray],
    cfg: RetrievalConfig,
    exclude: frozenset | set = frozenset(),
) -> list[ExemplarHit]:
    """Top-k exemplars by alpha-fused text/image cosine similarity."""
    mode = cfg.mode
    if mode == "multimodal" and not q_image_vectors:
        log.warning("multimodal retrieval with no query image vectors; using text only")
        mode = "text_only"
    if mode == "multimodal":
        if image_index is None:
            raise RetrievalError("multimodal mode requires an image index")
        if set(text_index.ids) != set(image_index.ids):
            raise RetrievalError("text and image indices cover different owner sets")

    text_scores = dict(knn(text_index, q_text, len(text_index.ids)))
    hits = []
    for owner_id in text_index.ids:
        if owner_id in exclude:
            continue
        t = text_scores[owner_id]
        if mode == "multimodal":
            i = _image_owner_score(image_index, owner_id, q_image_vectors, cfg.image_aggregation)
            fused = cfg.alpha * t + (1.0 - cfg.alpha) * i
        else:
            i = None
            fused = t
        hits.append(ExemplarHit(owner_id=owner_id, text_score=t, image_score=i, fused_score=fused))
    hits.sort(key=lambda h: (-h.fused_score, h.owner_id))
    return hits[: min(cfg.k, len(hits))]
