"""Writer for the vector-store JSON interchange format.

The layout mirrors what the consuming pipeline reads: a header with modality,
dimension and encoder name, plus one entry per (owner_id, item_index) pair.
Vectors are stored as float32 values serialized through Python floats, which
round-trips bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class StoreWriter:
    modality: str
    dim: int
    encoder_name: str = ""
    entries: list = field(default_factory=list)

    def add(self, owner_id: str, item_index: int, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise ValueError(
                f"vector for ({owner_id!r}, {item_index}) has shape {vector.shape}, "
                f"store dim is {self.dim}"
            )
        self.entries.append((owner_id, int(item_index), vector))

    def write(self, path: str | Path) -> None:
        doc = {
            "modality": self.modality,
            "dim": self.dim,
            "encoder_name": self.encoder_name,
            "entries": [
                {"owner_id": o, "item_index": i, "vector": [float(x) for x in v]}
                for o, i, v in self.entries
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f)
