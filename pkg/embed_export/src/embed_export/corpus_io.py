"""Minimal reader for the corpus JSONL interchange format.

Only the fields this tool needs are materialized: encounter id, the English
query text, and the image paths. Everything else in a record is ignored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class CorpusReadError(Exception):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    encounter_id: str
    query_text: str
    image_paths: tuple[str, ...] = field(default_factory=tuple)


def read_corpus(path: str | Path, image_root: str | Path = "") -> list[CorpusEntry]:
    """Load encounters from JSONL; malformed lines and duplicate ids are fatal.

    The query text is title and content joined with a single space, matching
    how the consuming pipeline embeds queries.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusReadError(f"corpus file not found: {path}")
    root = Path(image_root) if image_root else None
    entries: list[CorpusEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusReadError(f"line {lineno}: invalid JSON ({e})") from e
            enc_id = rec.get("encounter_id")
            if not enc_id:
                raise CorpusReadError(f"line {lineno}: missing encounter_id")
            if enc_id in seen:
                raise CorpusReadError(f"line {lineno}: duplicate encounter_id {enc_id!r}")
            seen.add(enc_id)
            title = rec.get("query_title_en") or ""
            content = rec.get("query_content_en") or ""
            text = f"{title} {content}".strip()
            images = tuple(
                str(root / p) if root else str(p) for p in rec.get("images", [])
            )
            entries.append(CorpusEntry(enc_id, text, images))
    return entries
