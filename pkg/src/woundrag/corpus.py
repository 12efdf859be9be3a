"""Encounter corpus: loading, attribute canonicalization, split statistics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

SINGLE_VALUED_ATTRIBUTES = (
    "wound_type",
    "wound_thickness",
    "tissue_color",
    "drainage_amount",
    "drainage_type",
    "infection",
)
ALL_ATTRIBUTES = ("anatomic_locations",) + SINGLE_VALUED_ATTRIBUTES


class CorpusError(Exception):
    """Fatal corpus problem (missing file, duplicate encounter id)."""


@dataclass(frozen=True)
class ImageRef:
    path: str
    byte_length: int = 0
    width_px: Optional[int] = None
    height_px: Optional[int] = None


@dataclass(frozen=True)
class WoundAttributes:
    """Structured wound metadata. None marks an explicitly absent field."""

    anatomic_locations: tuple[str, ...] = ()
    wound_type: Optional[str] = None
    wound_thickness: Optional[str] = None
    tissue_color: Optional[str] = None
    drainage_amount: Optional[str] = None
    drainage_type: Optional[str] = None
    infection: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "anatomic_locations": list(self.anatomic_locations),
            "wound_type": self.wound_type,
            "wound_thickness": self.wound_thickness,
            "tissue_color": self.tissue_color,
            "drainage_amount": self.drainage_amount,
            "drainage_type": self.drainage_type,
            "infection": self.infection,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "WoundAttributes":
        return cls(
            anatomic_locations=tuple(d.get("anatomic_locations") or ()),
            **{k: d.get(k) for k in SINGLE_VALUED_ATTRIBUTES},
        )


@dataclass(frozen=True)
class AttributeDictionary:
    """Closed per-attribute vocabularies plus a synonym table."""

    vocabularies: Mapping[str, frozenset]
    synonyms: Mapping[str, Mapping[str, str]]
    version: str = "unversioned"

    def __post_init__(self):
        for attr, table in self.synonyms.items():
            vocab = self.vocabularies.get(attr, frozenset())
            for surface, target in table.items():
                if target not in vocab:
                    raise CorpusError(
                        f"synonym target {target!r} for {attr}/{surface!r} "
                        f"not in vocabulary"
                    )

    def is_valid(self, attribute: str, value: str) -> bool:
        return value in self.vocabularies.get(attribute, frozenset())

    def validate(self, attrs: WoundAttributes) -> list[str]:
        """Return a list of violation messages (empty when valid)."""
        problems = []
        for loc in attrs.anatomic_locations:
            if not self.is_valid("anatomic_locations", loc):
                problems.append(f"anatomic_locations: {loc!r}")
        for attr in SINGLE_VALUED_ATTRIBUTES:
            value = getattr(attrs, attr)
            if value is not None and not self.is_valid(attr, value):
                problems.append(f"{attr}: {value!r}")
        if len(set(attrs.anatomic_locations)) != len(attrs.anatomic_locations):
            problems.append("anatomic_locations: duplicates")
        return problems

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributeDictionary":
        return cls(
            vocabularies={k: frozenset(v) for k, v in d["vocabularies"].items()},
            synonyms={k: dict(v) for k, v in d.get("synonyms", {}).items()},
            version=d.get("version", "unversioned"),
        )

    def as_dict(self) -> dict:
        return {
            "vocabularies": {k: sorted(v) for k, v in self.vocabularies.items()},
            "synonyms": {k: dict(v) for k, v in self.synonyms.items()},
            "version": self.version,
        }


def default_dictionary() -> AttributeDictionary:
    text = resources.files("woundrag.data").joinpath("default_dictionary.json").read_text("utf-8")
    return AttributeDictionary.from_dict(json.loads(text))


def load_dictionary(path: str | Path) -> AttributeDictionary:
    with open(path, encoding="utf-8") as f:
        return AttributeDictionary.from_dict(json.load(f))


@dataclass(frozen=True)
class Encounter:
    encounter_id: str
    images: tuple[ImageRef, ...]
    query_title_en: str = ""
    query_content_en: str = ""
    query_title_zh: str = ""
    query_content_zh: str = ""
    gold_attributes: Optional[WoundAttributes] = None
    reference_responses_en: tuple[str, ...] = ()
    reference_responses_zh: tuple[str, ...] = ()

    @property
    def query_text_en(self) -> str:
        return f"{self.query_title_en} {self.query_content_en}".strip()

    def as_record(self) -> dict:
        return {
            "encounter_id": self.encounter_id,
            "images": [img.path for img in self.images],
            "query_title_en": self.query_title_en,
            "query_content_en": self.query_content_en,
            "query_title_zh": self.query_title_zh,
            "query_content_zh": self.query_content_zh,
            "gold_attributes": self.gold_attributes.as_dict() if self.gold_attributes else None,
            "reference_responses_en": list(self.reference_responses_en),
            "reference_responses_zh": list(self.reference_responses_zh),
        }


@dataclass
class LoadReport:
    errors: list[tuple[str, str]] = field(default_factory=list)  # (encounter_id, reason)

    def add(self, encounter_id: str, reason: str) -> None:
        self.errors.append((encounter_id, reason))


def _parse_record(rec: Mapping, image_root: Optional[Path]) -> Encounter:
    encounter_id = rec.get("encounter_id")
    if not encounter_id or not isinstance(encounter_id, str):
        raise ValueError("missing or empty encounter_id")
    images_raw = rec.get("images")
    if not isinstance(images_raw, list) or not images_raw:
        raise ValueError("images missing or empty")
    images = []
    for rel in images_raw:
        if not isinstance(rel, str):
            raise ValueError("image path is not a string")
        resolved = str(image_root / rel) if image_root else rel
        byte_length = 0
        if image_root:
            p = Path(resolved)
            if not p.exists():
                raise ValueError(f"image not found: {rel}")
            byte_length = p.stat().st_size
        images.append(ImageRef(path=resolved, byte_length=byte_length))
    gold = rec.get("gold_attributes")
    return Encounter(
        encounter_id=encounter_id,
        images=tuple(images),
        query_title_en=rec.get("query_title_en") or "",
        query_content_en=rec.get("query_content_en") or "",
        query_title_zh=rec.get("query_title_zh") or "",
        query_content_zh=rec.get("query_content_zh") or "",
        gold_attributes=WoundAttributes.from_dict(gold) if gold else None,
        reference_responses_en=tuple(rec.get("reference_responses_en") or ()),
        reference_responses_zh=tuple(rec.get("reference_responses_zh") or ()),
    )


def load_corpus(
    path: str | Path,
    split: str = "train",
    image_root: Optional[str | Path] = None,
) -> tuple[list[Encounter], LoadReport]:
    """Load a JSON-lines corpus file; malformed records go to the report."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    root = Path(image_root) if image_root else None
    encounters: list[Encounter] = []
    seen: set[str] = set()
    report = LoadReport()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                report.add(f"line {lineno}", f"invalid JSON: {e}")
                continue
            rec_id = rec.get("encounter_id") if isinstance(rec, dict) else None
            try:
                enc = _parse_record(rec, root)
            except (ValueError, TypeError) as e:
                report.add(str(rec_id or f"line {lineno}"), str(e))
                continue
            if enc.encounter_id in seen:
                raise CorpusError(f"duplicate encounter_id: {enc.encounter_id}")
            seen.add(enc.encounter_id)
            encounters.append(enc)
    return encounters, report


def save_corpus(encounters: Iterable[Encounter], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for enc in encounters:
            f.write(json.dumps(enc.as_record(), ensure_ascii=False, sort_keys=True) + "\n")


Correction = tuple[str, str, Optional[str]]  # (attribute, surface, canonical or None=discarded)


def _canon_one(attr: str, raw: str, dictionary: AttributeDictionary) -> tuple[Optional[str], bool]:
    """Map one surface form; returns (canonical or None, changed)."""
    surface = raw.strip().lower()
    mapped = dictionary.synonyms.get(attr, {}).get(surface, surface)
    if dictionary.is_valid(attr, mapped):
        return mapped, mapped != raw
    return None, True


def canonicalize_attributes(
    raw: Mapping[str, object], dictionary: AttributeDictionary
) -> tuple[WoundAttributes, list[Correction]]:
    """Normalize raw attribute values onto the closed dictionary.

    Values are trimmed, lowercased, passed through the synonym table, and
    membership-checked; anything still out of vocabulary is discarded. Every
    change or discard is recorded as a correction.
    """
    corrections: list[Correction] = []
    locations: list[str] = []
    raw_locs = raw.get("anatomic_locations") or ()
    if isinstance(raw_locs, str):
        raw_locs = [raw_locs]
    for item in raw_locs:
        if not isinstance(item, str):
            corrections.append(("anatomic_locations", repr(item), None))
            continue
        canonical, changed = _canon_one("anatomic_locations", item, dictionary)
        if canonical is None:
            corrections.append(("anatomic_locations", item, None))
        else:
            if changed:
                corrections.append(("anatomic_locations", item, canonical))
            if canonical not in locations:
                locations.append(canonical)

    fields: dict[str, Optional[str]] = {}
    for attr in SINGLE_VALUED_ATTRIBUTES:
        value = raw.get(attr)
        if value is None:
            fields[attr] = None
            continue
        if isinstance(value, list):
            value = value[0] if value else None
            if value is None:
                fields[attr] = None
                continue
        if not isinstance(value, str):
            corrections.append((attr, repr(value), None))
            fields[attr] = None
            continue
        canonical, changed = _canon_one(attr, value, dictionary)
        if canonical is None:
            corrections.append((attr, value, None))
        elif changed:
            corrections.append((attr, value, canonical))
        fields[attr] = canonical
    return WoundAttributes(anatomic_locations=tuple(locations), **fields), corrections


@dataclass
class CorpusStats:
    encounter_count: int
    response_count: int
    image_count: int
    single_image_count: int
    multi_image_count: int
    mean_query_words: float
    mean_response_words: float
    label_distribution: dict  # attribute -> list of (label, count, percent)

    def as_dict(self) -> dict:
        return {
            "encounter_count": self.encounter_count,
            "response_count": self.response_count,
            "image_count": self.image_count,
            "single_image_count": self.single_image_count,
            "multi_image_count": self.multi_image_count,
            "mean_query_words": self.mean_query_words,
            "mean_response_words": self.mean_response_words,
            "label_distribution": {
                attr: [list(row) for row in rows]
                for attr, rows in self.label_distribution.items()
            },
        }


def _distribution(counts: dict[str, int]) -> list[tuple[str, int, float]]:
    total = sum(counts.values())
    return [
        (label, n, 100.0 * n / total if total else 0.0)
        for label, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ]


def corpus_stats(encounters: Sequence[Encounter]) -> CorpusStats:
    from .evaluation import tokenize  # word counts share the evaluation tokenizer

    def words(text: str) -> int:
        return len([t for t in tokenize(text, "en") if any(c.isalnum() for c in t)])

    query_lengths = [words(e.query_text_en) for e in encounters]
    response_lengths = [words(r) for e in encounters for r in e.reference_responses_en]
    label_counts: dict[str, dict[str, int]] = {attr: {} for attr in ALL_ATTRIBUTES}
    for e in encounters:
        if e.gold_attributes is None:
            continue
        for loc in e.gold_attributes.anatomic_locations:
            counts = label_counts["anatomic_locations"]
            counts[loc] = counts.get(loc, 0) + 1
        for attr in SINGLE_VALUED_ATTRIBUTES:
            value = getattr(e.gold_attributes, attr)
            if value is not None:
                counts = label_counts[attr]
                counts[value] = counts.get(value, 0) + 1
    image_counts = [len(e.images) for e in encounters]
    return CorpusStats(
        encounter_count=len(encounters),
        response_count=sum(len(e.reference_responses_en) for e in encounters),
        image_count=sum(image_counts),
        single_image_count=sum(1 for n in image_counts if n == 1),
        multi_image_count=sum(1 for n in image_counts if n > 1),
        mean_query_words=sum(query_lengths) / len(query_lengths) if query_lengths else 0.0,
        mean_response_words=(
            sum(response_lengths) / len(response_lengths) if response_lengths else 0.0
        ),
        label_distribution={attr: _distribution(c) for attr, c in label_counts.items()},
    )
