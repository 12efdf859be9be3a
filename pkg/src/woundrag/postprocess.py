"""Normalize raw LLM generations into schema-valid structured predictions."""
from __future__ import annotations

import json
import logging
import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .corpus import AttributeDictionary, WoundAttributes, canonicalize_attributes

log = logging.getLogger(__name__)

RESPONSE_KEY_NAMES = ("en", "english", "en_response", "response_en", "en_US")


class ExtractError(Exception):
    pass


def extract_json(raw: str) -> str:
    """Cut the first balanced JSON object out of fenced / prose-wrapped text."""
    text = "\n".join(
        line for line in raw.splitlines() if not line.lstrip().startswith("```")
    )
    start = text.find("{")
    if start < 0:
        raise ExtractError("no JSON object")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    raise ExtractError("no JSON object")


@dataclass
class StructuredPrediction:
    encounter_id: str
    attributes: WoundAttributes
    response_en: str
    discarded_fields: list[tuple[str, str]] = field(default_factory=list)
    parse_status: str = "ok"  # "ok" | "recovered" | "failed"
    raw_metadata: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "encounter_id": self.encounter_id,
            "metadata": self.attributes.as_dict(),
            "responses": self.response_en,
            "parse_status": self.parse_status,
            "discarded_fields": [list(pair) for pair in self.discarded_fields],
        }


def _failed(encounter_id: str) -> StructuredPrediction:
    return StructuredPrediction(
        encounter_id=encounter_id,
        attributes=WoundAttributes(),
        response_en="",
        parse_status="failed",
    )


def _pick_response(value, key_names: Sequence[str]) -> Optional[str]:
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        for item in value:
            if isinstance(item, str):
                return item
        return None
    if isinstance(value, dict):
        lowered = {str(k).lower(): v for k, v in value.items()}
        for key in key_names:
            v = lowered.get(key.lower())
            if isinstance(v, str):
                return v
        return None
    return None


def parse_output(
    text: str,
    dictionary: AttributeDictionary,
    encounter_id: str,
    max_response_words: int = 120,
    response_key_names: Sequence[str] = RESPONSE_KEY_NAMES,
) -> StructuredPrediction:
    """Parse an extracted JSON object into a validated prediction.

    Never raises on model output problems: unparseable input yields
    parse_status="failed", recoverable deviations yield "recovered".
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return _failed(encounter_id)
    if not isinstance(doc, dict):
        return _failed(encounter_id)

    status = "ok"
    extra_keys = set(doc) - {"metadata", "responses"}
    if extra_keys or "metadata" not in doc or "responses" not in doc:
        status = "recovered"

    metadata = doc.get("metadata")
    if not isinstance(metadata, dict):
        metadata = {}
        if doc.get("metadata") is not None:
            status = "recovered"
    attrs, corrections = canonicalize_attributes(metadata, dictionary)
    discarded = [(attr, surface) for attr, surface, canon in corrections if canon is None]
    discarded.extend((key, str(doc[key])) for key in sorted(extra_keys))
    if discarded:
        status = "recovered" if status == "ok" else status

    raw_response = doc.get("responses")
    response = _pick_response(raw_response, response_key_names)
    if response is None:
        response = ""
        if raw_response not in (None, ""):
            status = "recovered"
    elif not isinstance(raw_response, str):
        status = "recovered"  # schema wants a string; salvaged from list/object
    words = response.split()
    if len(words) > max_response_words:
        response = " ".join(words[:max_response_words])
        status = "recovered"

    return StructuredPrediction(
        encounter_id=encounter_id,
        attributes=attrs,
        response_en=response,
        discarded_fields=discarded,
        parse_status=status,
        raw_metadata=metadata,
    )


def normalize_generation(
    raw_text: str,
    dictionary: AttributeDictionary,
    encounter_id: str,
    max_response_words: int = 120,
) -> StructuredPrediction:
    """Full extract-then-parse path; every raw generation maps to one prediction."""
    try:
        extracted = extract_json(raw_text)
    except ExtractError:
        return _failed(encounter_id)
    pred = parse_output(extracted, dictionary, encounter_id, max_response_words)
    if pred.parse_status == "ok" and extracted.strip() != raw_text.strip():
        # fences or surrounding prose had to be stripped to reach the JSON
        pred = dataclasses.replace(pred, parse_status="recovered")
    return pred


def merge_predictions(preds: Sequence[StructuredPrediction]) -> list[StructuredPrediction]:
    """One record per encounter_id (last write wins), sorted by encounter_id."""
    by_id: dict[str, StructuredPrediction] = {}
    for pred in preds:
        if pred.encounter_id in by_id:
            log.warning("duplicate prediction for %s; keeping the last", pred.encounter_id)
        by_id[pred.encounter_id] = pred
    return [by_id[k] for k in sorted(by_id)]


def write_predictions(preds: Sequence[StructuredPrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pred in preds:
            f.write(json.dumps(pred.as_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_predictions(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
