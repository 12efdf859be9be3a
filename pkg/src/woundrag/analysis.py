"""Gold-free error analysis: schema conformance, genericness, intent coverage,
hallucination screening, and predicted-label distributions."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional, Sequence

from .corpus import ALL_ATTRIBUTES, SINGLE_VALUED_ATTRIBUTES, AttributeDictionary, Encounter
from .postprocess import StructuredPrediction


def default_lexicons() -> dict:
    text = resources.files("woundrag.data").joinpath("default_lexicons.json").read_text("utf-8")
    return json.loads(text)


def load_lexicons(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@dataclass
class OOVStats:
    count: int = 0
    total: int = 0
    missing: int = 0
    offending_values: list[str] = field(default_factory=list)


def schema_conformance(
    preds: Sequence[StructuredPrediction], dictionary: AttributeDictionary
) -> dict[str, OOVStats]:
    """Per-attribute out-of-vocabulary counts over raw (pre-canonicalization) values."""
    stats = {attr: OOVStats() for attr in ALL_ATTRIBUTES}
    for pred in preds:
        raw = pred.raw_metadata
        locs = raw.get("anatomic_locations")
        if locs is None:
            stats["anatomic_locations"].missing += 1
        else:
            if isinstance(locs, str):
                locs = [locs]
            for item in locs if isinstance(locs, list) else []:
                st = stats["anatomic_locations"]
                st.total += 1
                surface = str(item).strip().lower()
                if not dictionary.is_valid("anatomic_locations", surface):
                    st.count += 1
                    st.offending_values.append(str(item))
        for attr in SINGLE_VALUED_ATTRIBUTES:
            st = stats[attr]
            value = raw.get(attr)
            if value is None:
                st.missing += 1
                continue
            st.total += 1
            surface = str(value).strip().lower()
            if not dictionary.is_valid(attr, surface):
                st.count += 1
                st.offending_values.append(str(value))
    return stats


@dataclass
class GenericnessStats:
    mean_words: float = 0.0
    max_words: int = 0
    unique_count: int = 0
    duplicate_count: int = 0
    empty_count: int = 0
    stock_phrase_counts: dict = field(default_factory=dict)
    low_overlap_count: int = 0


def _content_tokens(text: str, stopwords: set[str]) -> set[str]:
    return {
        t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in stopwords
    }


def genericness(
    preds: Sequence[StructuredPrediction],
    queries: Mapping[str, str],
    stock_phrases: Sequence[str],
    threshold: float = 0.05,
    stopwords: Optional[set] = None,
) -> GenericnessStats:
    stopwords = stopwords if stopwords is not None else set(default_lexicons()["stopwords"])
    responses = [p.response_en for p in preds]
    nonempty = [r for r in responses if r.strip()]
    lengths = [len(r.split()) for r in nonempty]
    normalized = [" ".join(r.lower().split()) for r in nonempty]
    stock_counts = {
        phrase: sum(1 for r in responses if phrase.lower() in r.lower())
        for phrase in stock_phrases
    }
    low_overlap = 0
    for pred in preds:
        if not pred.response_en.strip():
            continue
        query = queries.get(pred.encounter_id, "")
        q_tokens = _content_tokens(query, stopwords)
        r_tokens = _content_tokens(pred.response_en, stopwords)
        union = q_tokens | r_tokens
        jaccard = len(q_tokens & r_tokens) / len(union) if union else 0.0
        if jaccard < threshold:
            low_overlap += 1
    return GenericnessStats(
        mean_words=sum(lengths) / len(lengths) if lengths else 0.0,
        max_words=max(lengths) if lengths else 0,
        unique_count=len(set(normalized)),
        duplicate_count=len(normalized) - len(set(normalized)),
        empty_count=len(responses) - len(nonempty),
        stock_phrase_counts=stock_counts,
        low_overlap_count=low_overlap,
    )


_DURATION_RE = re.compile(
    r"\d+\s*(?:[-–~]\s*\d+\s*)?(?:day|week|month|year)s?\b", re.IGNORECASE
)


@dataclass
class IntentStats:
    asked: int = 0
    addressed: int = 0


def _query_text_of(enc: Encounter) -> str:
    return f"{enc.query_title_en} {enc.query_content_en}".lower()


def intent_coverage(
    encounters: Sequence[Encounter],
    preds: Sequence[StructuredPrediction],
    intents: Optional[Mapping] = None,
) -> dict[str, IntentStats]:
    intents = intents if intents is not None else default_lexicons()["intents"]
    pred_by_id = {p.encounter_id: p for p in preds}
    stats = {name: IntentStats() for name in intents}
    for enc in encounters:
        query = _query_text_of(enc)
        pred = pred_by_id.get(enc.encounter_id)
        response = (pred.response_en if pred else "").lower()
        for name, spec in intents.items():
            if not any(kw in query for kw in spec["query_keywords"]):
                continue
            stats[name].asked += 1
            if name == "healing_time":
                addressed = bool(_DURATION_RE.search(response))
            else:
                addressed = any(term in response for term in spec["answer_terms"])
            if addressed:
                stats[name].addressed += 1
    return stats


@dataclass
class HallucinationStats:
    flagged_ids: list[str] = field(default_factory=list)
    flagged_count: int = 0
    hedged_count: int = 0


def _asserts_infection(response: str, negations: Sequence[str]) -> bool:
    text = response.lower()
    for phrase in negations:
        text = text.replace(phrase.lower(), " ")
    return "infect" in text


def hallucination_screen(
    encounters: Sequence[Encounter],
    preds: Sequence[StructuredPrediction],
    cue_lexicon: Optional[Sequence[str]] = None,
    negations: Optional[Sequence[str]] = None,
    hedge_markers: Optional[Sequence[str]] = None,
) -> HallucinationStats:
    """Flag infection assertions made without any infection cue in the query."""
    lex = default_lexicons()
    cues = list(cue_lexicon) if cue_lexicon is not None else lex["infection_cues"]
    negations = list(negations) if negations is not None else lex["infection_negations"]
    hedges = list(hedge_markers) if hedge_markers is not None else lex["hedge_markers"]
    pred_by_id = {p.encounter_id: p for p in preds}
    stats = HallucinationStats()
    for enc in encounters:
        pred = pred_by_id.get(enc.encounter_id)
        if pred is None:
            continue
        query = _query_text_of(enc)
        if any(cue in query for cue in cues):
            continue
        asserts = (
            _asserts_infection(pred.response_en, negations)
            or pred.attributes.infection == "infected"
        )
        if not asserts:
            continue
        stats.flagged_ids.append(enc.encounter_id)
        words = set(re.findall(r"[a-z]+", pred.response_en.lower()))
        if any(h in words for h in hedges):
            stats.hedged_count += 1
    stats.flagged_count = len(stats.flagged_ids)
    return stats


def label_distribution(
    preds: Sequence[StructuredPrediction],
) -> dict[str, list[tuple[str, int, float]]]:
    """Counts and percentages over non-absent predicted labels, per attribute."""
    counts: dict[str, dict[str, int]] = {attr: {} for attr in ALL_ATTRIBUTES}
    for pred in preds:
        for loc in pred.attributes.anatomic_locations:
            c = counts["anatomic_locations"]
            c[loc] = c.get(loc, 0) + 1
        for attr in SINGLE_VALUED_ATTRIBUTES:
            value = getattr(pred.attributes, attr)
            if value is not None:
                c = counts[attr]
                c[value] = c.get(value, 0) + 1
    result = {}
    for attr, c in counts.items():
        total = sum(c.values())
        result[attr] = [
            (label, n, 100.0 * n / total if total else 0.0)
            for label, n in sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))
        ]
    return result


@dataclass
class AnalysisReport:
    oov: dict
    genericness: GenericnessStats
    intent_coverage: dict
    hallucination: HallucinationStats
    label_distribution: dict

    def as_dict(self) -> dict:
        return {
            "oov": {
                attr: {
                    "count": st.count,
                    "total": st.total,
                    "missing": st.missing,
                    "offending_values": st.offending_values,
                }
                for attr, st in self.oov.items()
            },
            "genericness": {
                "mean_words": self.genericness.mean_words,
                "max_words": self.genericness.max_words,
                "unique_count": self.genericness.unique_count,
                "duplicate_count": self.genericness.duplicate_count,
                "empty_count": self.genericness.empty_count,
                "stock_phrase_counts": self.genericness.stock_phrase_counts,
                "low_overlap_count": self.genericness.low_overlap_count,
            },
            "intent_coverage": {
                name: {"asked": st.asked, "addressed": st.addressed}
                for name, st in self.intent_coverage.items()
            },
            "hallucination": {
                "flagged_ids": self.hallucination.flagged_ids,
                "flagged_count": self.hallucination.flagged_count,
                "hedged_count": self.hallucination.hedged_count,
            },
            "label_distribution": {
                attr: [list(row) for row in rows]
                for attr, rows in self.label_distribution.items()
            },
        }


def analyze_run(
    encounters: Sequence[Encounter],
    preds: Sequence[StructuredPrediction],
    dictionary: AttributeDictionary,
    lexicons: Optional[dict] = None,
) -> AnalysisReport:
    lex = lexicons if lexicons is not None else default_lexicons()
    queries = {e.encounter_id: f"{e.query_title_en} {e.query_content_en}" for e in encounters}
    return AnalysisReport(
        oov=schema_conformance(preds, dictionary),
        genericness=genericness(
            preds, queries, lex["stock_phrases"],
            threshold=lex.get("low_overlap_threshold", 0.05),
            stopwords=set(lex.get("stopwords", [])),
        ),
        intent_coverage=intent_coverage(encounters, preds, lex["intents"]),
        hallucination=hallucination_screen(
            encounters, preds,
            cue_lexicon=lex["infection_cues"],
            negations=lex["infection_negations"],
            hedge_markers=lex["hedge_markers"],
        ),
        label_distribution=label_distribution(preds),
    )


def render_summary(report: AnalysisReport) -> str:
    lines = ["== genericness =="]
    g = report.genericness
    lines.append(
        f"responses: mean {g.mean_words:.1f} words, max {g.max_words}; "
        f"{g.unique_count} unique, {g.duplicate_count} duplicates, {g.empty_count} empty"
    )
    for phrase, n in sorted(g.stock_phrase_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f'  "{phrase}": {n}')
    lines.append(f"low query overlap: {g.low_overlap_count}")
    lines.append("== intent coverage ==")
    for name, st in report.intent_coverage.items():
        lines.append(f"  {name}: {st.addressed}/{st.asked}")
    lines.append("== hallucination screen ==")
    h = report.hallucination
    lines.append(f"  flagged {h.flagged_count} (hedged {h.hedged_count})")
    lines.append("== schema conformance (OOV) ==")
    for attr, st in report.oov.items():
        lines.append(f"  {attr}: {st.count}/{st.total} OOV, {st.missing} missing")
    lines.append("== predicted label distribution ==")
    for attr, rows in report.label_distribution.items():
        summary = ", ".join(f"{label} {pct:.1f}%" for label, _, pct in rows[:3])
        lines.append(f"  {attr}: {summary}")
    return "\n".join(lines)
