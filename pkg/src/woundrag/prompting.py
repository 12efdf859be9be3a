"""Assemble zero-shot / few-shot / RAG message sequences under a token budget."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional, Sequence, Union

from .corpus import AttributeDictionary, Encounter, ImageRef
from .retrieval import ExemplarHit

log = logging.getLogger(__name__)


class PromptError(Exception):
    pass


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: ImageRef


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    parts: tuple[Part, ...]

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    def image_count(self) -> int:
        return sum(1 for p in self.parts if isinstance(p, ImagePart))


@dataclass
class TokenBudget:
    max_prompt_tokens: int = 100_000
    chars_per_token: float = 4.0
    tokens_per_image: int = 1024

    def __post_init__(self):
        if self.max_prompt_tokens <= 0 or self.chars_per_token <= 0 or self.tokens_per_image <= 0:
            raise PromptError("token budget fields must be positive")


@dataclass
class PromptSpec:
    mode: str  # "zero_shot" | "few_shot" | "rag"
    system_instruction: str
    output_schema_text: str = ""
    max_response_words: int = 120
    fixed_exemplar_ids: tuple[str, ...] = ()
    budget: TokenBudget = field(default_factory=TokenBudget)
    include_exemplar_images: bool = True
    include_zh: bool = False

    def __post_init__(self):
        if self.max_response_words <= 0:
            raise PromptError("max_response_words must be positive")
        if (self.mode == "few_shot") != bool(self.fixed_exemplar_ids):
            raise PromptError("fixed_exemplar_ids required exactly for few_shot mode")


def _load_data_text(name: str) -> str:
    return resources.files("woundrag.data").joinpath(name).read_text("utf-8")


def render_system_instruction(
    dictionary: AttributeDictionary,
    max_response_words: int = 120,
    template: Optional[str] = None,
    schema_text: Optional[str] = None,
) -> str:
    template = template if template is not None else _load_data_text("system_template.txt")
    schema_text = schema_text if schema_text is not None else _load_data_text("output_schema.txt")
    dictionary_lines = "\n".join(
        f"- {attr}: {', '.join(sorted(vocab))}"
        for attr, vocab in sorted(dictionary.vocabularies.items())
    )
    return template.format(
        schema=schema_text, dictionary=dictionary_lines, max_words=max_response_words
    )


def default_prompt_spec(
    mode: str,
    dictionary: AttributeDictionary,
    fixed_exemplar_ids: Sequence[str] = (),
    budget: Optional[TokenBudget] = None,
    **kwargs,
) -> PromptSpec:
    return PromptSpec(
        mode=mode,
        system_instruction=render_system_instruction(
            dictionary, kwargs.get("max_response_words", 120)
        ),
        output_schema_text=_load_data_text("output_schema.txt"),
        fixed_exemplar_ids=tuple(fixed_exemplar_ids),
        budget=budget or TokenBudget(),
        **kwargs,
    )


def _query_text(enc: Encounter, include_zh: bool) -> str:
    text = f"{enc.query_title_en}\n{enc.query_content_en}".strip()
    if include_zh and (enc.query_title_zh or enc.query_content_zh):
        text += f"\n{enc.query_title_zh}\n{enc.query_content_zh}".rstrip()
    return text


def _user_turn(enc: Encounter, include_zh: bool, with_images: bool = True) -> Message:
    parts: list[Part] = []
    if with_images:
        parts.extend(ImagePart(img) for img in enc.images)
    parts.append(TextPart(_query_text(enc, include_zh)))
    return Message(role="user", parts=tuple(parts))


def serialize_gold_output(enc: Encounter) -> str:
    """The two-key JSON an exemplar's assistant turn carries."""
    if enc.gold_attributes is None or not enc.reference_responses_en:
        raise PromptError(f"exemplar {enc.encounter_id} lacks gold attributes or responses")
    doc = {
        "metadata": enc.gold_attributes.as_dict(),
        "responses": enc.reference_responses_en[0],
    }
    return json.dumps(doc, ensure_ascii=False, sort_keys=True)


def build_zero_shot(enc: Encounter, spec: PromptSpec) -> list[Message]:
    return [
        Message(role="system", parts=(TextPart(spec.system_instruction),)),
        _user_turn(enc, spec.include_zh),
    ]


def build_few_shot(
    enc: Encounter, exemplars: Sequence[Encounter], spec: PromptSpec
) -> list[Message]:
    messages = [Message(role="system", parts=(TextPart(spec.system_instruction),))]
    for ex in exemplars:
        messages.append(_user_turn(ex, spec.include_zh, with_images=spec.include_exemplar_images))
        messages.append(Message(role="assistant", parts=(TextPart(serialize_gold_output(ex)),)))
    messages.append(_user_turn(enc, spec.include_zh))
    return messages


def build_rag_prompt(
    enc: Encounter,
    hits: Sequence[ExemplarHit],
    corpus_by_id: Mapping[str, Encounter],
    spec: PromptSpec,
) -> list[Message]:
    if not hits:
        log.warning("no retrieval hits for %s; falling back to zero-shot prompt", enc.encounter_id)
        return build_zero_shot(enc, spec)
    ordered = sorted(hits, key=lambda h: (-h.fused_score, h.owner_id))
    exemplars = []
    for hit in ordered:
        if hit.owner_id not in corpus_by_id:
            raise PromptError(f"hit owner {hit.owner_id!r} not found in corpus")
        exemplars.append(corpus_by_id[hit.owner_id])
    return build_few_shot(enc, exemplars, spec)


@dataclass
class BudgetReport:
    estimated_tokens: int
    fits: bool
    dropped_exemplars: int
    messages: list[Message]


def _estimate(messages: Sequence[Message], budget: TokenBudget) -> int:
    total = 0
    for msg in messages:
        for part in msg.parts:
            if isinstance(part, TextPart):
                total += math.ceil(len(part.text) / budget.chars_per_token)
            else:
                total += budget.tokens_per_image
    return total


def check_budget(messages: Sequence[Message], budget: TokenBudget) -> BudgetReport:
    """Drop exemplar turn pairs from the low-scored end until the prompt fits.

    The system message and the live user turn are never dropped; if they alone
    exceed the budget, that is an error.
    """
    messages = list(messages)
    estimate = _estimate(messages, budget)
    if estimate <= budget.max_prompt_tokens:
        return BudgetReport(estimate, True, 0, messages)

    # exemplars sit between the system message and the final live user turn,
    # ordered best-first; drop from the end of that span
    head = messages[:1] if messages and messages[0].role == "system" else []
    tail = messages[-1:]
    middle = messages[len(head) : len(messages) - 1]
    if len(middle) % 2 != 0:
        raise PromptError("exemplar span is not user/assistant pairs")
    pairs = [middle[i : i + 2] for i in range(0, len(middle), 2)]
    dropped = 0
    while pairs and estimate > budget.max_prompt_tokens:
        pairs.pop()
        dropped += 1
        messages = head + [m for pair in pairs for m in pair] + tail
        estimate = _estimate(messages, budget)
    if estimate > budget.max_prompt_tokens:
        raise PromptError("query over budget")
    return BudgetReport(estimate, True, dropped, messages)


def serialize_messages(messages: Sequence[Message]) -> str:
    """Stable JSON rendering, e.g. for determinism checks and manifests."""
    doc = []
    for msg in messages:
        parts = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                parts.append({"type": "text", "text": part.text})
            else:
                parts.append({"type": "image", "path": part.image.path})
        doc.append({"role": msg.role, "parts": parts})
    return json.dumps(doc, ensure_ascii=False, sort_keys=True)
