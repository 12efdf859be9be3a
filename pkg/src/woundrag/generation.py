"""Chat-completion client plus a deterministic offline stub."""
from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus import AttributeDictionary, default_dictionary
from .embedding import fnv1a64
from .prompting import ImagePart, Message, TextPart

log = logging.getLogger(__name__)


class GenerationError(Exception):
    pass


@dataclass
class GenParams:
    temperature: float = 0.2
    top_p: float = 0.9
    max_new_tokens: int = 4096
    model_name: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise GenerationError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise GenerationError("top_p must be in (0, 1]")
        if self.max_new_tokens <= 0:
            raise GenerationError("max_new_tokens must be positive")


@dataclass
class RawGeneration:
    encounter_id: str
    text: str
    latency_ms: float = 0.0
    provider_meta: dict = field(default_factory=dict)
    attempt_count: int = 1

    def as_record(self, timestamp: Optional[str] = None) -> dict:
        rec = {
            "encounter_id": self.encounter_id,
            "text": self.text,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
        }
        if timestamp is not None:
            rec["timestamp"] = timestamp
        return rec


def _image_data_url(path: str, resize_to: Optional[int] = None) -> str:
    data = Path(path).read_bytes()
    if resize_to:
        try:
            import io

            from PIL import Image

            img = Image.open(io.BytesIO(data)).convert("RGB")
            img = img.resize((resize_to, resize_to))
            buf = io.BytesIO()
            img.save(buf, format="JPEG")
            data = buf.getvalue()
        except Exception:
            log.warning("image resize failed for %s; sending original bytes", path)
    return "data:image/jpeg;base64," + base64.b64encode(data).decode("ascii")


def messages_to_wire(
    messages: Sequence[Message], resize_images_to: Optional[int] = 224
) -> list[dict]:
    wire = []
    for msg in messages:
        content = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            elif isinstance(part, ImagePart):
                content.append({
                    "type": "image_url",
                    "image_url": {"url": _image_data_url(part.image.path, resize_images_to)},
                })
        wire.append({"role": msg.role, "content": content})
    return wire


class HttpChatClient:
    """Chat-completion client with retries and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        model_name: str = "",
        credential_env: str = "WOUNDRAG_API_KEY",
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
        resize_images_to: Optional[int] = 224,
        response_text_path: Sequence = ("choices", 0, "message", "content"),
    ):
        self.endpoint = endpoint
        self.model_name = model_name
        self.credential_env = credential_env
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.resize_images_to = resize_images_to
        self.response_text_path = tuple(response_text_path)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        credential = os.environ.get(self.credential_env)
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        return headers

    def _extract_text(self, doc) -> str:
        node = doc
        for step in self.response_text_path:
            node = node[step]
        return node if isinstance(node, str) else json.dumps(node)

    def generate(
        self, messages: Sequence[Message], params: GenParams, encounter_id: str = ""
    ) -> RawGeneration:
        import requests

        payload = {
            "model": params.model_name or self.model_name,
            "messages": messages_to_wire(messages, self.resize_images_to),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        start = time.monotonic()
        attempts = 0
        last_error = None
        while attempts < self.max_attempts:
            attempts += 1
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as e:
                last_error = str(e)
            else:
                if resp.status_code == 200:
                    text = self._extract_text(resp.json())
                    return RawGeneration(
                        encounter_id=encounter_id,
                        text=text,
                        latency_ms=1000.0 * (time.monotonic() - start),
                        provider_meta={"status": resp.status_code},
                        attempt_count=attempts,
                    )
                if resp.status_code not in (429,) and resp.status_code < 500:
                    raise GenerationError(
                        f"endpoint returned {resp.status_code}: {resp.text[:500]}"
                    )
                last_error = f"status {resp.status_code}"
            if attempts < self.max_attempts:
                time.sleep(self.backoff_s * 2 ** (attempts - 1))
        raise GenerationError(
            f"generation failed after {attempts} attempts ({last_error})"
        )


_STUB_RESPONSES = (
    "Clean the wound gently with saline, pat dry, and cover with a sterile dressing. "
    "Change the dressing daily and watch the wound as it heals.",
    "Wash the area with mild soap and water, apply a thin layer of antibiotic ointment, "
    "and keep it covered. It should improve within one to two weeks.",
    "Keep the wound clean and dry, avoid picking at any scab, and protect it with a "
    "bandage during the day. See a clinician if pain or redness increases.",
    "Rinse with clean water, cover with a non-stick dressing, and rest the area. "
    "Most wounds like this heal in about two weeks with daily care.",
)


class StubChatClient:
    """Deterministic offline stand-in for the real endpoint.

    The produced text is a schema-valid two-key JSON answer seeded by a hash of
    the live user text. Fault modes reproduce common model misbehavior.
    """

    FAULTS = ("wrap_in_fences", "prepend_prose", "invalid_enum", "empty")

    def __init__(self, dictionary: Optional[AttributeDictionary] = None, fault: Optional[str] = None):
        if fault is not None and fault not in self.FAULTS:
            raise GenerationError(f"unknown fault mode {fault!r}")
        self.dictionary = dictionary or default_dictionary()
        self.fault = fault

    def _pick(self, attr: str, seed: int) -> str:
        vocab = sorted(self.dictionary.vocabularies[attr])
        return vocab[seed % len(vocab)]

    def generate(
        self, messages: Sequence[Message], params: GenParams, encounter_id: str = ""
    ) -> RawGeneration:
        live = ""
        for msg in reversed(messages):
            if msg.role == "user":
                live = msg.text()
                break
        seed = fnv1a64(live.encode("utf-8"))
        if self.fault == "empty":
            return RawGeneration(encounter_id=encounter_id, text="")
        metadata = {
            "anatomic_locations": [self._pick("anatomic_locations", seed)],
            "wound_type": self._pick("wound_type", seed >> 8),
            "wound_thickness": self._pick("wound_thickness", seed >> 16),
            "tissue_color": self._pick("tissue_color", seed >> 24),
            "drainage_amount": self._pick("drainage_amount", seed >> 32),
            "drainage_type": self._pick("drainage_type", seed >> 40),
            "infection": self._pick("infection", seed >> 48),
        }
        if self.fault == "invalid_enum":
            metadata["drainage_amount"] = "lots"
        doc = {
            "metadata": metadata,
            "responses": _STUB_RESPONSES[seed % len(_STUB_RESPONSES)],
        }
        text = json.dumps(doc, ensure_ascii=False, sort_keys=True)
        if self.fault == "wrap_in_fences":
            text = f"```json\n{text}\n```"
        elif self.fault == "prepend_prose":
            text = "Here is the structured answer you asked for: " + text
        return RawGeneration(encounter_id=encounter_id, text=text)


def stub_generate(
    messages: Sequence[Message],
    params: GenParams,
    dictionary: Optional[AttributeDictionary] = None,
    fault: Optional[str] = None,
) -> RawGeneration:
    return StubChatClient(dictionary=dictionary, fault=fault).generate(messages, params)


def generate(client, messages: Sequence[Message], params: GenParams,
             encounter_id: str = "") -> RawGeneration:
    return client.generate(messages, params, encounter_id=encounter_id)
