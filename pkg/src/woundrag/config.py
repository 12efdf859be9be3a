"""Pipeline configuration: a TOML document with sections mapped onto dataclasses."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .generation import GenParams
from .prompting import TokenBudget
from .retrieval import RetrievalConfig


class ConfigError(Exception):
    pass


@dataclass
class PathsConfig:
    corpus: str = ""  # split to run / evaluate on
    train_corpus: str = ""  # exemplar source for few-shot / RAG
    image_root: str = ""
    text_store: str = ""
    image_store: str = ""
    query_text_store: str = ""
    query_image_store: str = ""
    output_dir: str = "runs"
    dictionary: str = ""  # empty -> packaged default
    lexicons: str = ""  # empty -> packaged default


@dataclass
class EmbeddingConfig:
    provider: str = "mock"  # "mock" | "file" | "http"
    text_dim: int = 384
    image_dim: int = 512
    text_endpoint: str = ""
    image_endpoint: str = ""


@dataclass
class PromptConfig:
    max_response_words: int = 120
    max_prompt_tokens: int = 100_000
    chars_per_token: float = 4.0
    tokens_per_image: int = 1024
    fixed_exemplar_ids: list[str] = field(default_factory=list)
    include_exemplar_images: bool = True
    include_zh: bool = False

    def budget(self) -> TokenBudget:
        return TokenBudget(
            max_prompt_tokens=self.max_prompt_tokens,
            chars_per_token=self.chars_per_token,
            tokens_per_image=self.tokens_per_image,
        )


@dataclass
class GenerationConfig:
    provider: str = "stub"  # "stub" | "http"
    endpoint: str = ""
    model_name: str = ""
    temperature: float = 0.2
    top_p: float = 0.9
    max_new_tokens: int = 4096
    seed: Optional[int] = None
    concurrency: int = 4
    credential_env: str = "WOUNDRAG_API_KEY"
    resize_images_to: int = 224
    stub_fault: str = ""

    def params(self) -> GenParams:
        return GenParams(
            temperature=self.temperature,
            top_p=self.top_p,
            max_new_tokens=self.max_new_tokens,
            model_name=self.model_name,
            seed=self.seed,
        )


@dataclass
class EvaluationConfig:
    multi_ref_aggregation: str = "max"  # "max" | "mean"


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def config_hash(self) -> str:
        doc = json.dumps(
            {
                "paths": vars(self.paths),
                "retrieval": vars(self.retrieval),
                "embedding": vars(self.embedding),
                "prompt": vars(self.prompt),
                "generation": vars(self.generation),
                "evaluation": vars(self.evaluation),
            },
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:16]


def _build(section_cls, data: dict, name: str):
    known = {f for f in section_cls.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return section_cls(**data)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    cfg = PipelineConfig(
        paths=_build(PathsConfig, doc.get("paths", {}), "paths"),
        retrieval=_build(RetrievalConfig, doc.get("retrieval", {}), "retrieval"),
        embedding=_build(EmbeddingConfig, doc.get("embedding", {}), "embedding"),
        prompt=_build(PromptConfig, doc.get("prompt", {}), "prompt"),
        generation=_build(GenerationConfig, doc.get("generation", {}), "generation"),
        evaluation=_build(EvaluationConfig, doc.get("evaluation", {}), "evaluation"),
    )
    if cfg.generation.concurrency < 1:
        raise ConfigError("generation.concurrency must be >= 1")
    return cfg
