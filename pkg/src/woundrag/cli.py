"""Command-line pipeline: ingest, embed-check, run, eval, analyze."""
from __future__ import annotations

import datetime
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import click

from . import analysis as analysis_mod
from . import evaluation as evaluation_mod
from .config import ConfigError, PipelineConfig, load_config
from .corpus import (
    AttributeDictionary,
    Encounter,
    canonicalize_attributes,
    corpus_stats,
    default_dictionary,
    load_corpus,
    load_dictionary,
)
from .embedding import (
    FileEmbeddingProvider,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    VectorStore,
    embed_image,
    embed_text,
    load_vector_store,
)
from .generation import HttpChatClient, StubChatClient
from .postprocess import merge_predictions, normalize_generation, read_predictions, write_predictions
from .prompting import (
    build_few_shot,
    build_rag_prompt,
    build_zero_shot,
    check_budget,
    default_prompt_spec,
)
from .retrieval import RetrievalConfig, build_index, fused_retrieve

log = logging.getLogger(__name__)

RUN_MODES = ("zero_shot", "few_shot", "rag_text", "rag_multimodal")


class PipelineError(Exception):
    pass


def _dictionary_for(cfg: PipelineConfig) -> AttributeDictionary:
    if cfg.paths.dictionary:
        return load_dictionary(cfg.paths.dictionary)
    return default_dictionary()


def _lexicons_for(cfg: PipelineConfig) -> dict:
    if cfg.paths.lexicons:
        return analysis_mod.load_lexicons(cfg.paths.lexicons)
    return analysis_mod.default_lexicons()


def cmd_ingest(cfg: PipelineConfig, out_path: Optional[str] = None) -> dict:
    dictionary = _dictionary_for(cfg)
    encounters, report = load_corpus(
        cfg.paths.corpus, image_root=cfg.paths.image_root or None
    )
    corrections_total = 0
    for enc in encounters:
        if enc.gold_attributes is not None:
            _, corrections = canonicalize_attributes(enc.gold_attributes.as_dict(), dictionary)
            corrections_total += len(corrections)
    stats = corpus_stats(encounters)
    summary = {
        "stats": stats.as_dict(),
        "load_errors": [list(e) for e in report.errors],
        "gold_attribute_corrections": corrections_total,
    }
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def cmd_embed_check(cfg: PipelineConfig) -> list[str]:
    """Validate vector-store coverage and dimensions against the corpus."""
    encounters, _ = load_corpus(cfg.paths.corpus, image_root=cfg.paths.image_root or None)
    problems: list[str] = []
    text_store = load_vector_store(cfg.paths.text_store)
    if text_store.dim != cfg.embedding.text_dim:
        problems.append(
            f"text store dim {text_store.dim} != configured {cfg.embedding.text_dim}"
        )
    image_store = load_vector_store(cfg.paths.image_store)
    if image_store.dim != cfg.embedding.image_dim:
        problems.append(
            f"image store dim {image_store.dim} != configured {cfg.embedding.image_dim}"
        )
    text_keys = {(o, i) for o, i, _ in text_store.entries}
    image_keys = {(o, i) for o, i, _ in image_store.entries}
    for enc in encounters:
        if (enc.encounter_id, 0) not in text_keys:
            problems.append(f"missing text vector for {enc.encounter_id}")
        for idx in range(len(enc.images)):
            if (enc.encounter_id, idx) not in image_keys:
                problems.append(f"missing image vector for {enc.encounter_id}[{idx}]")
    return problems


def _text_provider(cfg: PipelineConfig, store_path: str = ""):
    kind = cfg.embedding.provider
    if kind == "mock":
        return MockEmbeddingProvider(cfg.embedding.text_dim, "text")
    if kind == "file":
        return FileEmbeddingProvider(load_vector_store(store_path or cfg.paths.text_store))
    if kind == "http":
        return HttpEmbeddingProvider(cfg.embedding.text_endpoint, cfg.embedding.text_dim, "text")
    raise ConfigError(f"unknown embedding provider {kind!r}")


def _image_provider(cfg: PipelineConfig, store_path: str = ""):
    kind = cfg.embedding.provider
    if kind == "mock":
        return MockEmbeddingProvider(cfg.embedding.image_dim, "image")
    if kind == "file":
        return FileEmbeddingProvider(load_vector_store(store_path or cfg.paths.image_store))
    if kind == "http":
        return HttpEmbeddingProvider(cfg.embedding.image_endpoint, cfg.embedding.image_dim, "image")
    raise ConfigError(f"unknown embedding provider {kind!r}")


def _build_stores(cfg: PipelineConfig, train: Sequence[Encounter]) -> tuple[VectorStore, VectorStore]:
    """Materialize exemplar vector stores, embedding with the configured provider."""
    if cfg.embedding.provider == "file":
        return load_vector_store(cfg.paths.text_store), load_vector_store(cfg.paths.image_store)
    text_provider = _text_provider(cfg)
    image_provider = _image_provider(cfg)
    text_store = VectorStore("text", cfg.embedding.text_dim, text_provider.kind)
    image_store = VectorStore("image", cfg.embedding.image_dim, image_provider.kind)
    for enc in train:
        text_store.add(enc.encounter_id, 0, embed_text(text_provider, enc.encounter_id, enc.query_text_en))
        for idx, img in enumerate(enc.images):
            image_store.add(enc.encounter_id, idx, embed_image(image_provider, enc.encounter_id, idx, img))
    return text_store, image_store


def _generation_client(cfg: PipelineConfig, dictionary: AttributeDictionary):
    if cfg.generation.provider == "stub":
        return StubChatClient(dictionary=dictionary, fault=cfg.generation.stub_fault or None)
    if cfg.generation.provider == "http":
        if not cfg.generation.endpoint:
            raise ConfigError("generation.endpoint required for the http provider")
        return HttpChatClient(
            endpoint=cfg.generation.endpoint,
            model_name=cfg.generation.model_name,
            credential_env=cfg.generation.credential_env,
            resize_images_to=cfg.generation.resize_images_to or None,
        )
    raise ConfigError(f"unknown generation provider {cfg.generation.provider!r}")


def cmd_run(cfg: PipelineConfig, mode: str, out_dir: str | Path) -> dict:
    """Run one pipeline mode over the corpus and write predictions + raw log."""
    if mode not in RUN_MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {RUN_MODES}")
    dictionary = _dictionary_for(cfg)
    encounters, load_report = load_corpus(
        cfg.paths.corpus, image_root=cfg.paths.image_root or None
    )
    train: list[Encounter] = []
    train_by_id: dict[str, Encounter] = {}
    if mode != "zero_shot":
        if not cfg.paths.train_corpus:
            raise ConfigError(f"mode {mode} requires paths.train_corpus")
        train, _ = load_corpus(cfg.paths.train_corpus, image_root=cfg.paths.image_root or None)
        train_by_id = {e.encounter_id: e for e in train}

    text_index = image_index = None
    text_query_provider = image_query_provider = None
    if mode in ("rag_text", "rag_multimodal"):
        if cfg.embedding.provider == "file" and not (
            cfg.paths.text_store and (mode == "rag_text" or cfg.paths.image_store)
        ):
            raise ConfigError("rag modes with the file provider require vector store paths")
        text_store, image_store = _build_stores(cfg, train)
        text_index = build_index(text_store)
        image_index = build_index(image_store) if mode == "rag_multimodal" else None
        if cfg.embedding.provider == "file":
            text_query_provider = _text_provider(
                cfg, cfg.paths.query_text_store or cfg.paths.text_store
            )
            image_query_provider = _image_provider(
                cfg, cfg.paths.query_image_store or cfg.paths.image_store
            )
        else:
            text_query_provider = _text_provider(cfg)
            image_query_provider = _image_provider(cfg)

    spec_mode = "zero_shot" if mode == "zero_shot" else ("few_shot" if mode == "few_shot" else "rag")
    fixed_ids: list[str] = []
    if mode == "few_shot":
        fixed_ids = list(cfg.prompt.fixed_exemplar_ids)
        if not fixed_ids:
            fixed_ids = [
                e.encounter_id for e in train
                if e.gold_attributes is not None and e.reference_responses_en
            ][:2]
        if not fixed_ids:
            raise ConfigError("few_shot mode requires exemplars with gold outputs")
    spec = default_prompt_spec(
        spec_mode,
        dictionary,
        fixed_exemplar_ids=fixed_ids,
        budget=cfg.prompt.budget(),
        max_response_words=cfg.prompt.max_response_words,
        include_exemplar_images=cfg.prompt.include_exemplar_images,
        include_zh=cfg.prompt.include_zh,
    )

    retrieval_cfg = RetrievalConfig(
        alpha=cfg.retrieval.alpha,
        k=cfg.retrieval.k,
        mode="multimodal" if mode == "rag_multimodal" else "text_only",
        image_aggregation=cfg.retrieval.image_aggregation,
    )

    def assemble(enc: Encounter):
        if mode == "zero_shot":
            messages = build_zero_shot(enc, spec)
        elif mode == "few_shot":
            exemplars = [train_by_id[i] for i in fixed_ids]
            messages = build_few_shot(enc, exemplars, spec)
        else:
            q_text = embed_text(text_query_provider, enc.encounter_id, enc.query_text_en)
            q_images = []
            if mode == "rag_multimodal":
                q_images = [
                    embed_image(image_query_provider, enc.encounter_id, idx, img)
                    for idx, img in enumerate(enc.images)
                ]
            hits = fused_retrieve(
                text_index, image_index, q_text, q_images, retrieval_cfg,
                exclude={enc.encounter_id},
            )
            messages = build_rag_prompt(enc, hits, train_by_id, spec)
        return check_budget(messages, spec.budget).messages

    client = _generation_client(cfg, dictionary)
    params = cfg.generation.params()

    def work(enc: Encounter):
        messages = assemble(enc)
        return client.generate(messages, params, encounter_id=enc.encounter_id)

    raws = [None] * len(encounters)
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=cfg.generation.concurrency) as pool:
        futures = {pool.submit(work, enc): i for i, enc in enumerate(encounters)}
        for future, i in futures.items():
            try:
                raws[i] = future.result()
            except Exception as e:  # per-encounter failures never abort the run
                failures.append((encounters[i].encounter_id, str(e)))
                log.error("generation failed for %s: %s", encounters[i].encounter_id, e)

    preds = [
        normalize_generation(
            raw.text, dictionary, raw.encounter_id, cfg.prompt.max_response_words
        )
        for raw in raws
        if raw is not None
    ]
    merged = merge_predictions(preds)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_predictions(merged, out_dir / "predictions.jsonl")
    now = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(out_dir / "raw.jsonl", "w", encoding="utf-8") as f:
        for raw in raws:
            if raw is not None:
                f.write(json.dumps(raw.as_record(timestamp=now), ensure_ascii=False) + "\n")
    manifest = {
        "mode": mode,
        "config_hash": cfg.config_hash(),
        "timestamp": now,
        "encounters": len(encounters),
        "predictions": len(merged),
        "failures": [list(p) for p in failures],
        "load_errors": [list(e) for e in load_report.errors],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def cmd_eval(
    cfg: PipelineConfig, predictions_path: str, out_path: Optional[str] = None
) -> evaluation_mod.MetricReport:
    encounters, _ = load_corpus(cfg.paths.corpus, image_root=cfg.paths.image_root or None)
    gold = {e.encounter_id: list(e.reference_responses_en) for e in encounters}
    predictions = read_predictions(predictions_path)
    report = evaluation_mod.evaluate_run(
        predictions, gold, cfg.evaluation.multi_ref_aggregation
    )
    if out_path:
        evaluation_mod.write_report(report, out_path)
    return report


def cmd_analyze(
    cfg: PipelineConfig, predictions_path: str, out_path: Optional[str] = None
) -> analysis_mod.AnalysisReport:
    from .corpus import WoundAttributes
    from .postprocess import StructuredPrediction

    dictionary = _dictionary_for(cfg)
    encounters, _ = load_corpus(cfg.paths.corpus, image_root=cfg.paths.image_root or None)
    preds = []
    for rec in read_predictions(predictions_path):
        preds.append(
            StructuredPrediction(
                encounter_id=rec["encounter_id"],
                attributes=WoundAttributes.from_dict(rec.get("metadata") or {}),
                response_en=rec.get("responses") or "",
                parse_status=rec.get("parse_status", "ok"),
                raw_metadata=rec.get("metadata") or {},
            )
        )
    report = analysis_mod.analyze_run(encounters, preds, dictionary, _lexicons_for(cfg))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(report.as_dict(), f, indent=2, sort_keys=True)
    return report


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)


@main.command("ingest")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def ingest_cmd(config_path: str, out_path: Optional[str]):
    """Load, canonicalize, and summarize the corpus."""
    try:
        summary = cmd_ingest(load_config(config_path), out_path)
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(json.dumps(summary["stats"], indent=2, sort_keys=True))
    if summary["load_errors"]:
        click.echo(f"{len(summary['load_errors'])} record-level errors", err=True)


@main.command("embed-check")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def embed_check_cmd(config_path: str):
    """Validate vector stores against the corpus."""
    try:
        problems = cmd_embed_check(load_config(config_path))
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    if problems:
        for p in problems:
            click.echo(p, err=True)
        sys.exit(1)
    click.echo("vector stores OK")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(RUN_MODES), required=True)
@click.option("--alpha", type=float, default=None, help="Override retrieval alpha.")
@click.option("--k", type=int, default=None, help="Override retrieval k.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def run_cmd(config_path: str, mode: str, alpha: Optional[float], k: Optional[int], out_dir: str):
    """Run the generation pipeline in one ablation mode."""
    try:
        cfg = load_config(config_path)
        if alpha is not None:
            cfg.retrieval.alpha = alpha
        if k is not None:
            cfg.retrieval.k = k
        manifest = cmd_run(cfg, mode, out_dir)
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(
        f"{manifest['predictions']} predictions "
        f"({len(manifest['failures'])} failures) -> {out_dir}"
    )


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_cmd(config_path: str, predictions: str, out_path: Optional[str]):
    """Score predictions with dBLEU and ROUGE."""
    try:
        report = cmd_eval(load_config(config_path), predictions, out_path)
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(evaluation_mod.render_table(report))
    if report.skipped:
        click.echo(f"skipped {len(report.skipped)} encounters", err=True)


@main.command("analyze")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def analyze_cmd(config_path: str, predictions: str, out_path: Optional[str]):
    """Run the error-analysis heuristics over predictions."""
    try:
        report = cmd_analyze(load_config(config_path), predictions, out_path)
    except Exception as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(analysis_mod.render_summary(report))


if __name__ == "__main__":
    main()
