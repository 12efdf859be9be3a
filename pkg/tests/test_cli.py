import json

import numpy as np
import pytest
from click.testing import CliRunner

from corpus_fixtures import make_synthetic_corpus
from woundrag.cli import (
    RUN_MODES,
    cmd_analyze,
    cmd_embed_check,
    cmd_eval,
    cmd_ingest,
    cmd_run,
    main,
)
from woundrag.config import ConfigError, load_config
from woundrag.corpus import load_corpus
from woundrag.embedding import (
    MockEmbeddingProvider,
    VectorStore,
    embed_image,
    embed_text,
    save_vector_store,
)


def write_config(tmp_path, corpus, train=None, **overrides):
    lines = [
        "[paths]",
        f'corpus = "{corpus}"',
        f'image_root = "{tmp_path}"',
        f'output_dir = "{tmp_path / "runs"}"',
    ]
    if train:
        lines.append(f'train_corpus = "{train}"')
    for section, body in overrides.items():
        lines.append(f"[{section}]")
        for key, value in body.items():
            if isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, bool):
                lines.append(f"{key} = {str(value).lower()}")
            else:
                lines.append(f"{key} = {value}")
    path = tmp_path / "pipeline.toml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def small_setup(tmp_path):
    corpus = make_synthetic_corpus(tmp_path, 6, prefix="test")
    train = make_synthetic_corpus(tmp_path, 8, prefix="train")
    cfg_path = write_config(tmp_path, corpus, train)
    return tmp_path, cfg_path


# -- config loading -------------------------------------------------------------

def test_load_config_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[paths]\ncorpus = "x.jsonl"\n', encoding="utf-8")
    cfg = load_config(path)
    assert cfg.retrieval.alpha == 0.5
    assert cfg.retrieval.k == 2
    assert cfg.embedding.text_dim == 384
    assert cfg.embedding.image_dim == 512
    assert cfg.generation.provider == "stub"


def test_load_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[retrieval]\nalpa = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="alpa"):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_config_hash_stable_and_sensitive(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[paths]\ncorpus = "x.jsonl"\n', encoding="utf-8")
    a = load_config(path).config_hash()
    b = load_config(path).config_hash()
    assert a == b
    path.write_text('[paths]\ncorpus = "y.jsonl"\n', encoding="utf-8")
    assert load_config(path).config_hash() != a


# -- ingest --------------------------------------------------------------------

def test_cmd_ingest_summary(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    out = tmp_path / "ingest.json"
    summary = cmd_ingest(cfg, str(out))
    assert summary["stats"]["encounter_count"] == 6
    assert summary["load_errors"] == []
    assert json.loads(out.read_text())["stats"]["encounter_count"] == 6


def test_cmd_ingest_reports_malformed_lines(tmp_path):
    corpus = make_synthetic_corpus(tmp_path, 3)
    with open(corpus, "a", encoding="utf-8") as f:
        f.write("{not json}\n")
    cfg = load_config(write_config(tmp_path, corpus))
    summary = cmd_ingest(cfg)
    assert summary["stats"]["encounter_count"] == 3
    assert len(summary["load_errors"]) == 1


# -- embed-check -----------------------------------------------------------------

def _write_stores(tmp_path, cfg, corpus_path, text_dim=384, image_dim=512, drop_last_image=False):
    encounters, _ = load_corpus(corpus_path, image_root=str(tmp_path))
    text_provider = MockEmbeddingProvider(text_dim, "text")
    image_provider = MockEmbeddingProvider(image_dim, "image")
    text_store = VectorStore("text", text_dim, text_provider.kind)
    image_store = VectorStore("image", image_dim, image_provider.kind)
    for enc in encounters:
        text_store.add(enc.encounter_id, 0, embed_text(text_provider, enc.encounter_id, enc.query_text_en))
        for idx, img in enumerate(enc.images):
            if drop_last_image and enc is encounters[-1]:
                continue
            image_store.add(enc.encounter_id, idx, embed_image(image_provider, enc.encounter_id, idx, img))
    text_path = tmp_path / "text_store.json"
    image_path = tmp_path / "image_store.json"
    save_vector_store(text_store, text_path)
    save_vector_store(image_store, image_path)
    return text_path, image_path


def test_cmd_embed_check_passes(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    text_path, image_path = _write_stores(tmp_path, cfg, cfg.paths.corpus)
    cfg.paths.text_store = str(text_path)
    cfg.paths.image_store = str(image_path)
    assert cmd_embed_check(cfg) == []


def test_cmd_embed_check_missing_image_vector(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    text_path, image_path = _write_stores(tmp_path, cfg, cfg.paths.corpus, drop_last_image=True)
    cfg.paths.text_store = str(text_path)
    cfg.paths.image_store = str(image_path)
    problems = cmd_embed_check(cfg)
    assert len(problems) == 1
    assert "missing image vector" in problems[0]


def test_cmd_embed_check_dim_mismatch(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    text_path, image_path = _write_stores(tmp_path, cfg, cfg.paths.corpus, text_dim=128)
    cfg.paths.text_store = str(text_path)
    cfg.paths.image_store = str(image_path)
    problems = cmd_embed_check(cfg)
    assert any("dim 128" in p for p in problems)


# -- run ----------------------------------------------------------------------

@pytest.mark.parametrize("mode", RUN_MODES)
def test_cmd_run_all_modes(small_setup, mode):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    out_dir = tmp_path / "runs" / mode
    manifest = cmd_run(cfg, mode, out_dir)
    assert manifest["mode"] == mode
    assert manifest["predictions"] == 6
    assert manifest["failures"] == []
    lines = (out_dir / "predictions.jsonl").read_text().strip().splitlines()
    assert len(lines) == 6
    for line in lines:
        rec = json.loads(line)
        assert set(rec) >= {"encounter_id", "metadata", "responses", "parse_status"}
    assert (out_dir / "raw.jsonl").exists()
    assert json.loads((out_dir / "manifest.json").read_text())["mode"] == mode


def test_cmd_run_unknown_mode(small_setup):
    _, cfg_path = small_setup
    with pytest.raises(ConfigError, match="unknown mode"):
        cmd_run(load_config(cfg_path), "oracle", "out")


def test_cmd_run_deterministic_predictions(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    for mode in ("zero_shot", "rag_multimodal"):
        a = tmp_path / "a" / mode
        b = tmp_path / "b" / mode
        cmd_run(cfg, mode, a)
        cmd_run(cfg, mode, b)
        assert (a / "predictions.jsonl").read_bytes() == (b / "predictions.jsonl").read_bytes()


def test_cmd_run_few_shot_requires_train(tmp_path):
    corpus = make_synthetic_corpus(tmp_path, 2)
    cfg = load_config(write_config(tmp_path, corpus))
    with pytest.raises(ConfigError, match="train_corpus"):
        cmd_run(cfg, "few_shot", tmp_path / "out")


def test_cmd_run_stub_fault_recovered(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    cfg.generation.stub_fault = "wrap_in_fences"
    manifest = cmd_run(cfg, "zero_shot", tmp_path / "faulted")
    assert manifest["predictions"] == 6
    recs = [json.loads(l) for l in (tmp_path / "faulted" / "predictions.jsonl").read_text().splitlines()]
    assert all(r["parse_status"] in ("ok", "recovered") for r in recs)


# -- eval / analyze ------------------------------------------------------------

def test_cmd_eval_identity_predictions(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    encounters, _ = load_corpus(cfg.paths.corpus, image_root=str(tmp_path))
    pred_path = tmp_path / "identity.jsonl"
    with open(pred_path, "w", encoding="utf-8") as f:
        for enc in encounters:
            rec = {"encounter_id": enc.encounter_id,
                   "metadata": {}, "responses": enc.reference_responses_en[0],
                   "parse_status": "ok"}
            f.write(json.dumps(rec) + "\n")
    out_path = tmp_path / "report.json"
    report = cmd_eval(cfg, str(pred_path), str(out_path))
    for column in ("dBLEU", "R1", "R2", "RL", "RLsum", "Avg"):
        assert abs(report.averages[column] - 100.0) < 1e-6
    assert out_path.exists()


def test_cmd_eval_after_run(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    out_dir = tmp_path / "runs" / "zero_shot"
    cmd_run(cfg, "zero_shot", out_dir)
    report = cmd_eval(cfg, str(out_dir / "predictions.jsonl"))
    assert len(report.per_encounter) == 6
    assert 0.0 <= report.averages["Avg"] <= 100.0


def test_cmd_analyze_after_run(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    out_dir = tmp_path / "runs" / "zero_shot"
    cmd_run(cfg, "zero_shot", out_dir)
    out_path = tmp_path / "analysis.json"
    report = cmd_analyze(cfg, str(out_dir / "predictions.jsonl"), str(out_path))
    assert report.genericness.unique_count + report.genericness.duplicate_count <= 6
    assert report.genericness.mean_words > 0
    doc = json.loads(out_path.read_text())
    assert "oov" in doc and "label_distribution" in doc


# -- click wiring -----------------------------------------------------------------

def test_click_ingest(small_setup):
    _, cfg_path = small_setup
    result = CliRunner().invoke(main, ["ingest", "--config", str(cfg_path)])
    assert result.exit_code == 0
    assert '"encounter_count": 6' in result.output


def test_click_run_and_eval(small_setup):
    tmp_path, cfg_path = small_setup
    runner = CliRunner()
    out_dir = tmp_path / "cli_run"
    result = runner.invoke(
        main, ["run", "--config", str(cfg_path), "--mode", "rag_text", "--out", str(out_dir)]
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        main, ["eval", "--config", str(cfg_path),
               "--predictions", str(out_dir / "predictions.jsonl")]
    )
    assert result.exit_code == 0, result.output
    assert "dBLEU" in result.output


def test_click_run_alpha_k_overrides(small_setup):
    tmp_path, cfg_path = small_setup
    runner = CliRunner()
    out_dir = tmp_path / "cli_alpha"
    result = runner.invoke(
        main, ["run", "--config", str(cfg_path), "--mode", "rag_multimodal",
               "--alpha", "1.0", "--k", "3", "--out", str(out_dir)]
    )
    assert result.exit_code == 0, result.output
    assert (out_dir / "predictions.jsonl").exists()


def test_click_embed_check_failure_exit_code(small_setup):
    tmp_path, cfg_path = small_setup
    cfg_text = cfg_path.read_text()
    text_path, image_path = _write_stores(
        tmp_path, load_config(cfg_path),
        load_config(cfg_path).paths.corpus, drop_last_image=True,
    )
    # the fixture config only has a [paths] section, so appending keys lands there
    cfg_path.write_text(
        cfg_text + f'text_store = "{text_path}"\nimage_store = "{image_path}"\n'
    )
    result = CliRunner().invoke(main, ["embed-check", "--config", str(cfg_path)])
    assert result.exit_code == 1
    assert "missing image vector" in result.output


def test_click_analyze(small_setup):
    tmp_path, cfg_path = small_setup
    cfg = load_config(cfg_path)
    out_dir = tmp_path / "runs" / "few_shot"
    cmd_run(cfg, "few_shot", out_dir)
    result = CliRunner().invoke(
        main, ["analyze", "--config", str(cfg_path),
               "--predictions", str(out_dir / "predictions.jsonl")]
    )
    assert result.exit_code == 0, result.output
    assert "label distribution" in result.output.lower() or "wound_type" in result.output
