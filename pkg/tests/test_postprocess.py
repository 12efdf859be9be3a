import json

import pytest
from hypothesis import given, strategies as st

from woundrag.postprocess import (
    ExtractError,
    StructuredPrediction,
    extract_json,
    merge_predictions,
    normalize_generation,
    parse_output,
    read_predictions,
    write_predictions,
)


# -- extract_json ---------------------------------------------------------------

def test_extract_fenced():
    assert extract_json('```json\n{"a":1}\n```') == '{"a":1}'


def test_extract_leading_prose_and_trailing_prose():
    assert extract_json('Here is the answer: {"a":1} hope this helps') == '{"a":1}'


def test_extract_no_braces_errors():
    with pytest.raises(ExtractError, match="no JSON object"):
        extract_json("no braces here")


def test_extract_unbalanced_braces_errors():
    with pytest.raises(ExtractError, match="no JSON object"):
        extract_json('{"a": {"b": 1}')


def test_extract_nested_and_string_braces():
    raw = 'prefix {"a": "text with } brace", "b": {"c": 2}} suffix'
    assert extract_json(raw) == '{"a": "text with } brace", "b": {"c": 2}}'


def test_extract_idempotent_on_examples():
    for raw in ('```json\n{"a":1}\n```', 'noise {"a": [1, 2]} noise', '{"a":{"b":{}}}'):
        once = extract_json(raw)
        assert extract_json(once) == once


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(), max_size=3))
def test_extract_idempotent_property(doc):
    raw = "prose before " + json.dumps(doc) + " prose after"
    once = extract_json(raw)
    assert extract_json(once) == once


# -- parse_output ---------------------------------------------------------------

GOOD = {
    "metadata": {
        "anatomic_locations": ["hand"],
        "wound_type": "traumatic",
        "wound_thickness": "stage_ii",
        "tissue_color": "red_moist",
        "drainage_amount": "minimal",
        "drainage_type": "serous",
        "infection": "not_infected",
    },
    "responses": "Clean daily and keep covered.",
}


def test_parse_well_formed(dictionary):
    pred = parse_output(json.dumps(GOOD), dictionary, "e1")
    assert pred.parse_status == "ok"
    assert pred.discarded_fields == []
    assert pred.attributes.wound_type == "traumatic"
    assert pred.response_en == "Clean daily and keep covered."


def test_parse_invalid_enum_discarded(dictionary):
    doc = json.loads(json.dumps(GOOD))
    doc["metadata"]["drainage_amount"] = "lots"
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert pred.parse_status == "recovered"
    assert ("drainage_amount", "lots") in pred.discarded_fields
    assert pred.attributes.drainage_amount is None


def test_parse_partial_thickness_discarded(dictionary):
    doc = json.loads(json.dumps(GOOD))
    doc["metadata"]["wound_thickness"] = "partial thickness"
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert ("wound_thickness", "partial thickness") in pred.discarded_fields
    assert pred.attributes.wound_thickness is None


def test_parse_extra_top_level_keys_dropped(dictionary):
    doc = dict(GOOD, reasoning="because")
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert pred.parse_status == "recovered"
    assert pred.response_en == GOOD["responses"]


def test_parse_responses_list(dictionary):
    doc = dict(GOOD, responses=["Keep it dry.", "Second option."])
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert pred.response_en == "Keep it dry."


def test_parse_responses_object(dictionary):
    doc = dict(GOOD, responses={"en": "English advice.", "zh": "中文"})
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert pred.response_en == "English advice."


def test_parse_overlong_response_truncated(dictionary):
    doc = dict(GOOD, responses=" ".join(f"word{i}" for i in range(200)))
    pred = parse_output(json.dumps(doc), dictionary, "e1", max_response_words=120)
    assert pred.parse_status == "recovered"
    assert len(pred.response_en.split()) == 120


def test_parse_unparseable_failed(dictionary):
    pred = parse_output("{not json", dictionary, "e1")
    assert pred.parse_status == "failed"
    assert pred.response_en == ""
    assert pred.attributes.wound_type is None


def test_parse_validates_against_dictionary(dictionary):
    doc = json.loads(json.dumps(GOOD))
    doc["metadata"]["anatomic_locations"] = ["sole", "leg thing"]
    pred = parse_output(json.dumps(doc), dictionary, "e1")
    assert dictionary.validate(pred.attributes) == []
    assert pred.attributes.anatomic_locations == ("foot-sole",)
    assert ("anatomic_locations", "leg thing") in pred.discarded_fields


# -- normalize_generation ---------------------------------------------------------

def test_normalize_fenced_generation(dictionary):
    raw = "```json\n" + json.dumps(GOOD) + "\n```"
    pred = normalize_generation(raw, dictionary, "e1")
    assert pred.parse_status == "recovered"
    assert pred.response_en == GOOD["responses"]


def test_normalize_garbage_never_raises(dictionary):
    for raw in ("", "total garbage", "{broken", "[1,2,3]", "{}"):
        pred = normalize_generation(raw, dictionary, "e1")
        assert pred.parse_status in ("ok", "recovered", "failed")
        assert pred.encounter_id == "e1"


def test_normalize_empty_object_recovers(dictionary):
    pred = normalize_generation("{}", dictionary, "e1")
    assert pred.parse_status == "recovered"
    assert pred.response_en == ""


# -- merge / io -------------------------------------------------------------------

def make_pred(enc_id, response="x"):
    from woundrag.corpus import WoundAttributes

    return StructuredPrediction(
        encounter_id=enc_id, attributes=WoundAttributes(), response_en=response
    )


def test_merge_sorted_distinct():
    merged = merge_predictions([make_pred("b"), make_pred("a"), make_pred("c")])
    assert [p.encounter_id for p in merged] == ["a", "b", "c"]


def test_merge_duplicate_last_wins(caplog):
    with caplog.at_level("WARNING"):
        merged = merge_predictions([make_pred("a", "first"), make_pred("a", "second")])
    assert len(merged) == 1
    assert merged[0].response_en == "second"
    assert any("duplicate" in r.message for r in caplog.records)


def test_merge_empty():
    assert merge_predictions([]) == []


def test_predictions_file_round_trip(tmp_path, dictionary):
    preds = merge_predictions(
        [parse_output(json.dumps(GOOD), dictionary, f"e{i}") for i in range(3)]
    )
    path = tmp_path / "preds.jsonl"
    write_predictions(preds, path)
    records = read_predictions(path)
    assert len(records) == 3
    assert records[0]["encounter_id"] == "e0"
    assert records[0]["responses"] == GOOD["responses"]
    assert records[0]["parse_status"] == "ok"
