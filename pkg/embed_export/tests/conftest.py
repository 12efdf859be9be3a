import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from export_fixtures import write_png


@pytest.fixture()
def three_encounter_fixture(tmp_path):
    """A 3-encounter corpus with real image files; returns (corpus, image_root)."""
    colors = [(200, 30, 30), (30, 200, 30), (30, 30, 200), (120, 120, 0)]
    records = []
    color_iter = iter(colors)
    for i, image_count in enumerate((1, 2, 1)):
        enc_id = f"enc{i}"
        names = []
        for j in range(image_count):
            name = f"{enc_id}_{j}.png"
            write_png(tmp_path / name, next(color_iter))
            names.append(name)
        records.append(
            {
                "encounter_id": enc_id,
                "images": names,
                "query_title_en": f"Wound question {i}",
                "query_content_en": f"How should I treat this wound, case {i}?",
                "reference_responses_en": ["Clean and cover the wound."],
            }
        )
    corpus = tmp_path / "corpus.jsonl"
    with open(corpus, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return corpus, tmp_path
