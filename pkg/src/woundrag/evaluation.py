"""deltaBLEU and ROUGE-1/2/L/Lsum scoring over multi-reference gold responses."""
from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

EPSILON = 1e-9

METRIC_COLUMNS = ("dBLEU", "R1", "R2", "RL", "RLsum")
RESERVED_COLUMNS = ("BERT_mn", "BERT_mx", "DeepSeekV3", "Gemini", "GPT4o")


class EvaluationError(Exception):
    pass


_EN_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or 0x3000 <= cp <= 0x303F
        or 0xFF00 <= cp <= 0xFFEF
    )


def tokenize(text: str, lang: str = "en") -> list[str]:
    """Lowercase, split punctuation from words; zh adds per-character CJK tokens."""
    text = unicodedata.normalize("NFC", text).lower()
    if lang == "zh":
        pieces: list[str] = []
        buf: list[str] = []
        for ch in text:
            if _is_cjk(ch):
                if buf:
                    pieces.extend(_EN_TOKEN_RE.findall("".join(buf)))
                    buf = []
                if not ch.isspace():
                    pieces.append(ch)
            else:
                buf.append(ch)
        if buf:
            pieces.extend(_EN_TOKEN_RE.findall("".join(buf)))
        return pieces
    return _EN_TOKEN_RE.findall(text)


@dataclass(frozen=True)
class WeightedReference:
    tokens: tuple[str, ...]
    weight: float = 1.0

    def __post_init__(self):
        if not self.tokens:
            raise EvaluationError("reference tokens must be nonempty")
        if abs(self.weight) > 1.0:
            raise EvaluationError("|weight| must be <= 1")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def delta_bleu(
    hyp: Sequence[str], refs: Sequence[WeightedReference], max_n: int = 4
) -> float:
    """Sentence-level BLEU with per-reference weighted n-gram credit.

    Each hypothesis n-gram earns the best weighted clipped count over the
    references containing it; per-order sums are floored at zero. With all
    weights 1 this reduces to standard multi-reference sentence BLEU.
    """
    if not refs:
        raise EvaluationError("delta_bleu requires at least one reference")
    hyp = list(hyp)
    if not hyp:
        return 0.0

    # orders longer than the hypothesis contribute no n-grams; cap instead of zeroing
    effective_max_n = min(max_n, len(hyp))
    log_precision_sum = 0.0
    for n in range(1, effective_max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        denom = sum(hyp_counts.values())
        ref_counts = [(_ngrams(r.tokens, n), r.weight) for r in refs]
        credit = 0.0
        for gram, h_count in hyp_counts.items():
            best = None
            for counts, weight in ref_counts:
                if gram in counts:
                    candidate = weight * min(h_count, counts[gram])
                    if best is None or candidate > best:
                        best = candidate
            if best is not None:
                credit += best
        credit = max(credit, 0.0)
        log_precision_sum += math.log((credit + EPSILON) / denom)

    hyp_len = len(hyp)
    # closest reference length; ties broken toward the shorter reference
    ref_len = min((len(r.tokens) for r in refs), key=lambda L: (abs(L - hyp_len), L))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = bp * math.exp(log_precision_sum / effective_max_n)
    return min(max(score, 0.0), 1.0)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> dict[str, float]:
    if n < 1:
        raise EvaluationError("n must be >= 1")
    hyp_counts = _ngrams(hyp, n)
    ref_counts = _ngrams(ref, n)
    hyp_total = sum(hyp_counts.values())
    ref_total = sum(ref_counts.values())
    if hyp_total == 0 or ref_total == 0:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items() if g in ref_counts)
    p = overlap / hyp_total
    r = overlap / ref_total
    return {"precision": p, "recall": r, "f1": _f1(p, r)}


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence[str], ref: Sequence[str]) -> dict[str, float]:
    if not hyp or not ref:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    lcs = _lcs_length(hyp, ref)
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return {"precision": p, "recall": r, "f1": _f1(p, r)}


_SENT_SPLIT_RE = re.compile(r"(?<=[.!?;。！？])\s+")


def split_sentences(text: str) -> list[str]:
    parts = [s.strip() for s in _SENT_SPLIT_RE.split(text.strip())]
    return [s for s in parts if s]


def _lcs_positions(a: Sequence[str], b: Sequence[str]) -> set[int]:
    """Indices into `a` of one longest common subsequence with `b`."""
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return set()
    dp = [[0] * (lb + 1) for _ in range(la + 1)]
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                dp[i][j] = dp[i - 1][j - 1] + 1
            else:
                dp[i][j] = max(dp[i - 1][j], dp[i][j - 1])
    positions: set[int] = set()
    i, j = la, lb
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1] and dp[i][j] == dp[i - 1][j - 1] + 1:
            positions.add(i - 1)
            i -= 1
            j -= 1
        elif dp[i - 1][j] >= dp[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return positions


def rouge_lsum(hyp_text: str, ref_text: str, lang: str = "en") -> float:
    """Summary-level ROUGE-L: union-LCS of each reference sentence vs the hypothesis.

    Matched tokens are clipped against the hypothesis token counts across the
    whole summary so precision stays within [0, 1].
    """
    hyp_sents = [tokenize(s, lang) for s in split_sentences(hyp_text)]
    ref_sents = [tokenize(s, lang) for s in split_sentences(ref_text)]
    hyp_total = sum(len(s) for s in hyp_sents)
    ref_total = sum(len(s) for s in ref_sents)
    if hyp_total == 0 or ref_total == 0:
        return 0.0
    available = Counter(t for s in hyp_sents for t in s)
    hits = 0
    for ref_sent in ref_sents:
        matched: set[int] = set()
        for hyp_sent in hyp_sents:
            matched |= _lcs_positions(ref_sent, hyp_sent)
        for pos in matched:
            token = ref_sent[pos]
            if available[token] > 0:
                available[token] -= 1
                hits += 1
    p = hits / hyp_total
    r = hits / ref_total
    return _f1(p, r)


def score_multi_ref(
    hyp, refs: Sequence, metric: Callable, aggregation: str = "max"
) -> float:
    """Aggregate a single-reference metric over multiple references (default max)."""
    if not refs:
        raise EvaluationError("score_multi_ref requires at least one reference")
    scores = [metric(hyp, ref) for ref in refs]
    if aggregation == "mean":
        return sum(scores) / len(scores)
    return max(scores)


@dataclass
class MetricReport:
    per_encounter: dict[str, dict[str, float]]
    averages: dict[str, Optional[float]]  # scaled x100; reserved columns are None
    skipped: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "per_encounter": self.per_encounter,
            "averages": self.averages,
            "skipped": self.skipped,
        }


def _encounter_scores(hyp_text: str, refs_text: Sequence[str], aggregation: str) -> dict:
    hyp = tokenize(hyp_text, "en")
    refs = [tokenize(r, "en") for r in refs_text]
    weighted = [WeightedReference(tuple(r), 1.0) for r in refs if r]
    scores = {
        "dBLEU": delta_bleu(hyp, weighted) if weighted else 0.0,
        "R1": score_multi_ref(hyp, refs, lambda h, r: rouge_n(h, r, 1)["f1"], aggregation),
        "R2": score_multi_ref(hyp, refs, lambda h, r: rouge_n(h, r, 2)["f1"], aggregation),
        "RL": score_multi_ref(hyp, refs, lambda h, r: rouge_l(h, r)["f1"], aggregation),
        "RLsum": score_multi_ref(
            hyp_text, list(refs_text), lambda h, r: rouge_lsum(h, r, "en"), aggregation
        ),
    }
    return scores


def evaluate_run(
    predictions: Sequence[Mapping],
    gold_by_id: Mapping[str, Sequence[str]],
    multi_ref_aggregation: str = "max",
) -> MetricReport:
    """Score predictions ({encounter_id, responses}) against reference responses.

    Encounters with no references or an empty hypothesis are skipped and
    excluded from the averages; with nothing left to score, averages are 0.
    """
    per_encounter: dict[str, dict[str, float]] = {}
    skipped: list[dict] = []
    for pred in predictions:
        enc_id = pred["encounter_id"]
        if enc_id not in gold_by_id:
            raise EvaluationError(f"prediction {enc_id!r} has no gold encounter")
        refs = [r for r in gold_by_id[enc_id] if r.strip()]
        hyp_text = pred.get("responses") or ""
        if not refs:
            skipped.append({"encounter_id": enc_id, "reason": "no reference"})
            continue
        if not hyp_text.strip():
            skipped.append({"encounter_id": enc_id, "reason": "empty hypothesis"})
            continue
        per_encounter[enc_id] = _encounter_scores(hyp_text, refs, multi_ref_aggregation)

    averages: dict[str, Optional[float]] = {}
    ids = sorted(per_encounter)
    for col in METRIC_COLUMNS:
        if ids:
            averages[col] = 100.0 * sum(per_encounter[i][col] for i in ids) / len(ids)
        else:
            averages[col] = 0.0
    averages["Avg"] = sum(averages[c] for c in METRIC_COLUMNS) / len(METRIC_COLUMNS)
    for col in RESERVED_COLUMNS:
        averages[col] = None
    return MetricReport(per_encounter=per_encounter, averages=averages, skipped=skipped)


def render_table(report: MetricReport, system_name: str = "run") -> str:
    cols = METRIC_COLUMNS + ("Avg",)
    header = "System".ljust(20) + "".join(c.rjust(10) for c in cols)
    values = system_name.ljust(20) + "".join(
        f"{report.averages[c]:10.2f}" for c in cols
    )
    return header + "\n" + values


def write_report(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
