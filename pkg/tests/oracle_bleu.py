"""Independent textbook multi-reference sentence BLEU, used only as a test oracle.

Deliberately written without reusing the package's n-gram helpers so that the
two implementations can only agree by computing the same quantity.
"""
import math

EPSILON = 1e-9


def _ngram_counts(tokens, n):
    counts = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def textbook_bleu(hyp, refs, max_n=4):
    """Standard sentence BLEU with per-ngram clipping against the max reference
    count, additive epsilon smoothing on numerators, closest-reference brevity
    penalty (ties toward the shorter reference), clamped to [0, 1]."""
    hyp = list(hyp)
    refs = [list(r) for r in refs]
    if not hyp or not refs:
        return 0.0
    effective_max_n = min(max_n, len(hyp))
    log_sum = 0.0
    for n in range(1, effective_max_n + 1):
        hyp_counts = _ngram_counts(hyp, n)
        total = sum(hyp_counts.values())
        all_ref_counts = [_ngram_counts(r, n) for r in refs]
        clipped = 0
        for gram, count in hyp_counts.items():
            best_ref = max(rc.get(gram, 0) for rc in all_ref_counts)
            clipped += min(count, best_ref)
        log_sum += math.log((clipped + EPSILON) / total)
    hyp_len = len(hyp)
    best_ref_len = None
    for r in refs:
        if best_ref_len is None:
            best_ref_len = len(r)
        else:
            old = (abs(best_ref_len - hyp_len), best_ref_len)
            new = (abs(len(r) - hyp_len), len(r))
            if new < old:
                best_ref_len = len(r)
    bp = 1.0 if hyp_len > best_ref_len else math.exp(1.0 - best_ref_len / hyp_len)
    return min(max(bp * math.exp(log_sum / effective_max_n), 0.0), 1.0)
