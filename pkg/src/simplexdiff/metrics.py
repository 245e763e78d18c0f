"""Reference-based generation metrics and classification accuracy.

All functions take pre-tokenized sequences (the corpus module's whitespace
tokenizer is the single tokenizer for data and evaluation). BLEU is
corpus-level on the 0-100 scale; ROUGE-L returns an F1 in [0, 1] and the
report scales its mean to points.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field


def _ngrams(seq, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(hypotheses, references) -> float:
    """Corpus BLEU: geometric mean of 1-4-gram precisions with a brevity
    penalty. Zero match counts are add-one smoothed: p_n = (m+1)/(T+1).
    """
    if not hypotheses:
        raise ValueError("bleu needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise ValueError(f"bleu got {len(hypotheses)} hypotheses vs {len(references)} references")

    matches = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hc = _ngrams(hyp, n)
            rc = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    log_sum = 0.0
    for m, t in zip(matches, totals):
        p = m / t if m > 0 else (m + 1) / (t + 1)
        log_sum += math.log(p)
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / 4.0)


def _lcs(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis, reference) -> float:
    """LCS-based F1 (beta = 1); defined as 0 when both sides are empty."""
    hyp, ref = list(hypothesis), list(reference)
    if not hyp and not ref:
        return 0.0
    lcs = _lcs(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


def distinct_n(hypotheses, n: int) -> float:
    """Unique n-grams over total n-grams across all hypotheses.

    Sequences shorter than n contribute nothing; with no n-grams at all the
    ratio is defined as 0.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    seen = set()
    total = 0
    for hyp in hypotheses:
        hyp = list(hyp)
        for i in range(len(hyp) - n + 1):
            seen.add(tuple(hyp[i : i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def exact_match(hypotheses, references) -> float:
    """Fraction of hypotheses identical to their reference."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"exact_match got {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        return 0.0
    hits = sum(list(h) == list(r) for h, r in zip(hypotheses, references))
    return hits / len(hypotheses)


# classification accuracy is exact match on the label token sequence
label_accuracy = exact_match


@dataclass
class EvalReport:
    metrics: dict[str, float]
    counts: dict[str, int]
    per_example: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.metrics, "counts": self.counts, "per_example": self.per_example},
            indent=2,
            sort_keys=True,
        )

    def format_table(self) -> str:
        width = max(len(k) for k in self.metrics)
        lines = [f"{k.ljust(width)}  {v:10.4f}" for k, v in self.metrics.items()]
        lines.append(f"{'examples'.ljust(width)}  {self.counts['examples']:10d}")
        return "\n".join(lines)


def evaluate_generation(hypotheses, references, with_per_example: bool = False) -> EvalReport:
    """BLEU, ROUGE-L (points), distinct-1/4, and exact match over a corpus."""
    rl = [rouge_l(h, r) for h, r in zip(hypotheses, references)]
    metrics = {
        "bleu": bleu(hypotheses, references),
        "rouge_l": 100.0 * (sum(rl) / len(rl)) if rl else 0.0,
        "distinct_1": distinct_n(hypotheses, 1),
        "distinct_4": distinct_n(hypotheses, 4),
        "exact_match": exact_match(hypotheses, references),
    }
    per = []
    if with_per_example:
        per = [
            {"rouge_l": score, "exact": list(h) == list(r)}
            for score, h, r in zip(rl, hypotheses, references)
        ]
    return EvalReport(metrics=metrics, counts={"examples": len(hypotheses)}, per_example=per)


def evaluate_classification(hypotheses, references) -> EvalReport:
    return EvalReport(
        metrics={"accuracy": label_accuracy(hypotheses, references)},
        counts={"examples": len(hypotheses)},
    )
