"""Answer-matching metrics (normalized exact match, token-overlap F1),
corpus-level BLEU for question quality, and the score-vs-quality bucket table.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Corpus

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class MetricsError(ValueError):
    pass


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1_score(pred: str, gold: str) -> float:
    """Token-multiset overlap F1 of the normalized strings.

    Both empty after normalization scores 1; exactly one empty scores 0.
    """
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalResult:
    em: float  # fraction in [0, 1]
    f1: float
    count: int

    @property
    def em_pct(self) -> float:
        return round(self.em * 100, 2)

    @property
    def f1_pct(self) -> float:
        return round(self.f1 * 100, 2)


def corpus_eval(predictions: Mapping[str, str], gold: Corpus) -> EvalResult:
    """Unweighted mean EM and F1 of predictions against a labeled corpus.

    Every gold qid must be present in predictions.
    """
    if not gold.examples:
        raise MetricsError("gold corpus has no examples")
    missing = [ex.qid for ex in gold.examples if ex.qid not in predictions]
    if missing:
        raise MetricsError(f"predictions missing for qa ids: {', '.join(missing)}")
    em_total = 0.0
    f1_total = 0.0
    for ex in gold.examples:
        pred = predictions[ex.qid]
        em_total += exact_match(pred, ex.answer_text)
        f1_total += f1_score(pred, ex.answer_text)
    n = len(gold.examples)
    return EvalResult(em_total / n, f1_total / n, n)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[str], references: Sequence[str], smooth: bool = False) -> float:
    """Corpus-level BLEU-4: uniform n-gram weights and a brevity penalty.

    Whitespace tokenization, one reference per candidate.  Orders with no
    candidate n-grams anywhere in the corpus (all candidates shorter than n)
    are excluded from the geometric mean, so a corpus scored against itself is
    always 1.0.  Without smoothing a zero clipped count at any active order
    gives 0; smooth=True applies +1 smoothing to orders above unigrams.
    """
    if len(candidates) != len(references):
        raise MetricsError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates:
        raise MetricsError("cannot score an empty corpus")
    clipped = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        c = cand.split()
        r = ref.split()
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, 5):
            c_counts = _ngrams(c, n)
            totals[n - 1] += sum(c_counts.values())
            clipped[n - 1] += sum((c_counts & _ngrams(r, n)).values())
    if cand_len == 0:
        return 0.0
    active = [i for i in range(4) if totals[i] > 0]
    log_prec = 0.0
    for i in active:
        num, den = clipped[i], totals[i]
        if smooth and i > 0:
            num, den = num + 1, den + 1
        if num == 0:
            return 0.0
        log_prec += math.log(num / den) / len(active)
    brevity = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return brevity * math.exp(log_prec)


@dataclass(frozen=True)
class BucketRow:
    bucket_index: int
    mean_score: float
    mean_f1: float
    size: int


def bucket_analysis(scored: Sequence[tuple[float, float]], bucket_size: int = 200) -> list[BucketRow]:
    """Sort (lm_score, f1) pairs by descending score and report contiguous
    equal-size buckets (the last may be smaller)."""
    if not scored:
        raise MetricsError("need at least one scored pair")
    if bucket_size < 1:
        raise ValueError("bucket_size must be >= 1")
    ranked = sorted(scored, key=lambda pair: -pair[0])
    rows = []
    for index, start in enumerate(range(0, len(ranked), bucket_size)):
        chunk = ranked[start : start + bucket_size]
        rows.append(
            BucketRow(
                bucket_index=index,
                mean_score=sum(s for s, _ in chunk) / len(chunk),
                mean_f1=sum(f for _, f in chunk) / len(chunk),
                size=len(chunk),
            )
        )
    return rows
