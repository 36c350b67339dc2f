"""Likelihood-based and round-trip filtering of generated pairs.

LM filtering ranks each passage's sampled pairs by the model's own
log-likelihood of what it generated (answer-only for question-conditioned
layouts, answer + question for answer-first generation) and keeps the top m.
Round-trip filtering instead asks a reading-comprehension oracle the generated
question and keeps the pair only when the oracle's answer matches the
generated answer after SQuAD-style normalization.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol, Sequence, runtime_checkable

from .generation import GeneratedPair, GenerationMode, _STOPWORDS
from .metrics import exact_match
from .vocab import split_words_with_offsets


class PoolingRule(str, Enum):
    SUM = "sum"
    AVG = "avg"


class ScoringError(ValueError):
    pass


@runtime_checkable
class RCOracle(Protocol):
    """Anything that answers a question about a passage, deterministically."""

    def answer(self, passage_text: str, question_text: str) -> str: ...


@dataclass
class FilterReport:
    """Bookkeeping for one filtering stage: counts must reconcile exactly."""

    input_count: int = 0
    kept_count: int = 0
    drops: dict[str, int] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def check(self) -> None:
        if self.kept_count + self.dropped != self.input_count:
            raise AssertionError(
                f"filter report does not reconcile: kept {self.kept_count} "
                f"+ dropped {self.dropped} != input {self.input_count}"
            )

    def merge(self, other: "FilterReport") -> "FilterReport":
        drops = Counter(self.drops)
        drops.update(other.drops)
        sizes = Counter(self.group_sizes)
        sizes.update(other.group_sizes)
        return FilterReport(
            self.input_count + other.input_count,
            self.kept_count + other.kept_count,
            dict(drops),
            dict(sizes),
        )

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "drops": dict(sorted(self.drops.items())),
            "group_sizes": dict(sorted(self.group_sizes.items())),
        }


def _score_segments(pair: GeneratedPair, mode: GenerationMode) -> list[tuple[str, tuple[float, ...]]]:
    mode = GenerationMode(mode)
    if mode in (GenerationMode.QAGEN, GenerationMode.QAGEN2S):
        return [("answer", pair.answer_token_logprobs)]
    if mode is GenerationMode.AQGEN:
        return [("answer", pair.answer_token_logprobs), ("question", pair.question_token_logprobs)]
    # qgen_baseline: the question is the only generated segment
    return [("question", pair.question_token_logprobs)]


def lm_score(pair: GeneratedPair, mode: GenerationMode, pooling: PoolingRule = PoolingRule.SUM) -> float:
    """Likelihood score of a generated pair under its generation layout.

    sum pooling adds every segment's summed token log-likelihoods; avg pooling
    divides each segment's sum by its own token count before adding.
    """
    pooling = PoolingRule(pooling)
    total = 0.0
    for name, logprobs in _score_segments(pair, mode):
        if not logprobs:
            raise ScoringError(f"pair {pair.pair_id}: empty {name} logprob array")
        seg = sum(logprobs)
        total += seg / len(logprobs) if pooling is PoolingRule.AVG else seg
    return total


def select_top_m(
    pairs: Sequence[GeneratedPair],
    m: int,
    pooling: PoolingRule = PoolingRule.SUM,
    mode: GenerationMode = GenerationMode.QAGEN2S,
) -> tuple[list[GeneratedPair], FilterReport]:
    """Keep the m highest-scored pairs of every passage group.

    Ties break toward the lower sample_index; the relative order of passage
    groups is preserved.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    groups: dict[str, list[GeneratedPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.passage_id, []).append(pair)
    kept: list[GeneratedPair] = []
    report = FilterReport(input_count=len(pairs))
    for pid, group in groups.items():
        report.group_sizes[pid] = len(group)
        ranked = sorted(group, key=lambda p: (-lm_score(p, mode, pooling), p.sample_index))
        kept.extend(ranked[:m])
        dropped = max(0, len(group) - m)
        if dropped:
            report.drops["lm_rank"] = report.drops.get("lm_rank", 0) + dropped
    report.kept_count = len(kept)
    report.check()
    return kept, report


def round_trip_filter(
    pairs: Sequence[GeneratedPair],
    passages: Mapping[str, str],
    oracle: RCOracle,
) -> tuple[list[GeneratedPair], FilterReport]:
    """Keep pairs whose generated answer exactly matches (after normalization)
    what the oracle answers for the generated question.

    passages maps passage_id to passage text.  Oracle failures drop the pair
    and are counted separately.
    """
    kept: list[GeneratedPair] = []
    report = FilterReport(input_count=len(pairs))
    for pair in pairs:
        try:
            predicted = oracle.answer(passages[pair.passage_id], pair.question)
        except Exception:
            report.drops["oracle_error"] = report.drops.get("oracle_error", 0) + 1
            continue
        if exact_match(predicted, pair.answer):
            kept.append(pair)
        else:
            report.drops["roundtrip_mismatch"] = report.drops.get("roundtrip_mismatch", 0) + 1
    report.kept_count = len(kept)
    report.check()
    return kept, report


def lexical_oracle(passage_text: str, question_text: str, max_window: int = 10, radius: int = 10) -> str:
    """Desk-scale reading-comprehension stand-in.

    Returns the passage window (at most max_window tokens) whose surrounding
    tokens overlap the question's content words the most; ties go to the
    leftmost, shortest window.  Empty passages yield an empty answer.
    """
    units = split_words_with_offsets(passage_text)
    if not units:
        return ""
    tokens = [u.lower() for u, _, _ in units]
    question_content = Counter(
        t.lower() for t in (u for u, _, _ in split_words_with_offsets(question_text))
        if t.lower() not in _STOPWORDS
    )
    best = (-1.0, 0, 1)  # (score, start, length) with score maximized
    n = len(units)
    for start in range(n):
        for length in range(1, min(max_window, n - start) + 1):
            neighborhood = tokens[max(0, start - radius) : start] + tokens[start + length : start + length + radius]
            overlap = Counter(t for t in neighborhood if t not in _STOPWORDS)
            score = float(sum((overlap & question_content).values()))
            if score > best[0]:
                best = (score, start, length)
    _, start, length = best
    return passage_text[units[start][1] : units[start + length - 1][2]]


class LexicalOracle:
    """RCOracle wrapper around lexical_oracle."""

    def __init__(self, max_window: int = 10, radius: int = 10):
        self.max_window = max_window
        self.radius = radius

    def answer(self, passage_text: str, question_text: str) -> str:
        return lexical_oracle(passage_text, question_text, self.max_window, self.radius)


class ScriptedOracle:
    """RCOracle returning scripted answers keyed by (passage_text, question_text),
    with a constant fallback."""

    def __init__(self, answers: Mapping[tuple[str, str], str] | None = None, default: str = ""):
        self.answers = dict(answers or {})
        self.default = default

    def answer(self, passage_text: str, question_text: str) -> str:
        return self.answers.get((passage_text, question_text), self.default)
