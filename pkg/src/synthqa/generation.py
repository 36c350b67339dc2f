"""Question/answer generation layouts and the sampling pipeline around them.

Four layouts are supported:

* ``aqgen``    — one decoder pass emitting ``answer <sep> question <eos>``;
* ``qagen``    — one decoder pass emitting ``question <sep> answer <eos>``;
* ``qagen2s``  — two passes over the same model: sample ``<q> question <eos>``
  from the passage, then greedily decode ``<a> answer <eos>`` from
  passage ++ <sep> ++ question;
* ``qgen_baseline`` — heuristically propose an answer span, then sample
  ``question <eos>`` from passage ++ <sep> ++ answer.

Generated answers must occur verbatim in the passage (after whitespace
collapsing); pairs that fail that containment check, or whose decode cannot
be parsed back into a (question, answer) pair, are counted and dropped.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import Passage
from .decoding import DecodeConfig, DecodedSequence, DecodeStrategy, beam_search, greedy_decode, sample_sequence
from .lm import ConditionalLM
from .util import atomic_write_text, derived_rng
from .vocab import CODE_A, CODE_Q, EOS, SEP, Vocabulary, detokenize, split_words_with_offsets, tokenize


class GenerationMode(str, Enum):
    AQGEN = "aqgen"
    QAGEN = "qagen"
    QAGEN2S = "qagen2s"
    QGEN_BASELINE = "qgen_baseline"


class SpecialTokenError(ValueError):
    """A question or answer sequence contains a reserved special token."""


@dataclass(frozen=True)
class TargetLayout:
    """One decoder pass of a layout: what is appended to the encoder context,
    and the decoder target itself."""

    context_suffix: tuple[int, ...]
    target: tuple[int, ...]


@dataclass(frozen=True)
class GeneratedPair:
    """A candidate question/answer pair with its per-token log-likelihoods.

    The logprob arrays cover each generated segment including the token that
    terminates it (SEP for an inner segment, EOS for a final one); forced
    control codes are excluded.  qgen_baseline pairs have an empty answer
    array because their answer span is an input, not a generation.
    """

    passage_id: str
    question: str
    answer: str
    answer_token_logprobs: tuple[float, ...]
    question_token_logprobs: tuple[float, ...]
    contained: bool
    answer_char_start: int | None
    sample_index: int

    @property
    def pair_id(self) -> str:
        return f"{self.passage_id}#{self.sample_index}"


@dataclass
class DropStats:
    """Counts for every way a sampled pair can be discarded."""

    generated: int = 0
    dropped_uncontained: int = 0
    dropped_unparseable: int = 0
    dropped_duplicate: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_uncontained + self.dropped_unparseable + self.dropped_duplicate

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.generated if self.generated else 0.0

    def merge(self, other: "DropStats") -> "DropStats":
        return DropStats(
            self.generated + other.generated,
            self.dropped_uncontained + other.dropped_uncontained,
            self.dropped_unparseable + other.dropped_unparseable,
            self.dropped_duplicate + other.dropped_duplicate,
        )

    def to_dict(self) -> dict:
        return {
            "generated": self.generated,
            "dropped_uncontained": self.dropped_uncontained,
            "dropped_unparseable": self.dropped_unparseable,
            "dropped_duplicate": self.dropped_duplicate,
            "drop_rate": self.drop_rate,
        }


@dataclass(frozen=True)
class SegmentLimits:
    """Decode-length bounds per generated segment (tokens, terminators excluded)."""

    max_question_tokens: int = 64
    max_answer_tokens: int = 32


def _check_no_specials(ids: Sequence[int], name: str) -> None:
    if not ids:
        raise ValueError(f"{name} sequence must be non-empty")
    for pos, tok in enumerate(ids):
        if tok < 6:
            raise SpecialTokenError(
                f"special token id {tok} at position {pos} of the {name} sequence"
            )


def build_target(
    mode: GenerationMode, question: Sequence[int], answer: Sequence[int]
) -> list[TargetLayout]:
    """Decoder pass layouts for training one (question, answer) example.

    Single-pass modes return one layout; qagen2s returns two (question pass,
    then answer pass conditioned on the question).
    """
    mode = GenerationMode(mode)
    q = tuple(question)
    a = tuple(answer)
    _check_no_specials(q, "question")
    _check_no_specials(a, "answer")
    if mode is GenerationMode.AQGEN:
        return [TargetLayout((), a + (SEP,) + q + (EOS,))]
    if mode is GenerationMode.QAGEN:
        return [TargetLayout((), q + (SEP,) + a + (EOS,))]
    if mode is GenerationMode.QAGEN2S:
        return [
            TargetLayout((), (CODE_Q,) + q + (EOS,)),
            TargetLayout((SEP,) + q, (CODE_A,) + a + (EOS,)),
        ]
    return [TargetLayout((SEP,) + a, q + (EOS,))]


def _strip_eos(ids: Sequence[int]) -> tuple[list[int], int] | None:
    """Body before EOS and the terminator-inclusive end index; None if tokens follow EOS."""
    ids = list(ids)
    if EOS in ids:
        at = ids.index(EOS)
        if at != len(ids) - 1:
            return None  # trailing garbage after EOS
        return ids[:at], len(ids)
    return ids, len(ids)


def _split_joint(ids: Sequence[int]) -> tuple[list[int], list[int], slice, slice] | None:
    """Split a one-pass target at the first SEP into (first, second) segments.

    The returned slices cover each segment's positions terminator-inclusive,
    for indexing step-logprob arrays.
    """
    stripped = _strip_eos(ids)
    if stripped is None:
        return None
    body, end = stripped
    if SEP not in body:
        return None
    at = body.index(SEP)
    first, second = body[:at], body[at + 1 :]
    if not first or not second:
        return None
    return first, second, slice(0, at + 1), slice(at + 1, end)


def _split_coded(ids: Sequence[int], code: int) -> tuple[list[int], slice] | None:
    """Strip a leading control code and trailing EOS from a qagen2s pass."""
    ids = list(ids)
    if not ids or ids[0] != code:
        return None
    stripped = _strip_eos(ids)
    if stripped is None:
        return None
    body, end = stripped
    body = body[1:]
    if not body:
        return None
    return body, slice(1, end)


def _split_plain(ids: Sequence[int]) -> tuple[list[int], slice] | None:
    """A bare ``tokens <eos>`` target (qgen_baseline question pass)."""
    stripped = _strip_eos(ids)
    if stripped is None:
        return None
    body, end = stripped
    if not body:
        return None
    return body, slice(0, end)


def parse_output(
    mode: GenerationMode, layouts: Sequence[TargetLayout], vocab: Vocabulary
) -> tuple[str, str] | None:
    """Recover (question text, answer text) from decoder pass layouts.

    Returns None when the layouts cannot be parsed under the mode (missing
    separator or control code, empty segment, or tokens after EOS).
    """
    mode = GenerationMode(mode)
    if mode in (GenerationMode.AQGEN, GenerationMode.QAGEN):
        if len(layouts) != 1:
            return None
        split = _split_joint(layouts[0].target)
        if split is None:
            return None
        first, second = split[0], split[1]
        q_ids, a_ids = (second, first) if mode is GenerationMode.AQGEN else (first, second)
    elif mode is GenerationMode.QAGEN2S:
        if len(layouts) != 2:
            return None
        q_split = _split_coded(layouts[0].target, CODE_Q)
        a_split = _split_coded(layouts[1].target, CODE_A)
        if q_split is None or a_split is None:
            return None
        q_ids, a_ids = q_split[0], a_split[0]
    else:  # qgen_baseline: question decoded, answer carried in the context suffix
        if len(layouts) != 1:
            return None
        q_split = _split_plain(layouts[0].target)
        suffix = list(layouts[0].context_suffix)
        if q_split is None or len(suffix) < 2 or suffix[0] != SEP:
            return None
        q_ids, a_ids = q_split[0], suffix[1:]
    return detokenize(q_ids, vocab), detokenize(a_ids, vocab)


def fit_context(
    passage_ids: Sequence[int], suffix: Sequence[int], max_context_len: int | None
) -> list[int]:
    """Passage ++ suffix, truncating the passage tail (never the suffix) to the
    encoder budget."""
    passage_ids = list(passage_ids)
    suffix = list(suffix)
    if max_context_len is None:
        return passage_ids + suffix
    room = max_context_len - len(suffix)
    if room < 0:
        raise ValueError("context suffix alone exceeds the encoder budget")
    return passage_ids[:room] + suffix


def training_examples(
    mode: GenerationMode,
    passage_ids: Sequence[int],
    question: Sequence[int],
    answer: Sequence[int],
    max_context_len: int | None = None,
) -> list[tuple[list[int], list[int]]]:
    """(context, target) training pairs for one labeled example under a layout."""
    return [
        (fit_context(passage_ids, layout.context_suffix, max_context_len), list(layout.target))
        for layout in build_target(mode, question, answer)
    ]


def normalize_passage(passage: Passage, vocab: Vocabulary) -> Passage:
    """Re-render a passage in the tokenizer's text space (lowercased,
    space-separated units) so containment checks and char offsets line up
    with what the model sees."""
    text = detokenize(tokenize(passage.text, vocab), vocab)
    return Passage(passage.id, text, passage.domain)


# --- span proposal (qgen_baseline) ---

_STOPWORDS = frozenset(
    """a an the and or but if then else of to in on at by for with from as is are was
    were be been being it its this that these those he she they them his her their
    we you i me my your our us not no nor do does did done have has had having will
    would can could shall should may might must about into over under between during
    what which who whom whose when where why how there here than too very s t d ll
    m o re ve y ain don""".split()
)

_NUMBER_RE = re.compile(r"\d+")


def propose_spans(passage: Passage, count: int, seed: int = 0) -> list[tuple[str, int]]:
    """Heuristic answer-span proposals: top `count` distinct spans with offsets.

    Candidates are capitalized runs, numbers, and 1-5 token chunks bounded by
    content words; each is scored by inverse corpus-internal frequency (rare
    spans first), with bonuses for capitalization and numbers.  Fully
    deterministic; ties break toward the leftmost, shortest span.  The seed
    parameter is reserved for stochastic proposers.
    """
    del seed  # the built-in heuristic has no stochastic step
    if count < 1:
        raise ValueError("count must be >= 1")
    units = split_words_with_offsets(passage.text)
    words = [(u, s, e) for u, s, e in units if u[0].isalnum() or u[0] == "_"]
    if not words:
        return []
    freq = Counter(u.lower() for u, _, _ in words)

    def rarity(tokens: list[str]) -> float:
        # mean inverse frequency over the whole span: short salient spans beat
        # long dilute ones, stopwords only dilute
        total = sum(1.0 / freq[t.lower()] for t in tokens if t.lower() not in _STOPWORDS)
        return total / len(tokens)

    # best (score, start, length) per distinct span text
    best: dict[str, tuple[float, int, int]] = {}

    def offer(start_char: int, end_char: int, score: float) -> None:
        text = passage.text[start_char:end_char]
        key = (score, start_char, end_char - start_char)
        prev = best.get(text)
        if prev is None or (-key[0], key[1], key[2]) < (-prev[0], prev[1], prev[2]):
            best[text] = key

    # capitalized runs of up to 5 words (at least one non-stopword)
    run: list[tuple[str, int, int]] = []
    for unit in words + [("", -1, -1)]:
        if unit[0][:1].isupper():
            run.append(unit)
            continue
        if run and any(u.lower() not in _STOPWORDS for u, _, _ in run):
            chunk = run[:5]
            offer(chunk[0][1], chunk[-1][2], rarity([u for u, _, _ in chunk]) + 2.0)
        run = []

    # bare numbers
    for u, s, e in words:
        if _NUMBER_RE.fullmatch(u):
            offer(s, e, 1.0 / freq[u.lower()] + 1.5)

    # 1-5 word chunks bounded by content words, no sentence break inside
    breaks = {".", "!", "?", ";", ":"}
    boundary_ok = [u.lower() not in _STOPWORDS for u, _, _ in words]
    for i, (u, s, e) in enumerate(words):
        if not boundary_ok[i]:
            continue
        for j in range(i, min(i + 5, len(words))):
            if not boundary_ok[j]:
                continue
            span_text = passage.text[s : words[j][2]]
            if any(ch in breaks for ch in span_text):
                break
            offer(s, words[j][2], rarity([w for w, _, _ in words[i : j + 1]]))

    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[1][2]))
    return [(text, start) for text, (_score, start, _len) in ranked[:count]]


# --- sampling pipeline ---


def _first_pass_decodes(
    lm: ConditionalLM,
    context: list[int],
    n: int,
    cfg: DecodeConfig,
    seed: int,
    passage_id: str,
    max_len: int,
    forced_prefix: Sequence[int] = (),
) -> list[tuple[int, DecodedSequence]]:
    """The stochastic pass of a layout: n nucleus samples, the top-n beam
    hypotheses, or the single greedy decode, as configured."""
    max_len = min(cfg.max_len, max_len)
    if cfg.strategy is DecodeStrategy.TOPK_NUCLEUS:
        out = []
        for i in range(n):
            rng = derived_rng(seed, passage_id, i)
            out.append((i, sample_sequence(lm, context, cfg, rng, forced_prefix)))
        return out
    if cfg.strategy is DecodeStrategy.BEAM:
        hyps = beam_search(lm, context, width=n, max_len=max_len, forced_prefix=forced_prefix)
        return list(enumerate(hyps))
    return [(0, greedy_decode(lm, context, max_len, forced_prefix))]


def _dedup_score(pair: GeneratedPair, mode: GenerationMode) -> float:
    from .filtering import PoolingRule, lm_score  # import at call time: filtering imports this module

    return lm_score(pair, mode, PoolingRule.SUM)


def generate(
    mode: GenerationMode,
    lm: ConditionalLM,
    passage: Passage,
    n: int,
    cfg: DecodeConfig,
    seed: int = 0,
    limits: SegmentLimits = SegmentLimits(),
) -> tuple[list[GeneratedPair], DropStats]:
    """Sample n question/answer candidates from one passage.

    Unparseable decodes, answers absent from the passage, and exact duplicate
    (question, answer) pairs are dropped and counted; every returned pair is
    containment-checked with a resolved first-occurrence answer offset.
    Deterministic in (model, passage, cfg, seed) regardless of scheduling.
    """
    mode = GenerationMode(mode)
    if n < 1:
        raise ValueError("n must be >= 1")
    vocab = lm.vocab
    passage_ids = tokenize(passage.text, vocab)
    norm_text = detokenize(passage_ids, vocab)
    stats = DropStats()
    candidates: list[GeneratedPair] = []

    def finish(sample_index: int, q_ids, a_ids, q_lps, a_lps) -> None:
        if len(q_ids) > limits.max_question_tokens or len(a_ids) > limits.max_answer_tokens:
            stats.dropped_unparseable += 1
            return
        q_text = detokenize(q_ids, vocab)
        a_text = detokenize(a_ids, vocab)
        if not q_text or not a_text:
            stats.dropped_unparseable += 1
            return
        if a_text not in norm_text:
            stats.dropped_uncontained += 1
            return
        candidates.append(
            GeneratedPair(
                passage_id=passage.id,
                question=q_text,
                answer=a_text,
                answer_token_logprobs=tuple(a_lps),
                question_token_logprobs=tuple(q_lps),
                contained=True,
                answer_char_start=norm_text.find(a_text),
                sample_index=sample_index,
            )
        )

    joint_budget = limits.max_question_tokens + limits.max_answer_tokens + 2
    q_budget = limits.max_question_tokens + 2
    a_budget = limits.max_answer_tokens + 2

    if mode in (GenerationMode.AQGEN, GenerationMode.QAGEN):
        context = fit_context(passage_ids, (), lm.max_context_len)
        for idx, dec in _first_pass_decodes(lm, context, n, cfg, seed, passage.id, joint_budget):
            stats.generated += 1
            split = _split_joint(dec.ids)
            if split is None:
                stats.dropped_unparseable += 1
                continue
            first, second, first_slice, second_slice = split
            first_lps = dec.step_logprobs[first_slice]
            second_lps = dec.step_logprobs[second_slice]
            if mode is GenerationMode.AQGEN:
                finish(idx, second, first, second_lps, first_lps)
            else:
                finish(idx, first, second, first_lps, second_lps)

    elif mode is GenerationMode.QAGEN2S:
        q_context = fit_context(passage_ids, (), lm.max_context_len)
        for idx, q_dec in _first_pass_decodes(
            lm, q_context, n, cfg, seed, passage.id, q_budget, forced_prefix=(CODE_Q,)
        ):
            stats.generated += 1
            q_split = _split_coded(q_dec.ids, CODE_Q)
            if q_split is None:
                stats.dropped_unparseable += 1
                continue
            q_ids, q_slice = q_split
            a_context = fit_context(passage_ids, (SEP, *q_ids), lm.max_context_len)
            a_dec = greedy_decode(
                lm, a_context, min(cfg.max_len, a_budget), forced_prefix=(CODE_A,)
            )
            a_split = _split_coded(a_dec.ids, CODE_A)
            if a_split is None:
                stats.dropped_unparseable += 1
                continue
            a_ids, a_slice = a_split
            finish(idx, q_ids, a_ids, q_dec.step_logprobs[q_slice], a_dec.step_logprobs[a_slice])

    else:  # qgen_baseline: propose spans, generate one question per span
        norm_passage = Passage(passage.id, norm_text, passage.domain)
        for idx, (answer_text, _offset) in enumerate(propose_spans(norm_passage, n)):
            stats.generated += 1
            a_ids = tokenize(answer_text, vocab)
            if not a_ids:
                stats.dropped_unparseable += 1
                continue
            context = fit_context(passage_ids, (SEP, *a_ids), lm.max_context_len)
            q_dec = _first_pass_decodes(lm, context, 1, cfg, seed, f"{passage.id}:{idx}", q_budget)[0][1]
            q_split = _split_plain(q_dec.ids)
            if q_split is None:
                stats.dropped_unparseable += 1
                continue
            q_ids, q_slice = q_split
            finish(idx, q_ids, a_ids, q_dec.step_logprobs[q_slice], ())

    # exact-duplicate (question, answer) pairs add no training signal: keep the
    # higher-scored copy, ties to the earlier sample
    by_text: dict[tuple[str, str], GeneratedPair] = {}
    for pair in candidates:
        key = (pair.question, pair.answer)
        prev = by_text.get(key)
        if prev is None:
            by_text[key] = pair
            continue
        if (-_dedup_score(pair, mode), pair.sample_index) < (-_dedup_score(prev, mode), prev.sample_index):
            by_text[key] = pair
    kept = sorted(by_text.values(), key=lambda p: p.sample_index)
    stats.dropped_duplicate = len(candidates) - len(kept)
    return kept, stats


# --- sidecar records (per-pair scores and log-likelihood arrays) ---


def pair_to_record(pair: GeneratedPair) -> dict:
    return {
        "passage_id": pair.passage_id,
        "question": pair.question,
        "answer": pair.answer,
        "answer_token_logprobs": list(pair.answer_token_logprobs),
        "question_token_logprobs": list(pair.question_token_logprobs),
        "contained": pair.contained,
        "answer_char_start": pair.answer_char_start,
        "sample_index": pair.sample_index,
    }


def record_to_pair(record: dict) -> GeneratedPair:
    return GeneratedPair(
        passage_id=record["passage_id"],
        question=record["question"],
        answer=record["answer"],
        answer_token_logprobs=tuple(record["answer_token_logprobs"]),
        question_token_logprobs=tuple(record["question_token_logprobs"]),
        contained=record["contained"],
        answer_char_start=record["answer_char_start"],
        sample_index=record["sample_index"],
    )


def write_pairs_jsonl(pairs: Sequence[GeneratedPair], path: str | Path) -> None:
    lines = [json.dumps(pair_to_record(p), sort_keys=True) for p in pairs]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_pairs_jsonl(path: str | Path) -> list[GeneratedPair]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(record_to_pair(json.loads(line)))
    return out
