"""Corpus ingestion and emission: SQuAD 1.1 JSON, MRQA JSONL, synthetic output,
passage selection, and dataset mixing.

A Corpus is immutable after construction and validates its own invariants:
unique passage ids, resolvable example references, and answer spans that
actually match the passage text.
"""

from __future__ import annotations

import json
import logging
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .util import atomic_write_text, dump_json, ws_normalize
from .vocab import split_words

logger = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    """The file does not have the shape the format requires."""


class CorpusValidationError(ValueError):
    """The file parsed but one or more records violate invariants."""


class PassageSelectionWarning(UserWarning):
    """Fewer eligible passages than requested; all eligible ones were returned."""


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    domain: str = ""
    token_count: int = -1  # computed from text when negative

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"passage {self.id!r} has empty text")
        count = len(split_words(self.text))
        if self.token_count < 0:
            object.__setattr__(self, "token_count", count)
        elif self.token_count != count:
            raise ValueError(
                f"passage {self.id!r}: token_count {self.token_count} != actual {count}"
            )


@dataclass(frozen=True)
class LabeledExample:
    qid: str
    passage_id: str
    question: str
    answer_text: str
    answer_char_start: int

    def __post_init__(self):
        if not self.question:
            raise ValueError(f"example {self.qid!r} has an empty question")
        if self.answer_char_start < 0:
            raise ValueError(f"example {self.qid!r} has a negative answer offset")


@dataclass(frozen=True)
class Corpus:
    passages: tuple[Passage, ...]
    examples: tuple[LabeledExample, ...] = ()
    format_origin: str = "synthetic"  # squad | mrqa | synthetic

    _by_id: dict[str, Passage] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "passages", tuple(self.passages))
        object.__setattr__(self, "examples", tuple(self.examples))
        by_id: dict[str, Passage] = {}
        for p in self.passages:
            if p.id in by_id:
                raise CorpusValidationError(f"duplicate passage id {p.id!r}")
            by_id[p.id] = p
        bad: list[str] = []
        for ex in self.examples:
            passage = by_id.get(ex.passage_id)
            if passage is None:
                raise CorpusValidationError(
                    f"example {ex.qid!r} references unknown passage {ex.passage_id!r}"
                )
            end = ex.answer_char_start + len(ex.answer_text)
            if passage.text[ex.answer_char_start : end] != ex.answer_text:
                bad.append(ex.qid)
        if bad:
            raise CorpusValidationError(
                f"answer span does not match passage text for qa ids: {', '.join(bad)}"
            )
        object.__setattr__(self, "_by_id", by_id)

    def passage_by_id(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    def passage_texts(self) -> dict[str, str]:
        return {p.id: p.text for p in self.passages}


def load_squad(path: str | Path, domain: str = "squad") -> Corpus:
    """Load a SQuAD 1.1 JSON file: one passage per paragraph, one example per qa
    (first listed answer)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise CorpusFormatError(f"{path}: top-level 'data' list is missing")
    passages: list[Passage] = []
    examples: list[LabeledExample] = []
    bad: list[str] = []
    used_ids: set[str] = set()
    counter = 0
    for ai, article in enumerate(doc["data"]):
        paragraphs = article.get("paragraphs")
        if not isinstance(paragraphs, list):
            raise CorpusFormatError(f"{path}: data[{ai}].paragraphs is missing")
        title = article.get("title")
        for pi, para in enumerate(paragraphs):
            context = para.get("context")
            if not isinstance(context, str):
                raise CorpusFormatError(f"{path}: data[{ai}].paragraphs[{pi}].context is missing")
            qas = para.get("qas")
            if not isinstance(qas, list):
                raise CorpusFormatError(f"{path}: data[{ai}].paragraphs[{pi}].qas is missing")
            # single-paragraph articles keep their title as a stable passage id,
            # so sidecar records survive a dataset round trip
            if title and len(paragraphs) == 1 and title not in used_ids:
                pid = title
            else:
                pid = f"{domain}-{counter:06d}"
            counter += 1
            used_ids.add(pid)
            passages.append(Passage(pid, context, domain))
            for qi, qa in enumerate(qas):
                where = f"data[{ai}].paragraphs[{pi}].qas[{qi}]"
                try:
                    qid = qa["id"]
                    question = qa["question"]
                    answers = qa["answers"]
                except (KeyError, TypeError) as exc:
                    raise CorpusFormatError(f"{path}: {where}: missing key {exc}") from exc
                if not answers:
                    raise CorpusFormatError(f"{path}: {where}: empty answers list")
                first = answers[0]
                try:
                    text = first["text"]
                    start = first["answer_start"]
                except (KeyError, TypeError) as exc:
                    raise CorpusFormatError(f"{path}: {where}.answers[0]: missing key {exc}") from exc
                if start < 0 or context[start : start + len(text)] != text:
                    bad.append(str(qid))
                    continue
                examples.append(LabeledExample(str(qid), pid, question, text, start))
    if bad:
        raise CorpusValidationError(
            f"{path}: answer_start does not match answer text for qa ids: {', '.join(bad)}"
        )
    logger.info("loaded %s: %d passages, %d examples", path, len(passages), len(examples))
    return Corpus(tuple(passages), tuple(examples), "squad")


def load_mrqa(path: str | Path, domain: str | None = None) -> Corpus:
    """Load an MRQA-format JSONL file (header line, then one context record per line).

    Keeps the first detected answer of each question; its inclusive char span
    [start, end] becomes (answer_text, answer_char_start).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise CorpusFormatError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{path}: line 1 is not valid JSON ({exc})") from exc
    if not isinstance(header, dict) or "header" not in header:
        raise CorpusFormatError(f"{path}: first line is not an MRQA header record")
    if domain is None:
        domain = str(header["header"].get("dataset", "mrqa"))
    passages: list[Passage] = []
    examples: list[LabeledExample] = []
    bad: list[str] = []
    for li, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}: line {li} is not valid JSON ({exc})") from exc
        context = record.get("context")
        qas = record.get("qas")
        if not isinstance(context, str) or not isinstance(qas, list):
            raise CorpusFormatError(f"{path}: line {li}: record needs 'context' and 'qas'")
        # optional record-level id (written by write_synthetic) keeps passage
        # references stable across a round trip
        pid = record.get("id") or f"{domain}-{len(passages):06d}"
        passages.append(Passage(pid, context, domain))
        for qa in qas:
            try:
                qid = qa["qid"]
                question = qa["question"]
                detected = qa["detected_answers"]
            except (KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}: line {li}: qa missing key {exc}") from exc
            if not detected:
                raise CorpusFormatError(f"{path}: line {li}: qa {qid!r} has no detected_answers")
            spans = detected[0].get("char_spans")
            if not spans:
                raise CorpusFormatError(f"{path}: line {li}: qa {qid!r} has no char_spans")
            start, end = spans[0]
            if not (0 <= start <= end < len(context)):
                bad.append(str(qid))
                continue
            examples.append(
                LabeledExample(str(qid), pid, question, context[start : end + 1], start)
            )
    if bad:
        raise CorpusValidationError(
            f"{path}: char span outside context for qa ids: {', '.join(bad)}"
        )
    logger.info("loaded %s: %d passages, %d examples", path, len(passages), len(examples))
    return Corpus(tuple(passages), tuple(examples), "mrqa")


def select_passages(
    corpus: Corpus,
    count: int,
    min_tokens: int = 100,
    max_tokens: int = 550,
    exclude: Iterable[str] = (),
    seed: int = 0,
) -> list[Passage]:
    """Uniform random sample of eligible passages, without replacement.

    Passages shorter than min_tokens or whose whitespace-normalized text
    appears in exclude are dropped before sampling; sampled passages longer
    than max_tokens are truncated at a token boundary (joined back with
    single spaces).  Deterministic under seed; undersupply returns all
    eligible passages and emits a PassageSelectionWarning.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if min_tokens > max_tokens:
        raise ValueError("min_tokens must be <= max_tokens")
    excluded = {ws_normalize(text) for text in exclude}
    eligible = [
        p for p in corpus.passages
        if p.token_count >= min_tokens and ws_normalize(p.text) not in excluded
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))
    if len(eligible) < count:
        warnings.warn(
            f"requested {count} passages but only {len(eligible)} are eligible",
            PassageSelectionWarning,
        )
    chosen = [eligible[i] for i in order[:count]]
    out: list[Passage] = []
    for p in chosen:
        if p.token_count > max_tokens:
            units = split_words(p.text)[:max_tokens]
            p = Passage(p.id, " ".join(units), p.domain)
        out.append(p)
    return out


def write_synthetic(pairs: Sequence, passages: Corpus, path: str | Path, format: str = "squad") -> None:
    """Write generated pairs as a loadable dataset (squad JSON or mrqa JSONL).

    Every pair must reference a known passage and be containment-checked;
    answer_char_start is the first occurrence of the answer in the passage.
    """
    if format not in ("squad", "mrqa"):
        raise ValueError(f"unknown synthetic output format {format!r}")
    grouped: dict[str, list] = {}
    for pair in pairs:
        pair_id = f"{pair.passage_id}#{pair.sample_index}"
        if not pair.contained:
            raise ValueError(f"pair {pair_id} failed the containment check, refusing to write")
        passage = passages.passage_by_id(pair.passage_id)
        if passage.text.find(pair.answer) < 0:
            raise ValueError(f"pair {pair_id}: answer not found in passage text")
        grouped.setdefault(pair.passage_id, []).append(pair)

    if format == "squad":
        data = []
        for pid, group in grouped.items():
            context = passages.passage_by_id(pid).text
            qas = [
                {
                    "id": f"{pid}#{pair.sample_index}",
                    "question": pair.question,
                    "answers": [
                        {"text": pair.answer, "answer_start": context.find(pair.answer)}
                    ],
                }
                for pair in group
            ]
            data.append({"title": pid, "paragraphs": [{"context": context, "qas": qas}]})
        atomic_write_text(path, dump_json({"version": "1.1", "data": data}))
    else:
        lines = [json.dumps({"header": {"dataset": "synthetic", "split": "train"}}, sort_keys=True)]
        for pid, group in grouped.items():
            context = passages.passage_by_id(pid).text
            qas = []
            for pair in group:
                start = context.find(pair.answer)
                qas.append(
                    {
                        "qid": f"{pid}#{pair.sample_index}",
                        "question": pair.question,
                        "answers": [pair.answer],
                        "detected_answers": [
                            {"text": pair.answer, "char_spans": [[start, start + len(pair.answer) - 1]]}
                        ],
                    }
                )
            lines.append(json.dumps({"context": context, "id": pid, "qas": qas}, sort_keys=True))
        atomic_write_text(path, "\n".join(lines) + "\n")


def write_corpus_squad(corpus: Corpus, path: str | Path) -> None:
    """Write a labeled corpus as SQuAD 1.1 JSON (examples grouped under their passages)."""
    by_passage: dict[str, list[LabeledExample]] = {p.id: [] for p in corpus.passages}
    for ex in corpus.examples:
        by_passage[ex.passage_id].append(ex)
    data = []
    for passage in corpus.passages:
        qas = [
            {
                "id": ex.qid,
                "question": ex.question,
                "answers": [{"text": ex.answer_text, "answer_start": ex.answer_char_start}],
            }
            for ex in by_passage[passage.id]
        ]
        data.append({"title": passage.id, "paragraphs": [{"context": passage.text, "qas": qas}]})
    atomic_write_text(path, dump_json({"version": "1.1", "data": data}))


def mix_datasets(synthetic: Corpus, supervised: Corpus, seed: int = 0) -> Corpus:
    """Blend two corpora into one seed-deterministically shuffled training set.

    Passage id collisions are resolved by namespacing the synthetic side.
    """
    supervised_ids = {p.id for p in supervised.passages}
    rename = {
        p.id: f"synthetic::{p.id}" for p in synthetic.passages if p.id in supervised_ids
    }
    syn_passages = [
        Passage(rename.get(p.id, p.id), p.text, p.domain, p.token_count)
        for p in synthetic.passages
    ]
    syn_examples = [
        LabeledExample(ex.qid, rename.get(ex.passage_id, ex.passage_id),
                       ex.question, ex.answer_text, ex.answer_char_start)
        for ex in synthetic.examples
    ]
    examples = list(supervised.examples) + syn_examples
    random.Random(seed).shuffle(examples)
    return Corpus(
        tuple(supervised.passages) + tuple(syn_passages),
        tuple(examples),
        "synthetic",
    )
