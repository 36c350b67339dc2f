"""Shared fixtures: tiny vocabularies, scripted models, and corpus files."""

from __future__ import annotations

import json

import numpy as np
import pytest

from synthqa.lm import ScriptedLM, delta_distribution
from synthqa.vocab import SPECIAL_TOKENS, Vocabulary


def make_word_vocab(n_words: int = 10, extra: tuple[str, ...] = ()) -> Vocabulary:
    return Vocabulary.from_words([f"w{i}" for i in range(n_words)] + list(extra))


def word_ids(vocab: Vocabulary, *words: str) -> list[int]:
    return [vocab.id_of(w) for w in words]


@pytest.fixture
def specials_vocab() -> Vocabulary:
    """The minimal 6-token vocabulary (specials only); handy for pure decoding tests."""
    return Vocabulary(SPECIAL_TOKENS)


def script_first_token_paths(
    vocab: Vocabulary,
    context: list[int],
    paths: list[tuple[list[int], float]],
    lm: ScriptedLM | None = None,
) -> ScriptedLM:
    """Scripted LM whose step-0 distribution chooses between paths by their
    (distinct) first tokens; every path then continues deterministically.
    Pass lm to script several contexts into one model."""
    firsts = [p[0][0] for p in paths]
    if len(set(firsts)) != len(firsts):
        raise ValueError("paths must start with distinct tokens")
    if lm is None:
        lm = ScriptedLM(vocab)
    step0 = np.zeros(len(vocab))
    for target, prob in paths:
        step0[target[0]] = prob
    lm.add(context, [], step0)
    for target, _prob in paths:
        for i in range(1, len(target)):
            lm.add(context, target[:i], delta_distribution(len(vocab), target[i]))
    return lm


def write_squad_file(path, paragraphs: list[tuple[str, list[tuple[str, str, str, int]]]]) -> None:
    """paragraphs: [(context, [(qa_id, question, answer_text, answer_start), ...])]"""
    data = []
    for i, (context, qas) in enumerate(paragraphs):
        data.append(
            {
                "title": f"t{i}",
                "paragraphs": [
                    {
                        "context": context,
                        "qas": [
                            {
                                "id": qid,
                                "question": q,
                                "answers": [{"text": a, "answer_start": start}],
                            }
                            for qid, q, a, start in qas
                        ],
                    }
                ],
            }
        )
    path.write_text(json.dumps({"version": "1.1", "data": data}), encoding="utf-8")


def write_mrqa_file(path, records: list[tuple[str, list[tuple[str, str, int, int]]]]) -> None:
    """records: [(context, [(qid, question, span_start, span_end_inclusive), ...])]"""
    lines = [json.dumps({"header": {"dataset": "testset", "split": "dev"}})]
    for context, qas in records:
        lines.append(
            json.dumps(
                {
                    "context": context,
                    "qas": [
                        {
                            "qid": qid,
                            "question": q,
                            "answers": [context[s : e + 1]],
                            "detected_answers": [
                                {"text": context[s : e + 1], "char_spans": [[s, e]]}
                            ],
                        }
                        for qid, q, s, e in qas
                    ],
                }
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
