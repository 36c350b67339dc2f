"""Vocabulary and word-level tokenization with a character fallback.

The tokenizer lowercases and splits text into word and punctuation units.
Units present in the vocabulary map to single ids; everything else decomposes
into character tokens (``x``, ``##y``, ``##z`` for "xyz") so that no text is
ever unrepresentable and detokenization loses nothing but case and spacing.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, BOS, EOS, SEP, CODE_Q, CODE_A = range(6)
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>", "<q>", "<a>")

_UNIT_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_CHAR_CONT = "##"


def split_words(text: str) -> list[str]:
    """Split text into word and punctuation units (case preserved, whitespace dropped)."""
    return _UNIT_RE.findall(text)


def split_words_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Like split_words but yields (unit, char_start, char_end) triples."""
    return [(m.group(0), m.start(), m.end()) for m in _UNIT_RE.finditer(text)]


@dataclass(frozen=True)
class Vocabulary:
    """Dense token inventory: six reserved specials first, then words, then characters."""

    tokens: tuple[str, ...]
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) < len(SPECIAL_TOKENS) or tuple(self.tokens[:6]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the six reserved special tokens")
        ids = {}
        for i, tok in enumerate(self.tokens):
            if tok in ids:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            ids[tok] = i
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def get(self, token: str) -> int | None:
        return self._ids.get(token)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary from word tokens, closing it over their characters."""
        seen = dict.fromkeys(SPECIAL_TOKENS)
        for w in words:
            seen.setdefault(w)
        chars = sorted({ch for w in seen if w not in SPECIAL_TOKENS for ch in w})
        for ch in chars:
            seen.setdefault(ch)
        for ch in chars:
            seen.setdefault(_CHAR_CONT + ch)
        return cls(tuple(seen))


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids: lowercase, split into units, char-decompose OOV units.

    Characters never seen by the vocabulary are dropped (cannot happen for text
    the vocabulary was built over).
    """
    ids: list[int] = []
    for unit in split_words(text):
        unit = unit.lower()
        whole = vocab.get(unit)
        if whole is not None:
            ids.append(whole)
            continue
        first = True
        for ch in unit:
            tok = ch if first else _CHAR_CONT + ch
            tid = vocab.get(tok)
            if tid is None and not first:
                tid = vocab.get(ch)  # continuation form missing, fall back to the bare char
            if tid is not None:
                ids.append(tid)
                first = False
    return ids


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Render token ids back to text: space-joined units, char runs rejoined."""
    parts: list[str] = []
    for tid in ids:
        tok = vocab.tokens[tid]
        if tok.startswith(_CHAR_CONT) and len(tok) > len(_CHAR_CONT) and parts:
            parts[-1] += tok[len(_CHAR_CONT):]
        else:
            parts.append(tok)
    return " ".join(parts)


def build_vocab(texts: Iterable[str], max_size: int) -> Vocabulary:
    """Vocabulary over a text collection: top max_size units by frequency, plus char closure.

    Frequency ties break alphabetically so the result is deterministic.
    """
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counts.update(u.lower() for u in split_words(text))
    if n_texts == 0:
        raise ValueError("cannot build a vocabulary from an empty text collection")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [tok for tok, _ in ranked[:max_size]]
    # close over every character seen anywhere, not just in kept words
    extra_chars = sorted({ch for tok in counts for ch in tok})
    return Vocabulary.from_words(words + extra_chars)
