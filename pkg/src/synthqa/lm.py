"""Conditional language-model contract and the deterministic scripted implementation.

A conditional LM factors the probability of a token sequence given a context
into per-step next-token distributions.  Everything downstream (decoding,
generation, scoring) consumes only this interface, so a scripted table-driven
model and a trained model are interchangeable.

Distributions are plain float64 numpy vectors of length ``len(vocab)`` that
sum to one; token sequences are lists of ids.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Any, Sequence

import numpy as np

from .vocab import Vocabulary

DISTRIBUTION_TOL = 1e-9


def validate_distribution(probs: np.ndarray, tol: float = DISTRIBUTION_TOL) -> None:
    """Raise ValueError unless probs is a non-negative vector summing to 1 within tol."""
    probs = np.asarray(probs)
    if probs.ndim != 1:
        raise ValueError(f"distribution must be 1-D, got shape {probs.shape}")
    if np.any(probs < 0):
        raise ValueError("distribution has negative entries")
    total = float(probs.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"distribution sums to {total!r}, expected 1 within {tol}")


def uniform_distribution(size: int) -> np.ndarray:
    return np.full(size, 1.0 / size, dtype=np.float64)


def delta_distribution(size: int, token: int) -> np.ndarray:
    probs = np.zeros(size, dtype=np.float64)
    probs[token] = 1.0
    return probs


class ConditionalLM(ABC):
    """Next-token distribution over a vocabulary, conditioned on an encoded context."""

    vocab: Vocabulary

    #: longest context the encoder accepts, or None when unbounded
    max_context_len: int | None = None

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @abstractmethod
    def encode(self, context: Sequence[int]) -> Any:
        """Encode a context token sequence into an opaque reusable state."""

    @abstractmethod
    def next_distribution(self, state: Any, prefix: Sequence[int]) -> np.ndarray:
        """Distribution of the next token after prefix, given the encoded context."""


class ScriptedLM(ConditionalLM):
    """Table-driven LM: exact distributions for scripted (context, prefix) pairs,
    uniform everywhere else.  Deterministic by construction; the workhorse test oracle."""

    def __init__(self, vocab: Vocabulary, table: dict[tuple[tuple[int, ...], tuple[int, ...]], np.ndarray] | None = None):
        self.vocab = vocab
        self.table: dict[tuple[tuple[int, ...], tuple[int, ...]], np.ndarray] = {}
        if table:
            for (context, prefix), probs in table.items():
                self.add(context, prefix, probs)

    def add(self, context: Sequence[int], prefix: Sequence[int], probs: Sequence[float]) -> None:
        arr = np.asarray(probs, dtype=np.float64)
        if arr.shape != (self.vocab_size,):
            raise ValueError(f"expected a vector of length {self.vocab_size}, got shape {arr.shape}")
        validate_distribution(arr)
        self.table[(tuple(context), tuple(prefix))] = arr

    def script_path(self, context: Sequence[int], target: Sequence[int]) -> None:
        """Script a fully deterministic continuation: each step puts mass 1 on the next target token."""
        target = list(target)
        for i, tok in enumerate(target):
            self.add(context, target[:i], delta_distribution(self.vocab_size, tok))

    def encode(self, context: Sequence[int]) -> tuple[int, ...]:
        return tuple(context)

    def next_distribution(self, state: tuple[int, ...], prefix: Sequence[int]) -> np.ndarray:
        entry = self.table.get((state, tuple(prefix)))
        if entry is None:
            return uniform_distribution(self.vocab_size)
        return entry


def sequence_logprob(lm: ConditionalLM, context: Sequence[int], target: Sequence[int]) -> list[float]:
    """Per-token log-probabilities of target under lm, teacher-forced on the context.

    Entry i is the log-probability of target[i] after the prefix target[:i].
    Zero-probability tokens yield -inf entries rather than raising.
    """
    target = list(target)
    if not target:
        raise ValueError("target must be non-empty")
    state = lm.encode(context)
    out: list[float] = []
    for i, tok in enumerate(target):
        probs = lm.next_distribution(state, target[:i])
        p = float(probs[tok])
        out.append(math.log(p) if p > 0.0 else float("-inf"))
    return out
