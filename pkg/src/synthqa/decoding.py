"""Decoding strategies over any ConditionalLM: greedy, beam search, and
hybrid top-k + nucleus sampling.

The hybrid sampler truncates each step's distribution to the k most probable
tokens, renormalizes, then keeps the smallest top-probability prefix whose
cumulative mass reaches p (crossing token included) and renormalizes again.
Recorded step log-probabilities always come from the original untruncated
distribution, so downstream likelihood filtering scores model probabilities,
not sampler probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .lm import ConditionalLM
from .vocab import EOS

# absorbs float noise when a cumulative sum should reach the nucleus mass exactly
_MASS_TOL = 1e-12


class DecodeStrategy(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    TOPK_NUCLEUS = "topk_nucleus"


@dataclass
class DecodeConfig:
    """Decoding knobs. Defaults: k=20 candidates, 95% nucleus mass."""

    strategy: DecodeStrategy = DecodeStrategy.TOPK_NUCLEUS
    k: int = 20
    p: float = 0.95
    beam_width: int = 5
    max_len: int = 128
    seed: int = 0
    # measure the nucleus mass on untruncated probabilities of the top-k
    # survivors instead of on the renormalized top-k distribution
    nucleus_on_original: bool = False

    def __post_init__(self):
        self.strategy = DecodeStrategy(self.strategy)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must be in (0, 1]")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass(frozen=True)
class DecodedSequence:
    """A decoded token sequence with its per-step and total log-probabilities."""

    ids: tuple[int, ...]
    step_logprobs: tuple[float, ...]
    total_logprob: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        total = sum(self.step_logprobs)
        if self.total_logprob is None:
            object.__setattr__(self, "total_logprob", total)
        elif math.isfinite(total) and abs(self.total_logprob - total) > 1e-9:
            raise ValueError("total_logprob disagrees with the sum of step_logprobs")

    def __len__(self) -> int:
        return len(self.ids)


def _descending_order(probs: np.ndarray) -> np.ndarray:
    # stable sort on negated probs: equal probabilities keep ascending id order
    return np.argsort(-probs, kind="stable")


def topk_truncate(probs: np.ndarray, k: int) -> np.ndarray:
    """Keep the k most probable tokens (ties to the lower id) and renormalize."""
    if k < 1:
        raise ValueError("k must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    if k >= probs.size:
        return probs / probs.sum()
    keep = _descending_order(probs)[:k]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def _nucleus_keep(sorted_probs: np.ndarray, p: float) -> int:
    """Length of the minimal descending-probability prefix whose mass reaches p."""
    cum = np.cumsum(sorted_probs)
    cut = int(np.searchsorted(cum, p - _MASS_TOL, side="left"))
    return min(cut + 1, sorted_probs.size)


def nucleus_truncate(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest top-probability set with cumulative mass >= p, renormalized.

    The token that crosses the threshold is included; probability ties break
    toward the lower token id.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    order = _descending_order(probs)
    keep = order[: _nucleus_keep(probs[order], p)]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def truncate_for_sampling(probs: np.ndarray, cfg: DecodeConfig) -> np.ndarray:
    """One sampling step's truncation: top-k first, nucleus second."""
    if not cfg.nucleus_on_original:
        return nucleus_truncate(topk_truncate(probs, cfg.k), cfg.p)
    # nucleus mass measured on the original probabilities of the top-k survivors;
    # if they never reach p, all survivors are kept
    probs = np.asarray(probs, dtype=np.float64)
    order = _descending_order(probs)[: cfg.k]
    keep = order[: _nucleus_keep(probs[order], cfg.p)]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def _logprob(probs: np.ndarray, token: int) -> float:
    p = float(probs[token])
    return math.log(p) if p > 0.0 else float("-inf")


def _forced_steps(lm: ConditionalLM, state, prefix: Sequence[int]) -> tuple[list[int], list[float]]:
    ids: list[int] = []
    logprobs: list[float] = []
    for tok in prefix:
        probs = lm.next_distribution(state, ids)
        logprobs.append(_logprob(probs, tok))
        ids.append(int(tok))
    return ids, logprobs


def sample_sequence(
    lm: ConditionalLM,
    context: Sequence[int],
    cfg: DecodeConfig,
    rng: np.random.Generator,
    forced_prefix: Sequence[int] = (),
) -> DecodedSequence:
    """Sample one sequence with top-k + nucleus truncation at every step.

    Stops at EOS or cfg.max_len tokens (forced prefix included).  Step
    log-probabilities are taken from the untruncated model distribution,
    for the forced prefix tokens as well.
    """
    if len(forced_prefix) >= cfg.max_len:
        raise ValueError("forced prefix leaves no room to sample")
    state = lm.encode(context)
    ids, logprobs = _forced_steps(lm, state, forced_prefix)
    while len(ids) < cfg.max_len:
        probs = lm.next_distribution(state, ids)
        truncated = truncate_for_sampling(probs, cfg)
        tok = int(rng.choice(truncated.size, p=truncated))
        logprobs.append(_logprob(probs, tok))
        ids.append(tok)
        if tok == EOS:
            break
    return DecodedSequence(tuple(ids), tuple(logprobs))


def greedy_decode(
    lm: ConditionalLM,
    context: Sequence[int],
    max_len: int,
    forced_prefix: Sequence[int] = (),
) -> DecodedSequence:
    """Take the most probable token at every step (ties to the lower id)."""
    if len(forced_prefix) >= max_len:
        raise ValueError("forced prefix leaves no room to decode")
    state = lm.encode(context)
    ids, logprobs = _forced_steps(lm, state, forced_prefix)
    while len(ids) < max_len:
        probs = lm.next_distribution(state, ids)
        tok = int(np.argmax(probs))
        logprobs.append(_logprob(probs, tok))
        ids.append(tok)
        if tok == EOS:
            break
    return DecodedSequence(tuple(ids), tuple(logprobs))


def beam_search(
    lm: ConditionalLM,
    context: Sequence[int],
    width: int,
    max_len: int,
    forced_prefix: Sequence[int] = (),
) -> list[DecodedSequence]:
    """Length-unnormalized beam search.

    Hypotheses that emit EOS (or hit max_len) retire and are never extended.
    Returns at most width sequences in descending total log-probability;
    exact ties order lexicographically by token ids.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if len(forced_prefix) >= max_len:
        raise ValueError("forced prefix leaves no room to decode")
    state = lm.encode(context)
    start_ids, start_lps = _forced_steps(lm, state, forced_prefix)

    def sort_key(beam):
        ids, _lps, total = beam
        return (-total, ids)

    live: list[tuple[list[int], list[float], float]] = [(start_ids, start_lps, sum(start_lps))]
    finished: list[tuple[list[int], list[float], float]] = []
    while live:
        candidates: list[tuple[list[int], list[float], float]] = []
        for ids, lps, total in live:
            probs = lm.next_distribution(state, ids)
            for tok in np.nonzero(probs > 0.0)[0]:
                lp = math.log(float(probs[tok]))
                candidates.append((ids + [int(tok)], lps + [lp], total + lp))
        candidates.sort(key=sort_key)
        # joint prune: a hypothesis that finishes holds its beam slot this step,
        # so width=1 reduces exactly to greedy decoding
        live = []
        for beam in candidates[:width]:
            ids = beam[0]
            if ids[-1] == EOS or len(ids) == max_len:
                finished.append(beam)
            else:
                live.append(beam)
        # only the top width finished hypotheses can ever be returned
        finished.sort(key=sort_key)
        del finished[width:]
    return [DecodedSequence(tuple(ids), tuple(lps)) for ids, lps, _ in finished]
