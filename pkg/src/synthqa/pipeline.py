"""Passage-parallel orchestration of generate -> LM-filter, plus oracle-based
evaluation of the surviving pairs.

Each passage/sample index owns a derived RNG stream, so the merged result is
identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Passage
from .decoding import DecodeConfig
from .filtering import FilterReport, PoolingRule, RCOracle, select_top_m
from .generation import DropStats, GeneratedPair, GenerationMode, SegmentLimits, generate
from .lm import ConditionalLM
from .metrics import EvalResult, exact_match, f1_score


@dataclass
class PipelineResult:
    kept_pairs: list[GeneratedPair]
    all_pairs: list[GeneratedPair]
    drop_stats: DropStats
    filter_report: FilterReport


def run_generation_pipeline(
    lm: ConditionalLM,
    passages: Sequence[Passage],
    mode: GenerationMode,
    n_samples: int,
    keep_m: int,
    pooling: PoolingRule,
    decode_cfg: DecodeConfig,
    seed: int,
    workers: int = 1,
    limits: SegmentLimits = SegmentLimits(),
) -> PipelineResult:
    """Generate n_samples candidates per passage and keep the top keep_m by LM score."""

    def one_passage(passage: Passage) -> tuple[list[GeneratedPair], DropStats]:
        return generate(mode, lm, passage, n_samples, decode_cfg, seed, limits)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_passage, passages))
    else:
        results = [one_passage(p) for p in passages]

    all_pairs: list[GeneratedPair] = []
    stats = DropStats()
    for pairs, passage_stats in results:
        all_pairs.extend(pairs)
        stats = stats.merge(passage_stats)
    kept, report = select_top_m(all_pairs, keep_m, pooling, mode)
    return PipelineResult(kept, all_pairs, stats, report)


def oracle_eval_pairs(
    pairs: Sequence[GeneratedPair],
    passages: Mapping[str, str],
    oracle: RCOracle,
) -> EvalResult:
    """Round-trip agreement of generated pairs: the oracle answers each
    generated question and is scored against the generated answer."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    em_total = 0.0
    f1_total = 0.0
    for pair in pairs:
        predicted = oracle.answer(passages[pair.passage_id], pair.question)
        em_total += exact_match(predicted, pair.answer)
        f1_total += f1_score(predicted, pair.answer)
    return EvalResult(em_total / len(pairs), f1_total / len(pairs), len(pairs))
