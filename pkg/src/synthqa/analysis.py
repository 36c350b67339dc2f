"""Experiment harnesses: parameter sweeps over the full pipeline and CSV
renderings of sweep and bucket tables."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Passage
from .decoding import DecodeConfig
from .filtering import PoolingRule, RCOracle, lm_score
from .generation import GeneratedPair, GenerationMode, SegmentLimits
from .metrics import BucketRow, EvalResult, f1_score
from .pipeline import oracle_eval_pairs, run_generation_pipeline
from .util import atomic_write_text

SWEEP_AXES = ("keep_m", "passage_count")


def sweep_harness(
    axis: str,
    values: Sequence[int],
    lm,
    passages: Sequence[Passage],
    mode: GenerationMode,
    decode_cfg: DecodeConfig,
    oracle: RCOracle,
    n_samples: int = 10,
    keep_m: int = 5,
    pooling: PoolingRule = PoolingRule.SUM,
    seed: int = 0,
    workers: int = 1,
    limits: SegmentLimits = SegmentLimits(),
) -> list[tuple[int, EvalResult]]:
    """Run generate -> filter -> oracle-evaluate once per axis value, shared seed.

    axis "keep_m" varies the pairs kept per passage; "passage_count" varies how
    many passages feed the pipeline.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    if not values:
        raise ValueError("values must be non-empty")
    texts = {p.id: p.text for p in passages}
    rows: list[tuple[int, EvalResult]] = []
    for value in values:
        try:
            if axis == "keep_m":
                result = run_generation_pipeline(
                    lm, passages, mode, n_samples, value, pooling, decode_cfg, seed, workers, limits
                )
            else:
                result = run_generation_pipeline(
                    lm, passages[:value], mode, n_samples, keep_m, pooling, decode_cfg, seed, workers, limits
                )
            rows.append((value, oracle_eval_pairs(result.kept_pairs, texts, oracle)))
        except Exception as exc:
            raise RuntimeError(f"sweep failed at {axis}={value}: {exc}") from exc
    return rows


def score_pairs_for_buckets(
    pairs: Sequence[GeneratedPair],
    passages: Mapping[str, str],
    oracle: RCOracle,
    mode: GenerationMode,
    pooling: PoolingRule = PoolingRule.SUM,
) -> list[tuple[float, float]]:
    """(lm_score, oracle F1) per pair, ready for bucket_analysis."""
    scored = []
    for pair in pairs:
        predicted = oracle.answer(passages[pair.passage_id], pair.question)
        scored.append((lm_score(pair, mode, pooling), f1_score(predicted, pair.answer)))
    return scored


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_sweep_csv(axis: str, rows: Sequence[tuple[int, EvalResult]], path: str | Path) -> None:
    atomic_write_text(
        path,
        _csv_text(
            [axis, "em", "f1", "count"],
            [[value, f"{r.em_pct:.2f}", f"{r.f1_pct:.2f}", r.count] for value, r in rows],
        ),
    )


def write_bucket_csv(rows: Sequence[BucketRow], path: str | Path) -> None:
    atomic_write_text(
        path,
        _csv_text(
            ["bucket_index", "mean_score", "mean_f1", "size"],
            [[r.bucket_index, repr(r.mean_score), repr(r.mean_f1), r.size] for r in rows],
        ),
    )
