"""Command-line pipeline driver.

Subcommands: train-lm, generate, filter, evaluate, analyze, mix.  Each is
driven by a flat JSON config file (--config, or the SYNTHQA_CONFIG environment
variable) with flag overrides, writes machine-readable results to files only,
reports progress on stderr, and finishes by writing a RunManifest recording
the config snapshot, seed, per-stage counts and wall times, and output
digests.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import write_bucket_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    load_mrqa,
    load_squad,
    mix_datasets,
    select_passages,
    write_corpus_squad,
    write_synthetic,
)
from .decoding import DecodeConfig
from .filtering import FilterReport, LexicalOracle, PoolingRule, round_trip_filter, select_top_m
from .generation import (
    GenerationMode,
    SegmentLimits,
    load_pairs_jsonl,
    normalize_passage,
    training_examples,
    write_pairs_jsonl,
)
from .metrics import bucket_analysis, corpus_eval
from .analysis import score_pairs_for_buckets
from .pipeline import run_generation_pipeline
from .toy_lm import ToyEncDecLM, TrainConfig, train_mle
from .util import atomic_write_text, dump_json, sha256_file
from .vocab import build_vocab, tokenize

logger = logging.getLogger("synthqa")

CONFIG_ENV_VAR = "SYNTHQA_CONFIG"


class UsageError(ValueError):
    """Bad invocation or config; exits with status 2."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Flat run configuration; file values override defaults, flags override both."""

    # generation layout and decoding
    mode: str = "qagen2s"
    strategy: str = "topk_nucleus"
    k: int = 20
    p: float = 0.95
    beam_width: int = 5
    max_len: int = 128
    nucleus_on_original: bool = False
    # sampling / filtering protocol
    n_samples: int = 10
    keep_m: int = 5
    pooling: str = "sum"
    filter_strategy: str = "lm"  # lm | roundtrip | none
    # passage selection
    passage_count: int = 100000
    min_tokens: int = 100
    max_tokens: int = 550
    # segment bounds
    max_question_tokens: int = 64
    max_answer_tokens: int = 32
    # reproducibility and parallelism
    seed: int = 0
    workers: int = 1
    # toy model / training
    vocab_size: int = 200
    dim: int = 32
    layers: int = 1
    heads: int = 2
    max_context_len: int = 640
    max_target_len: int = 128
    epochs: int = 200
    learning_rate: float = 1e-2
    batch_size: int = 8
    # analysis
    bucket_size: int = 200
    # paths (command-dependent)
    corpus_path: str = ""
    corpus_format: str = ""  # squad | mrqa | "" = sniff by extension
    exclude_path: str = ""
    exclude_format: str = ""
    checkpoint_path: str = ""
    pairs_path: str = ""
    passages_path: str = ""
    passages_format: str = ""
    predictions_path: str = ""
    gold_path: str = ""
    gold_format: str = ""
    synthetic_path: str = ""
    synthetic_format: str = ""
    supervised_path: str = ""
    supervised_format: str = ""
    out_dir: str = "out"
    output_format: str = "squad"

    @classmethod
    def from_sources(cls, config_path: str | None, overrides: dict) -> "PipelineConfig":
        values: dict = {}
        known = {f.name for f in dataclasses.fields(cls)}
        if config_path:
            try:
                with open(config_path, "r", encoding="utf-8") as fh:
                    file_values = json.load(fh)
            except FileNotFoundError as exc:
                raise UsageError(f"config file not found: {config_path}") from exc
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
            if not isinstance(file_values, dict):
                raise UsageError(f"config file {config_path} must hold a JSON object")
            for key in file_values:
                if key not in known:
                    raise UsageError(f"unknown config key: {key}")
            values.update(file_values)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise UsageError(f"unknown config key: {key}")
            values[key] = value
        config = cls(**values)
        if config.keep_m > config.n_samples:
            logger.warning(
                "keep_m=%d exceeds n_samples=%d; filtering will keep everything",
                config.keep_m, config.n_samples,
            )
        return config

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            strategy=self.strategy,
            k=self.k,
            p=self.p,
            beam_width=self.beam_width,
            max_len=self.max_len,
            seed=self.seed,
            nucleus_on_original=self.nucleus_on_original,
        )

    def limits(self) -> SegmentLimits:
        return SegmentLimits(self.max_question_tokens, self.max_answer_tokens)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunManifest:
    """What a run did: enough to reproduce it (config + seed + input digests)
    and to verify its outputs (digests)."""

    command: str
    config: dict
    seed: int
    version: str = __version__
    stages: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def add_stage(self, name: str, seconds: float, **counts) -> None:
        self.stages.append({"name": name, "wall_time_s": seconds, "counts": counts})

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs[Path(path).name] = sha256_file(path)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / f"manifest-{self.command}.json"
        atomic_write_text(path, dump_json(dataclasses.asdict(self)))
        return path


class _Stage:
    """Times a pipeline stage and attributes its failures."""

    def __init__(self, manifest: RunManifest, name: str):
        self.manifest = manifest
        self.name = name
        self.counts: dict = {}

    def __enter__(self):
        logger.info("stage %s ...", self.name)
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._start
        if exc is not None:
            if isinstance(exc, (UsageError, StageError)):
                return False
            raise StageError(self.name, exc) from exc
        self.manifest.add_stage(self.name, elapsed, **self.counts)
        logger.info("stage %s done in %.2fs %s", self.name, elapsed, self.counts or "")
        return False


def _load_corpus(path: str, format: str = "") -> Corpus:
    if not path:
        raise UsageError("a corpus path is required (set corpus_path or the matching flag)")
    fmt = format or ("mrqa" if str(path).endswith(".jsonl") else "squad")
    if fmt == "squad":
        return load_squad(path)
    if fmt == "mrqa":
        return load_mrqa(path)
    raise UsageError(f"unknown corpus format {fmt!r}")


def _corpus_texts_for_vocab(corpus: Corpus) -> list[str]:
    texts = [p.text for p in corpus.passages]
    texts += [ex.question for ex in corpus.examples]
    texts += [ex.answer_text for ex in corpus.examples]
    return texts


# --- subcommands ---


def cmd_train_lm(config: PipelineConfig) -> int:
    manifest = RunManifest("train-lm", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    mode = GenerationMode(config.mode)
    with _Stage(manifest, "load") as stage:
        corpus = _load_corpus(config.corpus_path, config.corpus_format)
        manifest.add_input(config.corpus_path)
        stage.counts.update(passages=len(corpus.passages), examples=len(corpus.examples))
    with _Stage(manifest, "vocab") as stage:
        vocab = build_vocab(_corpus_texts_for_vocab(corpus), config.vocab_size)
        stage.counts.update(vocab_size=len(vocab))
    with _Stage(manifest, "prepare") as stage:
        data = []
        for ex in corpus.examples:
            passage = corpus.passage_by_id(ex.passage_id)
            data.extend(
                training_examples(
                    mode,
                    tokenize(passage.text, vocab),
                    tokenize(ex.question, vocab),
                    tokenize(ex.answer_text, vocab),
                    config.max_context_len,
                )
            )
        stage.counts.update(training_pairs=len(data))
    with _Stage(manifest, "train") as stage:
        lm = ToyEncDecLM(
            vocab,
            dim=config.dim,
            layers=config.layers,
            heads=config.heads,
            max_context_len=config.max_context_len,
            max_target_len=config.max_target_len,
            seed=config.seed,
        )
        train_config = TrainConfig(
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            seed=config.seed,
        )
        _, trace = train_mle(lm, data, train_config)
        stage.counts.update(epochs=len(trace), final_nll_per_token=trace[-1] if trace else None)
    with _Stage(manifest, "write"):
        checkpoint_path = Path(config.checkpoint_path) if config.checkpoint_path else out_dir / "checkpoint.json"
        save_checkpoint(lm, checkpoint_path)
        atomic_write_text(out_dir / "loss_trace.json", dump_json({"nll_per_token": trace}))
        manifest.add_output(checkpoint_path)
        manifest.add_output(out_dir / "loss_trace.json")
    manifest.write(out_dir)
    return 0


def cmd_generate(config: PipelineConfig) -> int:
    manifest = RunManifest("generate", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    mode = GenerationMode(config.mode)
    with _Stage(manifest, "load") as stage:
        corpus = _load_corpus(config.corpus_path, config.corpus_format)
        manifest.add_input(config.corpus_path)
        exclude: set[str] = set()
        if config.exclude_path:
            exclude_corpus = _load_corpus(config.exclude_path, config.exclude_format)
            exclude = {p.text for p in exclude_corpus.passages}
            manifest.add_input(config.exclude_path)
        lm = load_checkpoint(config.checkpoint_path)
        manifest.add_input(config.checkpoint_path)
        stage.counts.update(passages=len(corpus.passages), excluded_texts=len(exclude))
    with _Stage(manifest, "select") as stage:
        selected = select_passages(
            corpus, config.passage_count, config.min_tokens, config.max_tokens, exclude, config.seed
        )
        normalized = [normalize_passage(p, lm.vocab) for p in selected]
        stage.counts.update(selected=len(normalized))
    with _Stage(manifest, "generate") as stage:
        result = run_generation_pipeline(
            lm,
            normalized,
            mode,
            config.n_samples,
            config.keep_m,
            PoolingRule(config.pooling),
            config.decode_config(),
            config.seed,
            config.workers,
            config.limits(),
        )
        stage.counts.update(**result.drop_stats.to_dict())
        stage.counts.update(kept=len(result.kept_pairs))
    with _Stage(manifest, "write"):
        norm_corpus = Corpus(tuple(normalized), (), "synthetic")
        suffix = "json" if config.output_format == "squad" else "jsonl"
        dataset_path = out_dir / f"synthetic.{suffix}"
        write_synthetic(result.kept_pairs, norm_corpus, dataset_path, config.output_format)
        write_pairs_jsonl(result.all_pairs, out_dir / "pairs_all.jsonl")
        write_pairs_jsonl(result.kept_pairs, out_dir / "pairs_kept.jsonl")
        report = {
            "drop_stats": result.drop_stats.to_dict(),
            "filter_report": result.filter_report.to_dict(),
        }
        atomic_write_text(out_dir / "report.json", dump_json(report))
        for name in (dataset_path, out_dir / "pairs_all.jsonl", out_dir / "pairs_kept.jsonl", out_dir / "report.json"):
            manifest.add_output(name)
    manifest.write(out_dir)
    return 0


def cmd_filter(config: PipelineConfig) -> int:
    manifest = RunManifest("filter", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    mode = GenerationMode(config.mode)
    strategy = config.filter_strategy
    if strategy not in ("lm", "roundtrip", "none"):
        raise UsageError(f"unknown filter strategy {strategy!r}")
    with _Stage(manifest, "load") as stage:
        pairs = load_pairs_jsonl(config.pairs_path)
        manifest.add_input(config.pairs_path)
        passages = _load_corpus(config.passages_path, config.passages_format)
        manifest.add_input(config.passages_path)
        stage.counts.update(pairs=len(pairs))
    with _Stage(manifest, "filter") as stage:
        if strategy == "lm":
            kept, report = select_top_m(pairs, config.keep_m, PoolingRule(config.pooling), mode)
        elif strategy == "roundtrip":
            kept, report = round_trip_filter(pairs, passages.passage_texts(), LexicalOracle())
        else:
            kept = list(pairs)
            report = FilterReport(input_count=len(pairs), kept_count=len(pairs))
            report.check()
        stage.counts.update(input=report.input_count, kept=report.kept_count)
    with _Stage(manifest, "write"):
        suffix = "json" if config.output_format == "squad" else "jsonl"
        dataset_path = out_dir / f"filtered.{suffix}"
        write_synthetic(kept, passages, dataset_path, config.output_format)
        write_pairs_jsonl(kept, out_dir / "pairs_kept.jsonl")
        atomic_write_text(out_dir / "report.json", dump_json({"filter_report": report.to_dict()}))
        for name in (dataset_path, out_dir / "pairs_kept.jsonl", out_dir / "report.json"):
            manifest.add_output(name)
    manifest.write(out_dir)
    return 0


def cmd_evaluate(config: PipelineConfig) -> int:
    manifest = RunManifest("evaluate", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    with _Stage(manifest, "load") as stage:
        with open(config.predictions_path, "r", encoding="utf-8") as fh:
            predictions = json.load(fh)
        if not isinstance(predictions, dict):
            raise UsageError("predictions file must map qid -> answer string")
        gold = _load_corpus(config.gold_path, config.gold_format)
        manifest.add_input(config.predictions_path)
        manifest.add_input(config.gold_path)
        stage.counts.update(predictions=len(predictions), gold=len(gold.examples))
    with _Stage(manifest, "evaluate") as stage:
        result = corpus_eval(predictions, gold)
        stage.counts.update(em=result.em_pct, f1=result.f1_pct, count=result.count)
    with _Stage(manifest, "write"):
        payload = {"em": f"{result.em_pct:.2f}", "f1": f"{result.f1_pct:.2f}", "count": result.count}
        atomic_write_text(out_dir / "eval.json", dump_json(payload))
        manifest.add_output(out_dir / "eval.json")
    logger.info("EM %.2f F1 %.2f over %d items", result.em_pct, result.f1_pct, result.count)
    manifest.write(out_dir)
    return 0


def cmd_analyze(config: PipelineConfig) -> int:
    manifest = RunManifest("analyze", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    mode = GenerationMode(config.mode)
    with _Stage(manifest, "load") as stage:
        pairs = load_pairs_jsonl(config.pairs_path)
        passages = _load_corpus(config.passages_path, config.passages_format)
        manifest.add_input(config.pairs_path)
        manifest.add_input(config.passages_path)
        stage.counts.update(pairs=len(pairs))
    with _Stage(manifest, "analyze") as stage:
        # f1 column source: round-trip agreement against the lexical oracle
        scored = score_pairs_for_buckets(
            pairs, passages.passage_texts(), LexicalOracle(), mode, PoolingRule(config.pooling)
        )
        rows = bucket_analysis(scored, config.bucket_size)
        stage.counts.update(buckets=len(rows), f1_source="lexical_oracle_roundtrip")
    with _Stage(manifest, "write"):
        write_bucket_csv(rows, out_dir / "buckets.csv")
        manifest.add_output(out_dir / "buckets.csv")
    manifest.write(out_dir)
    return 0


def cmd_mix(config: PipelineConfig) -> int:
    manifest = RunManifest("mix", config.to_dict(), config.seed)
    out_dir = Path(config.out_dir)
    with _Stage(manifest, "load") as stage:
        synthetic = _load_corpus(config.synthetic_path, config.synthetic_format)
        supervised = _load_corpus(config.supervised_path, config.supervised_format)
        manifest.add_input(config.synthetic_path)
        manifest.add_input(config.supervised_path)
        stage.counts.update(
            synthetic=len(synthetic.examples), supervised=len(supervised.examples)
        )
    with _Stage(manifest, "mix") as stage:
        mixed = mix_datasets(synthetic, supervised, config.seed)
        stage.counts.update(examples=len(mixed.examples), passages=len(mixed.passages))
    with _Stage(manifest, "write"):
        write_corpus_squad(mixed, out_dir / "mixed.json")
        manifest.add_output(out_dir / "mixed.json")
    manifest.write(out_dir)
    return 0


# --- argument parsing ---


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=os.environ.get(CONFIG_ENV_VAR) or None,
                        help=f"JSON config file (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", dest="out_dir", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthqa", description=__doc__)
    parser.add_argument("--version", action="version", version=f"synthqa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-lm", help="fit the toy LM on a labeled corpus")
    _add_shared_flags(p)
    p.add_argument("--corpus", dest="corpus_path")
    p.add_argument("--mode", dest="mode")
    p.add_argument("--epochs", dest="epochs", type=int)
    p.add_argument("--checkpoint", dest="checkpoint_path")
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("generate", help="generate synthetic pairs from passages")
    _add_shared_flags(p)
    p.add_argument("--corpus", dest="corpus_path")
    p.add_argument("--checkpoint", dest="checkpoint_path")
    p.add_argument("--mode", dest="mode")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--keep-m", dest="keep_m", type=int)
    p.add_argument("--passage-count", dest="passage_count", type=int)
    p.add_argument("--format", dest="output_format", choices=("squad", "mrqa"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("filter", help="filter a generated pair sidecar")
    _add_shared_flags(p)
    p.add_argument("--pairs", dest="pairs_path")
    p.add_argument("--passages", dest="passages_path")
    p.add_argument("--strategy", dest="filter_strategy", choices=("lm", "roundtrip", "none"))
    p.add_argument("--keep-m", dest="keep_m", type=int)
    p.add_argument("--mode", dest="mode")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", help="score a predictions file against gold answers")
    _add_shared_flags(p)
    p.add_argument("--predictions", dest="predictions_path")
    p.add_argument("--gold", dest="gold_path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="bucket generated pairs by LM score")
    _add_shared_flags(p)
    p.add_argument("--pairs", dest="pairs_path")
    p.add_argument("--passages", dest="passages_path")
    p.add_argument("--bucket-size", dest="bucket_size", type=int)
    p.add_argument("--mode", dest="mode")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mix", help="blend synthetic and supervised corpora")
    _add_shared_flags(p)
    p.add_argument("--synthetic", dest="synthetic_path")
    p.add_argument("--supervised", dest="supervised_path")
    p.set_defaults(func=cmd_mix)

    return parser


_OVERRIDE_KEYS = (
    "seed", "workers", "out_dir", "corpus_path", "checkpoint_path", "mode",
    "n_samples", "keep_m", "passage_count", "output_format", "pairs_path",
    "passages_path", "filter_strategy", "predictions_path", "gold_path",
    "bucket_size", "synthetic_path", "supervised_path", "epochs",
)


def main(argv: list[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    try:
        config = PipelineConfig.from_sources(args.config, overrides)
        return args.func(config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
