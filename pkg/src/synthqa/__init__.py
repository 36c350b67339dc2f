"""synthqa: end-to-end synthetic question-answer generation.

Joint question/answer generation from passages with a conditional
encoder-decoder LM, hybrid top-k + nucleus decoding, likelihood-based and
round-trip filtering, and an evaluation harness.  A pluggable LM interface
lets a trainable toy model and a deterministic scripted model drive every
algorithm at desk scale.
"""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    CorpusFormatError,
    CorpusValidationError,
    LabeledExample,
    Passage,
    load_mrqa,
    load_squad,
    mix_datasets,
    select_passages,
    write_synthetic,
)
from .decoding import (
    DecodeConfig,
    DecodedSequence,
    DecodeStrategy,
    beam_search,
    greedy_decode,
    nucleus_truncate,
    sample_sequence,
    topk_truncate,
)
from .filtering import (
    FilterReport,
    LexicalOracle,
    PoolingRule,
    RCOracle,
    lexical_oracle,
    lm_score,
    round_trip_filter,
    select_top_m,
)
from .generation import (
    DropStats,
    GeneratedPair,
    GenerationMode,
    SegmentLimits,
    build_target,
    generate,
    parse_output,
    propose_spans,
)
from .lm import ConditionalLM, ScriptedLM, sequence_logprob, validate_distribution
from .metrics import (
    BucketRow,
    EvalResult,
    bleu,
    bucket_analysis,
    corpus_eval,
    exact_match,
    f1_score,
    normalize_answer,
)
from .toy_lm import ToyEncDecLM, TrainConfig, train_mle
from .vocab import Vocabulary, build_vocab, detokenize, split_words, tokenize

__all__ = [
    "__version__",
    "Corpus", "CorpusFormatError", "CorpusValidationError", "LabeledExample", "Passage",
    "load_squad", "load_mrqa", "select_passages", "write_synthetic", "mix_datasets",
    "Vocabulary", "build_vocab", "tokenize", "detokenize", "split_words",
    "ConditionalLM", "ScriptedLM", "sequence_logprob", "validate_distribution",
    "ToyEncDecLM", "TrainConfig", "train_mle",
    "DecodeConfig", "DecodeStrategy", "DecodedSequence",
    "topk_truncate", "nucleus_truncate", "sample_sequence", "beam_search", "greedy_decode",
    "GenerationMode", "GeneratedPair", "DropStats", "SegmentLimits",
    "build_target", "parse_output", "generate", "propose_spans",
    "PoolingRule", "RCOracle", "FilterReport", "LexicalOracle",
    "lm_score", "select_top_m", "round_trip_filter", "lexical_oracle",
    "EvalResult", "BucketRow", "normalize_answer", "exact_match", "f1_score",
    "corpus_eval", "bleu", "bucket_analysis",
]
