"""CLI subcommands: config handling, artifact emission, reruns, exit codes."""

import json
import subprocess
import sys

import pytest

from synthqa.checkpoint import load_checkpoint, save_checkpoint
from synthqa.cli import PipelineConfig, UsageError, main
from synthqa.corpus import Corpus, LabeledExample, Passage, load_squad, write_corpus_squad
from synthqa.decoding import greedy_decode
from synthqa.generation import GeneratedPair, write_pairs_jsonl
from synthqa.lm import ScriptedLM
from synthqa.vocab import EOS, SEP, Vocabulary, tokenize

from conftest import write_squad_file

VOCAB_WORDS = [chr(ord("a") + i) * 2 for i in range(10)]  # aa .. jj


def scripted_checkpoint(tmp_path, name="scripted.json"):
    vocab = Vocabulary.from_words(VOCAB_WORDS)
    path = tmp_path / name
    save_checkpoint(ScriptedLM(vocab), path)  # uniform fallback everywhere
    return path


def toy_corpus_file(tmp_path, n_passages=50, tokens=110, name="corpus.json"):
    rng_words = VOCAB_WORDS
    paragraphs = []
    for i in range(n_passages):
        words = [rng_words[(i + j) % len(rng_words)] for j in range(tokens)]
        paragraphs.append((" ".join(words), []))
    path = tmp_path / name
    write_squad_file(path, paragraphs)
    return path


def labeled_corpus_file(tmp_path, n=20, name="labeled.json"):
    paragraphs = []
    for i in range(n):
        a = VOCAB_WORDS[i % len(VOCAB_WORDS)]
        b = VOCAB_WORDS[(i + 3) % len(VOCAB_WORDS)]
        c = VOCAB_WORDS[(i + 7) % len(VOCAB_WORDS)]
        context = f"{a} {b} {c} marker{i}"
        question = f"{b} {c}"
        paragraphs.append((context, [(f"qa{i}", question, a, context.index(a))]))
    path = tmp_path / name
    write_squad_file(path, paragraphs)
    return path


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def config_file(tmp_path, name="config.json", **values):
    path = tmp_path / name
    path.write_text(json.dumps(values))
    return path


# --- generate ---


def test_generate_defaults_bound_and_manifest(tmp_path):
    corpus = toy_corpus_file(tmp_path)
    checkpoint = scripted_checkpoint(tmp_path)
    out = tmp_path / "out"
    code = run_cli("generate", "--corpus", corpus, "--checkpoint", checkpoint,
                   "--out", out, "--seed", 1)
    assert code == 0
    loaded = load_squad(out / "synthetic.json")
    assert len(loaded.examples) <= 250  # 5 kept per passage over 50 passages
    manifest = json.loads((out / "manifest-generate.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["version"]
    assert {s["name"] for s in manifest["stages"]} == {"load", "select", "generate", "write"}
    assert manifest["config"]["n_samples"] == 10 and manifest["config"]["keep_m"] == 5
    # digests in the manifest match the files on disk
    from synthqa.util import sha256_file

    for name, digest in manifest["outputs"].items():
        assert sha256_file(out / name) == digest
    report = json.loads((out / "report.json").read_text())
    assert report["drop_stats"]["generated"] == 500


def test_generate_flag_overrides_match_protocol(tmp_path):
    corpus = toy_corpus_file(tmp_path, n_passages=4)
    checkpoint = scripted_checkpoint(tmp_path)
    out = tmp_path / "out"
    code = run_cli("generate", "--corpus", corpus, "--checkpoint", checkpoint, "--out", out,
                   "--mode", "qagen2s", "--keep-m", 5, "--n-samples", 10, "--seed", 3)
    assert code == 0
    manifest = json.loads((out / "manifest-generate.json").read_text())
    assert manifest["config"]["mode"] == "qagen2s"
    assert manifest["config"]["keep_m"] == 5
    assert manifest["config"]["n_samples"] == 10


def test_generate_rerun_is_byte_identical(tmp_path):
    corpus = toy_corpus_file(tmp_path, n_passages=10)
    checkpoint = scripted_checkpoint(tmp_path)
    outs = [tmp_path / "out_a", tmp_path / "out_b"]
    for out in outs:
        assert run_cli("generate", "--corpus", corpus, "--checkpoint", checkpoint,
                       "--out", out, "--seed", 99) == 0
    for name in ("synthetic.json", "pairs_all.jsonl", "pairs_kept.jsonl", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_generate_missing_checkpoint_is_stage_error(tmp_path, capsys):
    corpus = toy_corpus_file(tmp_path, n_passages=2)
    code = run_cli("generate", "--corpus", corpus, "--checkpoint", tmp_path / "nope.json",
                   "--out", tmp_path / "out")
    assert code == 1
    assert "stage 'load' failed" in capsys.readouterr().err


# --- filter ---


def filter_fixture(tmp_path):
    """Passages file + sidecar with two groups of 10 graded-score pairs."""
    passages = []
    pairs = []
    for g in range(2):
        text = " ".join(f"tok{g}x{i}" for i in range(12))
        pid = f"p{g}"
        passages.append(Passage(pid, text))
        for i in range(10):
            answer = f"tok{g}x{i}"
            pairs.append(
                GeneratedPair(pid, f"question {i}", answer, (-0.1 * (i + 1),), (-0.5,),
                              True, text.index(answer), i)
            )
    corpus = Corpus(tuple(passages))
    corpus_path = tmp_path / "passages.json"
    write_corpus_squad(corpus, corpus_path)
    pairs_path = tmp_path / "pairs.jsonl"
    write_pairs_jsonl(pairs, pairs_path)
    return corpus_path, pairs_path, pairs


def test_filter_none_is_passthrough(tmp_path):
    corpus_path, pairs_path, pairs = filter_fixture(tmp_path)
    out = tmp_path / "out"
    assert run_cli("filter", "--pairs", pairs_path, "--passages", corpus_path,
                   "--strategy", "none", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["filter_report"]["input_count"] == report["filter_report"]["kept_count"] == 20
    kept = (out / "pairs_kept.jsonl").read_text().strip().splitlines()
    assert len(kept) == 20


def test_filter_lm_keeps_half_of_groups_of_ten(tmp_path):
    corpus_path, pairs_path, _pairs = filter_fixture(tmp_path)
    out = tmp_path / "out"
    assert run_cli("filter", "--pairs", pairs_path, "--passages", corpus_path,
                   "--strategy", "lm", "--keep-m", 5, "--mode", "qagen", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["filter_report"]["kept_count"] == 10  # exactly half
    loaded = load_squad(out / "filtered.json")
    # the five highest-likelihood answers per group survive
    assert sorted(ex.answer_text for ex in loaded.examples) == sorted(
        f"tok{g}x{i}" for g in range(2) for i in range(5)
    )


def test_filter_roundtrip_with_lexical_oracle(tmp_path):
    corpus_path, pairs_path, pairs = filter_fixture(tmp_path)
    out = tmp_path / "out"
    assert run_cli("filter", "--pairs", pairs_path, "--passages", corpus_path,
                   "--strategy", "roundtrip", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    fr = report["filter_report"]
    assert fr["input_count"] == 20
    assert fr["kept_count"] + sum(fr["drops"].values()) == 20


def test_filter_unknown_strategy_is_usage_error(tmp_path, capsys):
    corpus_path, pairs_path, _ = filter_fixture(tmp_path)
    code = run_cli("filter", "--pairs", pairs_path, "--passages", corpus_path,
                   "--config", config_file(tmp_path, filter_strategy="fancy"),
                   "--out", tmp_path / "out")
    assert code == 2
    assert "fancy" in capsys.readouterr().err


# --- train-lm ---


def test_train_lm_memorizes_and_checkpoint_loads(tmp_path):
    corpus_path = labeled_corpus_file(tmp_path, n=20)
    out = tmp_path / "out"
    cfg = config_file(
        tmp_path, epochs=150, learning_rate=0.01, batch_size=8, vocab_size=60,
        dim=32, layers=1, heads=2, max_context_len=32, max_target_len=16, mode="qagen",
    )
    assert run_cli("train-lm", "--config", cfg, "--corpus", corpus_path,
                   "--out", out, "--seed", 5) == 0
    trace = json.loads((out / "loss_trace.json").read_text())["nll_per_token"]
    assert len(trace) == 150
    assert trace[-1] < 0.1
    lm = load_checkpoint(out / "checkpoint.json")
    gold = load_squad(corpus_path)
    hits = 0
    for ex in gold.examples:
        passage = gold.passage_by_id(ex.passage_id)
        ctx = tokenize(passage.text, lm.vocab)
        target = tokenize(ex.question, lm.vocab) + [SEP] + tokenize(ex.answer_text, lm.vocab) + [EOS]
        dec = greedy_decode(lm, ctx, max_len=16)
        hits += list(dec.ids) == target
    assert hits >= 18  # >= 90% of the memorized targets
    manifest = json.loads((out / "manifest-train-lm.json").read_text())
    assert manifest["stages"][-2]["counts"]["final_nll_per_token"] < 0.1


# --- evaluate ---


def test_evaluate_gold_predictions_scores_hundred(tmp_path):
    corpus_path = labeled_corpus_file(tmp_path, n=6)
    gold = load_squad(corpus_path)
    predictions = {ex.qid: ex.answer_text for ex in gold.examples}
    pred_path = tmp_path / "preds.json"
    pred_path.write_text(json.dumps(predictions))
    out = tmp_path / "out"
    assert run_cli("evaluate", "--predictions", pred_path, "--gold", corpus_path, "--out", out) == 0
    payload = json.loads((out / "eval.json").read_text())
    assert payload == {"em": "100.00", "f1": "100.00", "count": 6}


def test_evaluate_missing_prediction_fails_stage(tmp_path, capsys):
    corpus_path = labeled_corpus_file(tmp_path, n=3)
    pred_path = tmp_path / "preds.json"
    pred_path.write_text(json.dumps({"qa0": "aa"}))
    code = run_cli("evaluate", "--predictions", pred_path, "--gold", corpus_path,
                   "--out", tmp_path / "out")
    assert code == 1
    assert "stage 'evaluate' failed" in capsys.readouterr().err


# --- analyze ---


def test_analyze_monotone_fixture_non_increasing(tmp_path):
    # high-likelihood pairs agree with the lexical oracle; low-likelihood ones do not
    passages = []
    pairs = []
    for i in range(8):
        text = f"alpha{i} bravo{i} charlie{i} delta{i}"
        pid = f"p{i}"
        passages.append(Passage(pid, text))
        good = i < 4
        question = f"alpha{i} bravo{i} charlie{i}"
        # the oracle's best window after the question region is delta{i}
        answer = f"delta{i}" if good else f"alpha{i}"
        score = -0.1 * (i + 1) if good else -10.0 - i
        pairs.append(GeneratedPair(pid, question, answer, (score,), (-0.5,), True,
                                   text.index(answer), 0))
    corpus_path = tmp_path / "passages.json"
    write_corpus_squad(Corpus(tuple(passages)), corpus_path)
    pairs_path = tmp_path / "pairs.jsonl"
    write_pairs_jsonl(pairs, pairs_path)
    out = tmp_path / "out"
    assert run_cli("analyze", "--pairs", pairs_path, "--passages", corpus_path,
                   "--mode", "qagen", "--config", config_file(tmp_path, bucket_size=2),
                   "--out", out) == 0
    lines = (out / "buckets.csv").read_text().splitlines()
    assert lines[0] == "bucket_index,mean_score,mean_f1,size"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 4
    f1s = [float(r[2]) for r in rows]
    assert all(later <= earlier for earlier, later in zip(f1s, f1s[1:]))
    assert f1s[0] == 1.0 and f1s[-1] == 0.0
    assert sum(int(r[3]) for r in rows) == 8


# --- mix ---


def test_mix_blends_corpora(tmp_path):
    synthetic = labeled_corpus_file(tmp_path, n=3, name="syn.json")
    supervised = labeled_corpus_file(tmp_path, n=2, name="sup.json")
    out = tmp_path / "out"
    assert run_cli("mix", "--synthetic", synthetic, "--supervised", supervised,
                   "--out", out, "--seed", 4) == 0
    mixed = load_squad(out / "mixed.json")
    assert len(mixed.examples) == 5


# --- config and entry points ---


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = config_file(tmp_path, not_a_real_knob=1)
    code = run_cli("generate", "--config", cfg, "--out", tmp_path / "out")
    assert code == 2
    err = capsys.readouterr().err
    assert "usage error" in err and "not_a_real_knob" in err


def test_config_env_var_default(tmp_path, monkeypatch, capsys):
    cfg = config_file(tmp_path, bogus_key=True)
    monkeypatch.setenv("SYNTHQA_CONFIG", str(cfg))
    code = run_cli("evaluate", "--out", tmp_path / "out")
    assert code == 2
    assert "bogus_key" in capsys.readouterr().err


def test_keep_m_warning_when_exceeding_n_samples(tmp_path, caplog):
    with caplog.at_level("WARNING"):
        PipelineConfig.from_sources(None, {"keep_m": 9, "n_samples": 4})
    assert any("keep_m" in rec.message for rec in caplog.records)


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "synthqa", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "synthqa" in proc.stdout
