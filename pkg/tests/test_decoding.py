"""Decoding tests: hand-derived truncation fixtures, Monte-Carlo checks of the
hybrid sampler, and beam search against an exhaustive-enumeration oracle."""

import math

import numpy as np
import pytest

from synthqa.decoding import (
    DecodeConfig,
    DecodeStrategy,
    beam_search,
    greedy_decode,
    nucleus_truncate,
    sample_sequence,
    topk_truncate,
    truncate_for_sampling,
)
from synthqa.lm import ScriptedLM, delta_distribution, sequence_logprob
from synthqa.vocab import EOS, SPECIAL_TOKENS, Vocabulary

from conftest import make_word_vocab


def pad_to_vocab(head: list[float], size: int) -> np.ndarray:
    out = np.zeros(size)
    out[: len(head)] = head
    return out


def brute_force_topk(probs: np.ndarray, k: int) -> np.ndarray:
    """Independent oracle: full sort with the stated (prob desc, id asc) tie rule."""
    ranked = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    out = np.zeros_like(probs)
    for i in ranked[:k]:
        out[i] = probs[i]
    return out / out.sum()


def exhaustive_argmax(lm, context, max_len):
    """Enumerate every sequence (terminated by EOS or max_len) and return the
    argmax by (total logprob desc, ids lexicographic asc)."""
    state = lm.encode(context)
    best = None

    def walk(prefix, logp):
        nonlocal best
        if prefix and (prefix[-1] == EOS or len(prefix) == max_len):
            key = (-logp, tuple(prefix))
            if best is None or key < best:
                best = key
            return
        dist = lm.next_distribution(state, prefix)
        for tok in range(len(dist)):
            if dist[tok] > 0:
                walk(prefix + [tok], logp + math.log(float(dist[tok])))

    walk([], 0.0)
    return list(best[1]), -best[0]


def random_scripted(alphabet_size: int, max_len: int, rng) -> ScriptedLM:
    """Fully scripted model over an effective alphabet of alphabet_size tokens
    (EOS always among them): a random distribution for every reachable prefix."""
    vocab = Vocabulary(SPECIAL_TOKENS)
    lm = ScriptedLM(vocab)
    others = [t for t in range(len(vocab)) if t != EOS]
    support = [EOS] + list(rng.choice(others, size=alphabet_size - 1, replace=False))
    all_prefixes = [[]]
    frontier = [[]]
    for _ in range(max_len - 1):
        frontier = [p + [t] for p in frontier for t in support]
        all_prefixes += frontier
    for prefix in all_prefixes:
        probs = np.zeros(len(vocab))
        probs[support] = rng.dirichlet(np.ones(alphabet_size) * 0.5)
        lm.add([], prefix, probs)
    return lm


# --- top-k truncation ---


def test_topk_hand_renormalization():
    probs = pad_to_vocab([0.5, 0.3, 0.15, 0.05], 4)
    out = topk_truncate(probs, 2)
    assert out == pytest.approx([0.625, 0.375, 0.0, 0.0], abs=1e-12)


def test_topk_full_vocab_is_identity():
    probs = pad_to_vocab([0.5, 0.3, 0.15, 0.05], 4)
    assert topk_truncate(probs, 4) == pytest.approx(list(probs), abs=1e-12)


def test_topk_tie_at_rank_k_keeps_lower_id():
    probs = np.array([0.4, 0.2, 0.2, 0.2])
    out = topk_truncate(probs, 2)
    oracle = brute_force_topk(probs, 2)
    assert np.allclose(out, oracle, atol=1e-12)
    assert out[1] > 0 and out[2] == 0 and out[3] == 0


def test_topk_fuzzed_against_sort_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        size = int(rng.integers(2, 12))
        probs = rng.dirichlet(np.ones(size))
        # quantize to force ties
        probs = np.round(probs, 2)
        if probs.sum() == 0:
            continue
        probs = probs / probs.sum()
        k = int(rng.integers(1, size + 1))
        assert np.allclose(topk_truncate(probs, k), brute_force_topk(probs, k), atol=1e-12)


def test_topk_beyond_support_returns_full_support():
    probs = np.array([0.7, 0.3, 0.0, 0.0])
    out = topk_truncate(probs, 3)
    assert out == pytest.approx([0.7, 0.3, 0.0, 0.0], abs=1e-12)


# --- nucleus truncation ---


def test_nucleus_crossing_token_included():
    # cumulative 0.625 < 0.95, so the crossing token is included: both kept
    probs = np.array([0.625, 0.375])
    assert nucleus_truncate(probs, 0.95) == pytest.approx([0.625, 0.375], abs=1e-12)


def test_nucleus_single_token_distribution_unchanged():
    probs = np.array([0.0, 1.0, 0.0])
    for p in (0.01, 0.5, 1.0):
        assert nucleus_truncate(probs, p) == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)


def test_nucleus_full_mass_identity():
    rng = np.random.default_rng(9)
    for _ in range(50):
        probs = rng.dirichlet(np.ones(int(rng.integers(2, 10))))
        assert np.abs(nucleus_truncate(probs, 1.0) - probs).max() <= 1e-12


def test_nucleus_cumulative_by_hand():
    # sorted mass 0.5, 0.8, 0.95 -> three tokens reach 0.95, fourth excluded
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    expected = [0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0]
    assert nucleus_truncate(probs, 0.95) == pytest.approx(expected, abs=1e-12)


def test_composition_order_topk_then_nucleus():
    rng = np.random.default_rng(11)
    for _ in range(100):
        size = int(rng.integers(3, 15))
        probs = rng.dirichlet(np.ones(size) * 0.4)
        cfg = DecodeConfig(k=int(rng.integers(1, size + 1)), p=float(rng.uniform(0.2, 1.0)))
        topped = topk_truncate(probs, cfg.k)
        combined = truncate_for_sampling(probs, cfg)
        assert set(np.nonzero(combined)[0]) <= set(np.nonzero(topped)[0])
        assert combined.min() >= 0 and abs(combined.sum() - 1) <= 1e-9


def test_nucleus_on_original_flag_keeps_all_topk_when_mass_short():
    # top-2 mass is 0.7 < p=0.9: measured on original probs, both survivors stay
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    cfg = DecodeConfig(k=2, p=0.9, nucleus_on_original=True)
    out = truncate_for_sampling(probs, cfg)
    assert out == pytest.approx([0.4 / 0.7, 0.3 / 0.7, 0.0, 0.0], abs=1e-12)
    # measured on the renormalized top-k distribution, 0.4/0.7 < 0.9 <= 1.0: also both
    cfg2 = DecodeConfig(k=2, p=0.9)
    assert truncate_for_sampling(probs, cfg2) == pytest.approx([0.4 / 0.7, 0.3 / 0.7, 0, 0], abs=1e-12)
    # but at p=0.55 the renormalized measure keeps one token, the original measure keeps both
    assert truncate_for_sampling(probs, DecodeConfig(k=2, p=0.55)) == pytest.approx([1.0, 0, 0, 0])
    assert truncate_for_sampling(probs, DecodeConfig(k=2, p=0.55, nucleus_on_original=True)) == pytest.approx(
        [0.4 / 0.7, 0.3 / 0.7, 0, 0], abs=1e-12
    )


# --- sampling ---


def one_step_lm(head: list[float]) -> ScriptedLM:
    vocab = Vocabulary(SPECIAL_TOKENS)
    lm = ScriptedLM(vocab)
    lm.add([], [], pad_to_vocab(head, len(vocab)))
    return lm


def test_sample_certain_path_ignores_seed():
    vocab = make_word_vocab(4)
    lm = ScriptedLM(vocab)
    lm.script_path([6], [7, 8, EOS])
    cfg = DecodeConfig(max_len=8)
    for seed in (0, 1, 99):
        dec = sample_sequence(lm, [6], cfg, np.random.default_rng(seed))
        assert list(dec.ids) == [7, 8, EOS]
        assert dec.step_logprobs == (0.0, 0.0, 0.0)


def test_sample_empirical_frequencies_match_truncated_distribution():
    # hand-derived: nucleus keeps mass {0.5, 0.3, 0.15}, renormalized by 0.95
    lm = one_step_lm([0.5, 0.3, 0.15, 0.05, 0.0, 0.0])
    cfg = DecodeConfig(k=20, p=0.95, max_len=1)
    expected = {0: 0.5 / 0.95, 1: 0.3 / 0.95, 2: 0.15 / 0.95}
    rng = np.random.default_rng(12345)
    draws = 100_000
    counts = np.zeros(6)
    for _ in range(draws):
        dec = sample_sequence(lm, [], cfg, rng)
        counts[dec.ids[0]] += 1
    freqs = counts / draws
    tv = 0.5 * sum(abs(freqs[t] - expected.get(t, 0.0)) for t in range(6))
    assert tv < 0.01
    assert counts[3] == 0  # excluded by the nucleus
    assert counts[4] == 0 and counts[5] == 0  # never had mass


def test_sample_records_untruncated_logprobs():
    lm = one_step_lm([0.5, 0.3, 0.15, 0.05, 0.0, 0.0])
    cfg = DecodeConfig(k=2, p=1.0, max_len=1)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        dec = sample_sequence(lm, [], cfg, rng)
        tok = dec.ids[0]
        seen.add(tok)
        # the model's own probability, not the renormalized 0.625/0.375
        assert dec.step_logprobs[0] == pytest.approx(math.log([0.5, 0.3][tok]), abs=1e-12)
    assert seen == {0, 1}


def test_sample_zero_mass_tokens_never_emitted_fuzz():
    rng = np.random.default_rng(77)
    vocab = make_word_vocab(6)
    n = len(vocab)
    for _ in range(30):
        lm = ScriptedLM(vocab)
        support = rng.choice(n, size=int(rng.integers(1, 5)), replace=False)
        probs = np.zeros(n)
        probs[support] = rng.dirichlet(np.ones(len(support)))
        lm.add([], [], probs)
        cfg = DecodeConfig(k=int(rng.integers(1, 8)), p=float(rng.uniform(0.3, 1.0)), max_len=1)
        allowed = set(np.nonzero(truncate_for_sampling(probs, cfg))[0])
        for _ in range(300):
            dec = sample_sequence(lm, [], cfg, rng)
            assert dec.ids[0] in allowed


def test_sample_determinism_under_seed():
    vocab = make_word_vocab(6)
    lm = ScriptedLM(vocab)  # uniform fallback everywhere
    cfg = DecodeConfig(max_len=6, k=5, p=0.9)
    a = sample_sequence(lm, [6], cfg, np.random.default_rng(123))
    b = sample_sequence(lm, [6], cfg, np.random.default_rng(123))
    assert a == b


def test_sampled_logprobs_reverify_against_sequence_logprob():
    rng = np.random.default_rng(21)
    lm = random_scripted(6, 4, rng)
    cfg = DecodeConfig(max_len=4, k=4, p=0.9)
    for seed in range(20):
        dec = sample_sequence(lm, [], cfg, np.random.default_rng(seed))
        again = sequence_logprob(lm, [], list(dec.ids))
        assert list(dec.step_logprobs) == again  # bit-for-bit


# --- greedy ---


def test_greedy_follows_modal_path():
    vocab = make_word_vocab(4)
    lm = ScriptedLM(vocab)
    lm.script_path([6], [8, 7, EOS])
    dec = greedy_decode(lm, [6], max_len=10)
    assert list(dec.ids) == [8, 7, EOS]


def test_greedy_max_len_one():
    lm = one_step_lm([1.0])
    dec = greedy_decode(lm, [], max_len=1)
    assert len(dec.ids) == 1


def test_greedy_equals_beam_width_one_fuzz():
    rng = np.random.default_rng(31)
    for _ in range(100):
        vocab_size = int(rng.integers(3, 7))
        max_len = int(rng.integers(1, 5))
        lm = random_scripted(vocab_size, max_len, rng)
        g = greedy_decode(lm, [], max_len)
        b = beam_search(lm, [], width=1, max_len=max_len)
        assert len(b) == 1
        assert list(b[0].ids) == list(g.ids)
        assert b[0].step_logprobs == g.step_logprobs


# --- beam search ---


def test_beam_exhaustive_oracle_100_fixtures():
    rng = np.random.default_rng(41)
    for _ in range(100):
        vocab_size = int(rng.integers(3, 7))  # |V| <= 6
        max_len = int(rng.integers(2, 5))  # <= 4
        lm = random_scripted(vocab_size, max_len, rng)
        width = vocab_size**max_len
        hyps = beam_search(lm, [], width=width, max_len=max_len)
        expected_ids, expected_logp = exhaustive_argmax(lm, [], max_len)
        assert list(hyps[0].ids) == expected_ids
        assert hyps[0].total_logprob == pytest.approx(expected_logp, rel=1e-9)


def test_beam_equal_probability_paths_lexicographic():
    vocab = Vocabulary(SPECIAL_TOKENS)
    lm = ScriptedLM(vocab)
    n = len(vocab)
    step0 = np.zeros(n)
    step0[4] = 0.5
    step0[5] = 0.5
    lm.add([], [], step0)
    lm.add([], [4], delta_distribution(n, EOS))
    lm.add([], [5], delta_distribution(n, EOS))
    hyps = beam_search(lm, [], width=4, max_len=3)
    assert [list(h.ids) for h in hyps] == [[4, EOS], [5, EOS]]


def test_beam_retires_eos_hypotheses():
    vocab = make_word_vocab(4)
    lm = ScriptedLM(vocab)
    n = len(vocab)
    step0 = np.zeros(n)
    step0[EOS] = 0.6
    step0[6] = 0.4
    lm.add([], [], step0)
    lm.add([], [6], delta_distribution(n, EOS))
    hyps = beam_search(lm, [], width=2, max_len=5)
    assert [list(h.ids) for h in hyps] == [[EOS], [6, EOS]]
    # the retired [EOS] hypothesis was never extended
    assert all(len(h.ids) <= 2 for h in hyps)


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(k=0)
    with pytest.raises(ValueError):
        DecodeConfig(p=0.0)
    with pytest.raises(ValueError):
        DecodeConfig(beam_width=0)
    with pytest.raises(ValueError):
        DecodeConfig(max_len=0)
    assert DecodeConfig(strategy="beam").strategy is DecodeStrategy.BEAM
