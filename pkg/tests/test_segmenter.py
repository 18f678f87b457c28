import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from drda.bpe import UNK_ID, train_bpe, vocab_at
from drda.errors import ConfigError, DomainError
from drda.segmenter import (
    TokenSequence,
    UnigramModel,
    detokenize,
    segment_dropout,
    segment_greedy,
    segment_multi,
    unigram_logprob,
    unigram_sample,
    unigram_viterbi,
)


def test_greedy_full(toy_model, toy_full):
    assert segment_greedy("abc", toy_model, toy_full).tokens == ("▁abc",)


def test_greedy_truncated(toy_model, toy_trunc):
    seq = segment_greedy("abc", toy_model, toy_trunc)
    assert seq.tokens == ("▁ab", "c")
    assert seq.vocab_size == toy_trunc


def test_greedy_empty(toy_model, toy_full):
    assert segment_greedy("", toy_model, toy_full).tokens == ()


def test_greedy_ids_match_vocab(toy_model, toy_full):
    v = vocab_at(toy_model, toy_full)
    seq = segment_greedy("abc ab", toy_model, toy_full)
    assert [v.tokens[i] for i in seq.ids] == list(seq.tokens)


def test_unknown_character_is_unk(toy_model, toy_full):
    seq = segment_greedy("axb", toy_model, toy_full)
    assert UNK_ID in seq.ids
    assert seq.has_unk


def test_multi(toy_model, toy_full, toy_trunc):
    out = segment_multi("abc", toy_model, toy_full, [toy_trunc])
    assert [s.tokens for s in out] == [("▁abc",), ("▁ab", "c")]
    assert len(segment_multi("abc", toy_model, toy_full, [])) == 1
    same = segment_multi("abc", toy_model, toy_trunc, [toy_trunc])
    assert same[0] == same[1]


def test_detokenize_rules():
    assert detokenize(["▁ab", "c"]) == "abc"
    assert detokenize(["▁a", "b", "▁c"]) == "ab c"
    assert detokenize([]) == ""


@pytest.mark.parametrize("s", ["a", "a b", " a", "a ", "a  b", "  ", "\tab c\t"])
def test_roundtrip_whitespace_edge_cases(s):
    model = train_bpe([["a b \tab c\t"]], 5)
    for size in range(model.n_fixed, model.max_size + 1):
        assert detokenize(segment_greedy(s, model, size)) == s


def test_dropout_zero_is_greedy(bpe_10k, corpus_10k):
    for s in corpus_10k[:200]:
        assert segment_dropout(s, bpe_10k, 2000, 0.0, 1) == segment_greedy(s, bpe_10k, 2000)


def test_dropout_one_is_base(toy_model, toy_full):
    assert segment_dropout("abc ab", toy_model, toy_full, 1.0, 0).tokens == ("▁", "a", "b", "c", "▁", "a", "b")


def test_dropout_reversible_and_deterministic(bpe_10k, corpus_10k):
    for i, s in enumerate(corpus_10k[:200]):
        seq = segment_dropout(s, bpe_10k, 4000, 0.1, i)
        assert detokenize(seq) == s
        assert seq == segment_dropout(s, bpe_10k, 4000, 0.1, i)


def test_dropout_rate_matches_survival_product(toy_model, toy_full):
    # "abc" needs three merge applications in sequence, each surviving with prob 0.9.
    expected = 0.9 ** 3
    greedy = segment_greedy("abc", toy_model, toy_full)
    rng = np.random.default_rng(0)
    hits = sum(segment_dropout("abc", toy_model, toy_full, 0.1, rng) == greedy for _ in range(10_000))
    assert abs(hits / 10_000 - expected) <= 0.03


def test_dropout_bad_probability(toy_model, toy_full):
    with pytest.raises(ConfigError):
        segment_dropout("abc", toy_model, toy_full, -0.1, 0)


def test_granularity_monotone_and_nested(bpe_10k, corpus_10k):
    sizes = [500, 1000, 2000, 4000]
    for s in corpus_10k[:300]:
        segs = [segment_greedy(s, bpe_10k, q) for q in sizes]
        for fine, coarse in zip(segs, segs[1:]):
            assert len(fine) >= len(coarse)
            # each coarse token is a concatenation of consecutive fine tokens
            i = 0
            for tok in coarse.tokens:
                acc = ""
                while acc != tok:
                    acc += fine.tokens[i]
                    i += 1
                    assert tok.startswith(acc)
            assert i == len(fine.tokens)


letters = st.characters(categories=["Lu", "Ll", "Lo", "Lm"])
words = st.text(letters, min_size=1, max_size=8)
texts = st.lists(words, min_size=1, max_size=6).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(texts, min_size=1, max_size=8), st.integers(0, 30))
def test_roundtrip_random_unicode(corpus, n_merges):
    model = train_bpe([corpus], n_merges)
    for s in corpus:
        for size in {model.n_fixed, (model.n_fixed + model.max_size) // 2, model.max_size}:
            seq = segment_greedy(s, model, size)
            assert not seq.has_unk
            assert detokenize(seq) == s


# --- unigram harness -------------------------------------------------------

def _um(probs):
    return UnigramModel({t: math.log(p) for t, p in probs.items()})


def test_logprob_single():
    um = _um({"x": 0.5, "y": 0.5})
    assert unigram_logprob(["x"], um) == pytest.approx(math.log(0.5))


def test_logprob_two_terms():
    um = _um({"x": 0.3, "y": 0.2, "z": 0.5})
    assert unigram_logprob(["x", "y"], um) == pytest.approx(-2.8134, abs=1e-4)


def test_logprob_empty_and_domain():
    um = _um({"x": 1.0})
    assert unigram_logprob([], um) == 0.0
    with pytest.raises(DomainError):
        unigram_logprob(["q"], um)


def test_model_must_normalise():
    with pytest.raises(DomainError):
        _um({"x": 0.5, "y": 0.4})


def test_viterbi_prefers_whole():
    um = _um({"ab": 0.5, "a": 0.3, "b": 0.2})
    assert unigram_viterbi("ab", um).tokens == ("ab",)


def test_viterbi_single_char():
    assert unigram_viterbi("z", _um({"z": 1.0})).tokens == ("z",)


def test_viterbi_tie_prefers_fewer_tokens():
    # p(ab) = p(a) * p(b) = 0.06; "c" only absorbs the remaining mass
    um = _um({"ab": 0.06, "a": 0.3, "b": 0.2, "c": 0.44})
    assert unigram_viterbi("ab", um).tokens == ("ab",)


def test_viterbi_tie_leftmost_longest():
    # [aa, a] and [a, aa] tie on score and length; the longer first token wins
    um = _um({"a": 0.5, "aa": 0.5})
    assert unigram_viterbi("aaa", um).tokens == ("aa", "a")


def test_viterbi_uncoverable():
    with pytest.raises(DomainError):
        unigram_viterbi("ab", _um({"a": 1.0}))


def test_sample_unique_segmentation():
    assert unigram_sample("ab", _um({"a": 0.5, "b": 0.5}), 3).tokens == ("a", "b")


def test_sample_frequency_matches_enumeration():
    um = _um({"ab": 0.5, "a": 0.3, "b": 0.2})
    # the only two segmentations are [ab] and [a, b]
    p_whole = math.exp(um.log_prob["ab"])
    p_split = math.exp(um.log_prob["a"] + um.log_prob["b"])
    expected = p_whole / (p_whole + p_split)
    rng = np.random.default_rng(5)
    hits = sum(unigram_sample("ab", um, rng).tokens == ("ab",) for _ in range(10_000))
    assert abs(hits / 10_000 - expected) <= 0.03
    assert expected == pytest.approx(0.5 / 0.56, abs=2e-3)


def test_sample_deterministic_per_seed():
    um = _um({" ": 0.1, "ab": 0.3, "a": 0.3, "b": 0.3})
    assert unigram_sample("ab ab ab", um, 9) == unigram_sample("ab ab ab", um, 9)


def test_from_bpe_covers_all_characters(bpe_10k, corpus_10k):
    um = UnigramModel.from_bpe(corpus_10k[:500], bpe_10k, 2000)
    for s in corpus_10k[500:600]:
        seq = unigram_viterbi(s, um)
        assert detokenize(seq) == s


SEVEN = {"▁": 0.1, "▁a": 0.1, "ab": 0.2, "a": 0.2, "b": 0.15, "ba": 0.1, "▁ab": 0.15}


@settings(max_examples=100, deadline=None)
@given(st.text("ab ", min_size=1, max_size=10), st.integers(0, 2**31))
def test_viterbi_dominates_samples(s, seed):
    assume(s.strip())
    um = UnigramModel({t: math.log(p) for t, p in SEVEN.items()}, marked=True)
    assert unigram_logprob(unigram_viterbi(s, um), um) >= unigram_logprob(unigram_sample(s, um, seed), um)


def test_viterbi_is_argmax_by_enumeration():
    um = UnigramModel({t: math.log(p) for t, p in SEVEN.items()}, marked=True)
    text = "▁abab"

    def all_segs(t):
        if not t:
            yield []
            return
        for j in range(1, len(t) + 1):
            if t[:j] in um.log_prob:
                for rest in all_segs(t[j:]):
                    yield [t[:j], *rest]

    best = max(unigram_logprob(seg, um) for seg in all_segs(text))
    assert unigram_logprob(unigram_viterbi("abab", um), um) == pytest.approx(best, abs=1e-12)


def test_token_sequence_equality_ignores_strings():
    assert TokenSequence((1, 2), ("a", "b"), 9) == TokenSequence((1, 2), None, 9)
